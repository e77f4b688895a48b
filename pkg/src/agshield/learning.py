"""Cascading shielded learning: dependency graphs, agent instantiation,
sandboxing, a tabular temporal-difference learner, and a centralized
baseline.

Agents train one at a time, each in a sandbox where every untrained agent
it does not depend on plays uniformly over its shield-allowed actions and
every already-trained agent plays its frozen greedy policy. Exact
instantiation and local-run enumeration are provided for explicit MDPs to
validate the construction at toy scale.
"""

import itertools
from dataclasses import dataclass
from math import prod

import numpy as np

from .core import Mdp
from .errors import (CyclicDependency, DeclarationMismatch, NoAllowedAction,
                     TooLarge)
from .kernels import Stream, argmin_allowed, episode_seed
from .projection import NAgentSystem
from .sim import allow_matrix, random_tables, sample_from_mask


@dataclass
class LearnerConfig:
    episodes: int = 3000
    alpha: float = 0.1
    gamma: float = 1.0
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.8
    episode_len: int = None
    master_seed: int = 1

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        for v in (self.eps_start, self.eps_end):
            if not 0 <= v <= 1:
                raise ValueError("epsilon must be in [0, 1]")


def epsilon_schedule(cfg):
    """Linear eps_start -> eps_end over the first eps_fraction of episodes."""
    n = cfg.episodes
    cut = int(cfg.eps_fraction * n)
    eps = np.full(n, cfg.eps_end, dtype=np.float64)
    if cut > 0:
        ramp = cfg.eps_start + (cfg.eps_end - cfg.eps_start) * (
            np.arange(cut) / cut
        )
        eps[:cut] = ramp
    return eps


# ---------------------------------------------------------------------------
# Dependency graph
# ---------------------------------------------------------------------------


@dataclass
class DependencyGraph:
    n: int
    edges: set   # (i, j): agent i depends on agent j

    def __post_init__(self):
        self.edges = {(int(i), int(j)) for i, j in self.edges}
        for i, j in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n) or i == j:
                raise ValueError(f"bad dependency edge ({i}, {j})")


def build_dependency_graph(model):
    return DependencyGraph(model.n_agents, set(model.declared_deps()))


def topological_order(g):
    """Repeatedly pick the smallest-index node without outgoing edges."""
    out_sets = {i: set() for i in range(g.n)}
    in_sets = {i: set() for i in range(g.n)}
    for i, j in g.edges:
        out_sets[i].add(j)
        in_sets[j].add(i)
    remaining = set(range(g.n))
    order = []
    while remaining:
        ready = [i for i in sorted(remaining) if not out_sets[i]]
        if not ready:
            start = min(remaining)
            cycle = [start]
            cur = start
            while True:
                cur = min(a for a in out_sets[cur] if a in remaining)
                if cur in cycle:
                    cycle = cycle[cycle.index(cur):]
                    raise CyclicDependency(cycle + [cur])
                cycle.append(cur)
        i = ready[0]
        order.append(i)
        remaining.discard(i)
        for j in in_sets[i]:
            out_sets[j].discard(i)
    return order


# ---------------------------------------------------------------------------
# Explicit-MDP instantiation, sandboxing, local-run enumeration
# ---------------------------------------------------------------------------


def uniform_policy(n_obs, n_actions, allow_row=None):
    """Uniform distribution over allowed actions (all actions if no mask)."""
    probs = np.zeros((n_obs, n_actions))
    for o in range(n_obs):
        if allow_row is None:
            acts = list(range(n_actions))
        else:
            m = int(allow_row[o])
            acts = [a for a in range(n_actions) if m >> a & 1]
            if not acts:
                acts = list(range(n_actions))
        probs[o, acts] = 1.0 / len(acts)
    return probs


def table_policy(table, n_actions):
    """One-hot policy from a greedy action table (-1 rows become uniform)."""
    n_obs = table.shape[0]
    probs = np.zeros((n_obs, n_actions))
    for o in range(n_obs):
        if table[o] >= 0:
            probs[o, table[o]] = 1.0
        else:
            probs[o, :] = 1.0 / n_actions
    return probs


def _reindex_deps(deps, removed):
    out = []
    for i, j in deps:
        if i == removed or j == removed:
            continue
        out.append((i - (i > removed), j - (j > removed)))
    return out


def instantiate(ns, i, policy_probs):
    """Marginalize agent i's action dimension under its policy."""
    m = ns.sys
    if not isinstance(m, Mdp):
        raise TypeError("instantiate needs an explicit MDP")
    S = m.n_states
    sizes = m.actions.sizes
    P = m.probs.reshape((S,) + sizes + (S,))
    obs = ns.projections[i].obs_of_states(np.arange(S, dtype=np.int64))
    pol = np.asarray(policy_probs, dtype=np.float64)[obs]       # (S, A_i)
    Pm = np.moveaxis(P, 1 + i, 1)                               # (S, A_i, ...)
    shape = (S, sizes[i]) + (1,) * (len(sizes) - 1) + (1,)
    out = (Pm * pol.reshape(shape)).sum(axis=1)
    new_actions = m.actions.without_agent(i)
    new_mdp = Mdp(m.space, new_actions, out.reshape(S, -1, S))
    new_prjs = [p for k, p in enumerate(ns.projections) if k != i]
    return NAgentSystem(new_mdp, new_prjs,
                        _reindex_deps(ns.declared_deps, i))


def sandbox(ns, i, allow_rows=None):
    """Instantiate every agent other than i with the uniform policy over
    its shield-allowed actions; returns (1-agent system, policies used).

    Removal proceeds from the highest agent index down, so each original
    agent j still sits at index j when its turn comes.
    """
    used = {}
    target = i
    current = ns
    for j in sorted(range(ns.n_agents), reverse=True):
        if j == i:
            continue
        prj = current.projections[j]
        row = None if allow_rows is None else allow_rows[j]
        pol = uniform_policy(prj.target.size,
                             len(ns.sys.actions.agents[j]), row)
        used[j] = pol
        current = instantiate(current, j, pol)
        if j < target:
            target -= 1
    return current, used


def product_joint(ns, per_agent_probs):
    """Joint policy array [S, A_joint] from per-agent observation policies."""
    m = ns.sys
    S = m.n_states
    joint = np.ones((S, m.actions.n_joint))
    idx = np.arange(S, dtype=np.int64)
    for i, probs in enumerate(per_agent_probs):
        comp = m.actions.component_array(i)
        obs = ns.projections[i].obs_of_states(idx)
        joint *= np.asarray(probs)[obs][:, comp]
    return joint


def local_run_distribution(ns, joint_probs, i, length, initial,
                           max_paths=10**6):
    """Exact probability of each length-`length` local run of agent i.

    Keys are tuples (obs0, a0, obs1, a1, ..., obsL) of agent i's
    observations and action components.
    """
    m = ns.sys
    prj = ns.projections[i]
    comp = m.actions.component_array(i)
    acc = {}
    budget = [max_paths]

    def walk(s, depth, p, key):
        if budget[0] <= 0:
            raise TooLarge("enumerated paths", max_paths + 1, max_paths)
        budget[0] -= 1
        if depth == length:
            acc[key] = acc.get(key, 0.0) + p
            return
        for a in range(m.n_actions):
            pa = joint_probs[s, a]
            if pa <= 0.0:
                continue
            idx, probs = m.succ_p(s, a)
            for t, pt in zip(idx, probs):
                walk(int(t), depth + 1, p * pa * pt,
                     key + (int(comp[a]), prj.obs_of_state(int(t))))

    walk(initial, 0, 1.0, (prj.obs_of_state(initial),))
    return acc


def _dist_equal(d1, d2, tol):
    keys = set(d1) | set(d2)
    return all(abs(d1.get(k, 0.0) - d2.get(k, 0.0)) <= tol for k in keys)


def det_policies(n_obs, n_actions):
    for assignment in itertools.product(range(n_actions), repeat=n_obs):
        yield table_policy(np.array(assignment, dtype=np.int64), n_actions)


def semantic_depends(ns, i, j, length, initial, tol=1e-12, guard=4096):
    """Exact dependency check by enumerating deterministic policy pairs.

    Local-run probabilities are multilinear in each agent's policy entries,
    so equality on all deterministic profiles extends to all policies.
    """
    m = ns.sys
    n = ns.n_agents
    count = 1
    for k in range(n):
        count *= len(m.actions.agents[k]) ** ns.projections[k].target.size
    if count > guard:
        raise TooLarge("deterministic policy profiles", count, guard)
    others = [k for k in range(n) if k != j]
    other_choices = [
        list(det_policies(ns.projections[k].target.size,
                          len(m.actions.agents[k])))
        for k in others
    ]
    j_choices = list(det_policies(ns.projections[j].target.size,
                                  len(m.actions.agents[j])))
    for profile in itertools.product(*other_choices):
        base = None
        for pj in j_choices:
            per_agent = [None] * n
            for k, pol in zip(others, profile):
                per_agent[k] = pol
            per_agent[j] = pj
            dist = local_run_distribution(
                ns, product_joint(ns, per_agent), i, length, initial
            )
            if base is None:
                base = dist
            elif not _dist_equal(base, dist, tol):
                return True
    return False


def validate_declared_deps(ns, length=4, initial=0):
    """Oracle check of the declared dependency edges on a tiny explicit MDP."""
    declared = {(int(a), int(b)) for a, b in ns.declared_deps}
    for i in range(ns.n_agents):
        for j in range(ns.n_agents):
            if i == j:
                continue
            sem = semantic_depends(ns, i, j, length, initial)
            if sem != ((i, j) in declared):
                raise DeclarationMismatch(
                    f"agent {i + 1} on agent {j + 1}: declared "
                    f"{(i, j) in declared}, semantic {sem}"
                )


# ---------------------------------------------------------------------------
# Tabular TD training
# ---------------------------------------------------------------------------


class ExplicitModel:
    """Simulation-protocol adapter over an explicit n-agent MDP bundle."""

    name = "explicit"

    def __init__(self, bundle, safe_member=None):
        self.bundle = bundle
        self.ns = bundle.ns
        self.safe_member = safe_member

    @property
    def n_agents(self):
        return self.ns.n_agents

    @property
    def default_episode_len(self):
        return self.bundle.episode_len

    def guarantee_order(self):
        return list(range(self.n_agents))

    def declared_deps(self):
        return list(self.ns.declared_deps)

    def n_obs(self, i):
        return self.ns.projections[i].target.size

    def n_local_actions(self, i):
        return len(self.ns.sys.actions.agents[i])

    def agent_cost(self, i, obs, action):
        return float(self.bundle.costs[i][obs, action])

    def initial_state(self):
        return self.bundle.initial

    def observe_index(self, i, state):
        return self.ns.projections[i].obs_of_state(state)

    def step(self, state, actions, rng):
        m = self.ns.sys
        joint = m.actions.joint_index([int(a) for a in actions])
        idx, probs = m.succ_p(int(state), joint)
        if idx.size == 0:
            raise NoAllowedAction(-1, int(state))
        k = rng.categorical(list(probs))
        nxt = int(idx[k])
        costs = np.array([
            self.bundle.costs[i][self.observe_index(i, state), int(actions[i])]
            for i in range(self.n_agents)
        ])
        return nxt, costs, self.is_safe(nxt)

    def is_safe(self, state):
        if self.safe_member is None:
            return True
        return bool(self.safe_member[state])


def greedy_table(q, allow_row):
    """Smallest-index argmin over allowed actions; -1 on empty masks."""
    n_obs, n_actions = q.shape
    shifts = np.arange(n_actions, dtype=np.uint64)
    allowed = ((allow_row[:, None] >> shifts[None, :]) & np.uint64(1)) \
        .astype(bool)
    masked = np.where(allowed, q, np.inf)
    table = masked.argmin(axis=1).astype(np.int64)
    table[~allowed.any(axis=1)] = -1
    return table


@dataclass
class TrainResult:
    q: np.ndarray
    greedy: np.ndarray
    costs: np.ndarray       # per-episode total cost of the trained agent
    unsafe: np.ndarray      # per-episode count of unsafe visited states
    seeds: np.ndarray


def _train_python(model, agent, allow, tables, q, alpha, gamma, eps, seeds,
                  length):
    n = model.n_agents
    ep_costs = np.zeros(seeds.shape[0])
    ep_unsafe = np.zeros(seeds.shape[0], dtype=np.int64)
    actions = np.zeros(n, dtype=np.int64)
    for e in range(seeds.shape[0]):
        rng = Stream(seeds[e])
        state = model.initial_state()
        if not model.is_safe(state):
            ep_unsafe[e] += 1
        for t in range(length):
            tr_obs = tr_act = -1
            for i in range(n):
                obs = model.observe_index(i, state)
                mask = allow[i, obs]
                if mask == 0:
                    raise NoAllowedAction(i, obs)
                if i == agent:
                    u = rng.uniform()
                    if u < eps[e]:
                        a = sample_from_mask(rng, mask)
                    else:
                        a = int(argmin_allowed(q[obs], mask, q.shape[1]))
                    tr_obs, tr_act = obs, a
                elif tables[i, obs] >= 0:
                    a = int(tables[i, obs])
                else:
                    a = sample_from_mask(rng, mask)
                actions[i] = a
            state, step_costs, safe = model.step(state, actions, rng)
            if not safe:
                ep_unsafe[e] += 1
            tr_cost = float(step_costs[agent])
            ep_costs[e] += tr_cost
            obs2 = model.observe_index(agent, state)
            if t == length - 1:
                tgt = tr_cost
            else:
                mask2 = allow[agent, obs2]
                if mask2 == 0:
                    raise NoAllowedAction(agent, obs2)
                b = int(argmin_allowed(q[obs2], mask2, q.shape[1]))
                tgt = tr_cost + gamma * q[obs2, b]
            q[tr_obs, tr_act] += alpha * (tgt - q[tr_obs, tr_act])
    return ep_costs, ep_unsafe


def train_agent(model, agent, allow, tables, cfg, slot=0, use_kernel=True):
    """Episodic tabular TD over shield-allowed actions only.

    Exploration is epsilon-greedy restricted to the allowed mask; the
    output policy is the smallest-index argmin per observation.
    """
    n_obs = model.n_obs(agent)
    n_act = model.n_local_actions(agent)
    q = np.zeros((n_obs, n_act))
    eps = epsilon_schedule(cfg)
    length = cfg.episode_len or model.default_episode_len
    seeds = np.array(
        [episode_seed(cfg.master_seed, slot * cfg.episodes + e)
         for e in range(cfg.episodes)],
        dtype=np.uint64,
    )
    if use_kernel and hasattr(model, "train_episodes"):
        costs, unsafe, err = model.train_episodes(
            allow, tables, agent, q, cfg.alpha, cfg.gamma, eps, seeds, length
        )
        if err[0]:
            raise NoAllowedAction(int(err[1]), int(err[2]))
        ep_costs = costs[:, agent].copy()
    else:
        ep_costs, unsafe = _train_python(
            model, agent, allow, tables, q, cfg.alpha, cfg.gamma, eps,
            seeds, length
        )
    return TrainResult(q=q, greedy=greedy_table(q, allow[agent]),
                       costs=ep_costs, unsafe=unsafe, seeds=seeds)


@dataclass
class CascadeResult:
    order: list
    tables: np.ndarray          # int64[n_agents, n_obs]
    qtables: dict               # agent -> q array
    log_rows: list              # (agent, episode, seed, total_cost, unsafe)


def cascading_learn(model, shields, cfg, use_kernel=True):
    """Train agents in topological order of the dependency graph.

    Untrained agents play uniform over their allowed mask (the sandbox);
    finished agents play their frozen greedy policy (the instantiation).
    The per-agent episode budget is cfg.episodes (the total budget split
    evenly across agents).
    """
    g = build_dependency_graph(model)
    order = topological_order(g)
    allow = allow_matrix(model, shields)
    tables = random_tables(model)
    qtables = {}
    rows = []
    for slot, agent in enumerate(order):
        res = train_agent(model, agent, allow, tables, cfg, slot, use_kernel)
        tables[agent, : model.n_obs(agent)] = res.greedy
        qtables[agent] = res.q
        for e in range(cfg.episodes):
            rows.append((agent, e, int(res.seeds[e]),
                         float(res.costs[e]), int(res.unsafe[e])))
    return CascadeResult(order=order, tables=tables, qtables=qtables,
                         log_rows=rows)


def centralized_learn(model, shields, cfg, guard=10**7):
    """Joint-action learner over the global observation under the
    distributed shield; small instances only."""
    n = model.n_agents
    n_local = [model.n_local_actions(i) for i in range(n)]
    n_joint = prod(n_local)
    n_gobs = model.global_obs_count()
    if n_gobs * n_joint > guard:
        raise TooLarge("joint Q entries", n_gobs * n_joint, guard)
    allow = allow_matrix(model, shields)
    strides = [1] * n
    for k in range(n - 2, -1, -1):
        strides[k] = strides[k + 1] * n_local[k + 1]
    comp = [
        (np.arange(n_joint) // strides[i]) % n_local[i] for i in range(n)
    ]
    q = np.zeros((n_gobs, n_joint))
    length = cfg.episode_len or model.default_episode_len
    eps = epsilon_schedule(cfg)
    ep_costs = np.zeros(cfg.episodes)
    ep_unsafe = np.zeros(cfg.episodes, dtype=np.int64)
    seeds = np.array(
        [episode_seed(cfg.master_seed, e) for e in range(cfg.episodes)],
        dtype=np.uint64,
    )

    def allowed_joint(state):
        ok = np.ones(n_joint, dtype=bool)
        for i in range(n):
            mask = int(allow[i, model.observe_index(i, state)])
            ok &= np.array([(mask >> int(c)) & 1 for c in comp[i]],
                           dtype=bool)
        return ok

    def pick(ok, values=None, rng=None, explore=False):
        idxs = np.nonzero(ok)[0]
        if explore:
            return int(idxs[int(rng.uniform() * idxs.size)])
        vals = values[idxs]
        return int(idxs[int(vals.argmin())])

    actions = np.zeros(n, dtype=np.int64)
    for e in range(cfg.episodes):
        rng = Stream(seeds[e])
        state = model.initial_state()
        if not model.is_safe(state):
            ep_unsafe[e] += 1
        for t in range(length):
            gobs = model.global_obs_index(state)
            ok = allowed_joint(state)
            if not ok.any():
                raise NoAllowedAction(-1, gobs)
            u = rng.uniform()
            if u < eps[e]:
                joint = pick(ok, rng=rng, explore=True)
            else:
                joint = pick(ok, values=q[gobs])
            for i in range(n):
                actions[i] = comp[i][joint]
            state, step_costs, safe = model.step(state, actions, rng)
            if not safe:
                ep_unsafe[e] += 1
            c = float(step_costs.sum())
            ep_costs[e] += c
            if t == length - 1:
                tgt = c
            else:
                gobs2 = model.global_obs_index(state)
                ok2 = allowed_joint(state)
                if not ok2.any():
                    raise NoAllowedAction(-1, gobs2)
                tgt = c + cfg.gamma * q[gobs2][ok2].min()
            q[gobs, joint] += cfg.alpha * (tgt - q[gobs, joint])
    return q, ep_costs, ep_unsafe


def serialize_policy(table, space, action_labels):
    """Greedy policy file: per-state decimal action index, -1 when undefined."""
    lines = ["DPOLICY v1", f"vars {space.ndim}"]
    for d in space.dims:
        if d.labels is not None:
            lines.append(f"var {d.name} enum " + " ".join(d.labels))
        else:
            lines.append(f"var {d.name} int {d.lo} {d.hi} {d.step}")
    lines.append(f"actions {len(action_labels)}")
    for a, label in enumerate(action_labels):
        lines.append(f"action {a} {label}")
    lines.append(f"states {space.size}")
    for a in table:
        lines.append(str(int(a)))
    return ("\n".join(lines) + "\n").encode("ascii")


def deserialize_policy(data):
    from .errors import FormatError
    from .core import StateSpace, VarDomain

    lines = data.decode("ascii", errors="replace").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise FormatError(pos + 1, "unexpected end of file")
        pos += 1
        return lines[pos - 1]

    if take() != "DPOLICY v1":
        raise FormatError(1, "bad magic, expected `DPOLICY v1`")
    try:
        k = int(take().split()[1])
        dims = []
        for _ in range(k):
            parts = take().split()
            if parts[2] == "int":
                dims.append(VarDomain(parts[1], int(parts[3]), int(parts[4]),
                                      int(parts[5])))
            else:
                dims.append(VarDomain.enum(parts[1], parts[3:]))
        space = StateSpace(tuple(dims))
        m = int(take().split()[1])
        labels = [take().split()[2] for _ in range(m)]
        count = int(take().split()[1])
    except (IndexError, ValueError):
        raise FormatError(pos, "malformed header") from None
    if count != space.size:
        raise FormatError(pos, f"states {count} != domain product {space.size}")
    table = np.empty(count, dtype=np.int64)
    for s in range(count):
        line = take()
        try:
            table[s] = int(line)
        except ValueError:
            raise FormatError(pos, f"bad action index `{line}`") from None
        if table[s] >= m or table[s] < -1:
            raise FormatError(pos, f"action index {line} out of range")
    return table, space, tuple(labels)


def write_training_csv(path, rows):
    lines = ["agent,episode,seed,total_cost,unsafe_steps"]
    for (agent, episode, seed, total, unsafe) in rows:
        lines.append(f"{agent + 1},{episode},{seed},{total:.6f},{unsafe}")
    data = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(data)
    return data


# ---------------------------------------------------------------------------
# Exact evaluation for toy-scale checks
# ---------------------------------------------------------------------------


def expected_costs(bundle, per_agent_probs, length):
    """Exact per-agent expected total cost of a joint product policy."""
    ns = bundle.ns
    m = ns.sys
    S = m.n_states
    joint = product_joint(ns, per_agent_probs)
    idx = np.arange(S, dtype=np.int64)
    step_cost = np.zeros((ns.n_agents, S))
    for i in range(ns.n_agents):
        comp = m.actions.component_array(i)
        obs = ns.projections[i].obs_of_states(idx)
        ci = np.asarray(bundle.costs[i])[obs][:, comp]    # (S, A_joint)
        step_cost[i] = (joint * ci).sum(axis=1)
    dist = np.zeros(S)
    dist[bundle.initial] = 1.0
    totals = np.zeros(ns.n_agents)
    for _ in range(length):
        totals += step_cost @ dist
        flow = np.einsum("s,sa,saT->T", dist, joint, m.probs)
        dist = flow
    return totals
