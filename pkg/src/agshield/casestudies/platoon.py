"""Car platoon with adaptive cruise controls.

Cars are numbered from the back: car 0 is rearmost, car n-1 is driven by
the environment. Agent i controls car i and observes (v_i, v_{i+1}, d_i)
where d_i is the gap to the car ahead. Velocities live on a step-2 integer
grid and accelerations are {-2, 0, 2} per 1-second decision period; gaps
update by the trapezoid rule, which keeps them integral.

Crashing (gap 0) damages the pair: both cars are forced to brake to a
standstill and the gap stays 0. A gap at d_max is an absorbing too-far
marker. Both conditions are unsafe; the per-agent property is
0 < d_i < d_max.
"""

from dataclasses import dataclass, replace

import numpy as np

from .. import kernels
from ..core import ActionSpace, Lts, StateSpace, VarDomain
from ..errors import TooLarge
from ..kernels import maybe_jit, sm64_uniform, uniform_allowed, argmin_allowed
from ..projection import NAgentSystem, Projection
from ..synthesis import ORACLE_STATE_GUARD

ACCELERATIONS = (-2, 0, 2)
ACTION_LABELS = ("-2", "0", "2")


@dataclass(frozen=True)
class PlatoonParams:
    n_cars: int = 10
    v_min: int = -10
    v_max: int = 20
    d_max: int = 200
    accelerations: tuple = ACCELERATIONS
    period: float = 1.0
    episode_len: int = 100
    init_gap: int = 10
    init_speed: int = 0

    def __post_init__(self):
        if self.n_cars < 2:
            raise ValueError("a platoon needs at least 2 cars")
        if self.v_min % 2 or self.v_max % 2 or self.v_min >= self.v_max:
            raise ValueError("velocity bounds must be even with v_min < v_max")
        if self.v_min > 0 or self.v_max < 0:
            raise ValueError("the velocity grid must contain 0 (standstill)")
        if tuple(self.accelerations) != ACCELERATIONS:
            raise ValueError("dynamics support accelerations (-2, 0, 2) only")
        if self.period != 1.0:
            raise ValueError("dynamics support a 1-second period only")
        if self.d_max <= 1:
            raise ValueError("d_max must exceed 1")
        if not (0 < self.init_gap < self.d_max):
            raise ValueError("initial gap must satisfy 0 < gap < d_max")
        if self.init_speed % 2 or not (self.v_min <= self.init_speed <= self.v_max):
            raise ValueError("initial speed must lie on the velocity grid")

    @property
    def nv(self):
        return (self.v_max - self.v_min) // 2 + 1

    @property
    def zero_idx(self):
        return (0 - self.v_min) // 2

    @property
    def n_agents(self):
        return self.n_cars - 1


def step_state(params, v_idx, gaps, agent_acts, front_act):
    """One synchronous step; velocity indices and integer gaps, in index units.

    Returns (v_idx', gaps'). Acceleration arguments are action indices 0..2.
    Reference implementation: the episode kernels and the explicit builders
    must agree with it transition for transition.
    """
    n = params.n_cars
    nv = params.nv
    zi = params.zero_idx
    dmax = params.d_max
    v2 = np.empty(n, dtype=np.int64)
    for c in range(n):
        locked = (c > 0 and gaps[c - 1] == 0) or (c < n - 1 and gaps[c] == 0)
        if locked:
            v2[c] = v_idx[c] - (v_idx[c] > zi) + (v_idx[c] < zi)
        else:
            a = front_act if c == n - 1 else agent_acts[c]
            v2[c] = min(max(v_idx[c] + (a - 1), 0), nv - 1)
    g2 = np.empty(n - 1, dtype=np.int64)
    for p in range(n - 1):
        if gaps[p] == 0:
            g2[p] = 0
        elif gaps[p] == dmax:
            g2[p] = dmax
        else:
            dv = (v_idx[p + 1] + v2[p + 1]) - (v_idx[p] + v2[p])
            g2[p] = min(max(gaps[p] + dv, 0), dmax)
    return v2, g2


def front_car_weights(v_value):
    """Weighted draw over accelerations (-2, 0, 2) for the front car."""
    return (
        2.0 if v_value > 10 else 1.0,
        1.0,
        2.0 if v_value < 0 else 1.0,
    )


def front_car_policy(v_value):
    w = front_car_weights(v_value)
    tot = sum(w)
    return tuple(x / tot for x in w)


def global_space(params, names=None):
    if names is None:
        names = tuple(f"v{c + 1}" for c in range(params.n_cars)) + tuple(
            f"gap{p + 1}" for p in range(params.n_cars - 1)
        )
    dims = [
        VarDomain.int_range(names[c], params.v_min, params.v_max, 2)
        for c in range(params.n_cars)
    ]
    dims += [
        VarDomain.int_range(names[params.n_cars + p], 0, params.d_max, 1)
        for p in range(params.n_cars - 1)
    ]
    return StateSpace(tuple(dims))


def global_size(params):
    return params.nv ** params.n_cars * (params.d_max + 1) ** (params.n_cars - 1)


def _global_tables(params, names=None):
    """Vectorized explicit transition table: succ[S, A, 3] (3 front draws)."""
    space = global_space(params, names)
    n = params.n_cars
    nv = params.nv
    zi = params.zero_idx
    dmax = params.d_max
    S = space.size
    actions = ActionSpace.uniform(n - 1, ACTION_LABELS)
    A = actions.n_joint
    coords = space.coords_array(np.arange(S, dtype=np.int64))
    vidx = coords[:, :n]
    gaps = coords[:, n:]
    locked = np.zeros((S, n), dtype=bool)
    locked[:, : n - 1] |= gaps == 0
    locked[:, 1:] |= gaps == 0
    toward0 = vidx - np.sign(vidx - zi)
    strides = space.strides
    succ = np.empty((S, A, 3), dtype=np.int32)
    v2 = np.empty_like(vidx)
    for a in range(A):
        comps = [actions.component(a, ag) for ag in range(n - 1)]
        for f in range(3):
            acc = comps + [f]
            for c in range(n):
                free = np.clip(vidx[:, c] + (acc[c] - 1), 0, nv - 1)
                v2[:, c] = np.where(locked[:, c], toward0[:, c], free)
            idx = np.zeros(S, dtype=np.int64)
            for c in range(n):
                idx += v2[:, c] * strides[c]
            for p in range(n - 1):
                dv = (vidx[:, p + 1] + v2[:, p + 1]) - (vidx[:, p] + v2[:, p])
                nd = np.clip(gaps[:, p] + dv, 0, dmax)
                nd = np.where(gaps[:, p] == 0, 0, nd)
                nd = np.where(gaps[:, p] == dmax, dmax, nd)
                idx += nd * strides[n + p]
            succ[:, a, f] = idx
    return space, actions, succ


def build_global_lts(params, guard=ORACLE_STATE_GUARD, names=None):
    if global_size(params) > guard:
        raise TooLarge("global states", global_size(params), guard)
    space, actions, succ = _global_tables(params, names)
    S, A, _ = succ.shape
    offsets = np.arange(S * A + 1, dtype=np.int64) * 3
    return Lts(space, actions, offsets, succ.reshape(-1))


LOCAL_DIM_NAMES = ("v_self", "v_front", "gap")


def local_obs_space(params):
    return StateSpace((
        VarDomain.int_range("v_self", params.v_min, params.v_max, 2),
        VarDomain.int_range("v_front", params.v_min, params.v_max, 2),
        VarDomain.int_range("gap", 0, params.d_max, 1),
    ))


def build_local_game(params, rear_crash):
    """Agent-level safety game over (v_self, v_front, gap).

    The adversary drives the car ahead with any acceleration, covering both
    a shielded neighbor and the weighted front car (possibility
    abstraction). With `rear_crash`, the adversary may additionally force
    v_self to 0 at any step, modeling an unprotected rear-end collision;
    assuming the rear neighbor's guarantee removes those events.
    """
    p2 = replace(params, n_cars=2)
    space, actions, succ = _global_tables(p2, LOCAL_DIM_NAMES)
    S, A, _ = succ.shape
    if not rear_crash:
        offsets = np.arange(S * A + 1, dtype=np.int64) * 3
        return Lts(space, actions, offsets, succ.reshape(-1))

    nv = p2.nv
    zi = p2.zero_idx
    dmax = p2.d_max
    coords = space.coords_array(np.arange(S, dtype=np.int64))
    vs, vf, gap = coords[:, 0], coords[:, 1], coords[:, 2]
    normal = (gap > 0) & (gap < dmax)
    extra = np.empty((S, 3), dtype=np.int32)
    for b in range(3):
        vf2 = np.clip(vf + (b - 1), 0, nv - 1)
        nd = np.clip(gap + (vf + vf2) - (vs + zi), 0, dmax)
        idx = (zi * nv + vf2) * (dmax + 1) + nd
        extra[:, b] = np.where(normal, idx, succ[:, 0, b])
    both = np.concatenate(
        [succ, np.repeat(extra[:, None, :], A, axis=1)], axis=2
    )
    offsets = np.arange(S * A + 1, dtype=np.int64) * 6
    return Lts(space, actions, offsets, both.reshape(-1))


# ---------------------------------------------------------------------------
# Episode kernel (evaluation and tabular TD training share one loop)
# ---------------------------------------------------------------------------


def _platoon_episodes(n_cars, nv, zi, v_min, dmax, L,
                      shield_allow, tables, train_agent, q,
                      alpha, gamma, eps, seeds,
                      v0, d0, costs, unsafe, err):
    n_agents = n_cars - 1
    n_obs_d = dmax + 1
    v = np.empty(n_cars, dtype=np.int64)
    v2 = np.empty(n_cars, dtype=np.int64)
    d = np.empty(n_agents, dtype=np.int64)
    acts = np.empty(n_agents, dtype=np.int64)
    one = np.uint64(1)
    for e in range(seeds.shape[0]):
        state = seeds[e]
        for c in range(n_cars):
            v[c] = v0[c]
        for p in range(n_agents):
            d[p] = d0[p]
        for p in range(n_agents):
            if d[p] <= 0 or d[p] >= dmax:
                unsafe[e] += 1
                break
        for t in range(L):
            tr_obs = np.int64(-1)
            tr_act = np.int64(-1)
            tr_cost = 0.0
            for ag in range(n_agents):
                obs = (v[ag] * nv + v[ag + 1]) * n_obs_d + d[ag]
                mask = shield_allow[ag, obs]
                if mask == np.uint64(0):
                    err[0] = 1
                    err[1] = ag
                    err[2] = obs
                    return
                if ag == train_agent:
                    state, u = sm64_uniform(state)
                    if u < eps[e]:
                        state, a = uniform_allowed(state, mask)
                    else:
                        a = argmin_allowed(q[obs], mask, 3)
                    tr_obs = obs
                    tr_act = a
                    tr_cost = float(d[ag])
                elif tables[ag, obs] >= 0:
                    a = tables[ag, obs]
                else:
                    state, a = uniform_allowed(state, mask)
                acts[ag] = a
                costs[e, ag] += float(d[ag])
            # front car: weighted draw by its own velocity
            fv = v_min + 2 * v[n_cars - 1]
            w0 = 2.0 if fv > 10 else 1.0
            w2 = 2.0 if fv < 0 else 1.0
            state, u = sm64_uniform(state)
            target = u * (w0 + 1.0 + w2)
            if target < w0:
                f = 0
            elif target < w0 + 1.0:
                f = 1
            else:
                f = 2
            # dynamics
            for c in range(n_cars):
                locked = False
                if c > 0 and d[c - 1] == 0:
                    locked = True
                if c < n_agents and d[c] == 0:
                    locked = True
                if locked:
                    if v[c] > zi:
                        v2[c] = v[c] - 1
                    elif v[c] < zi:
                        v2[c] = v[c] + 1
                    else:
                        v2[c] = zi
                else:
                    a = f if c == n_cars - 1 else acts[c]
                    nvi = v[c] + (a - 1)
                    if nvi < 0:
                        nvi = 0
                    if nvi > nv - 1:
                        nvi = nv - 1
                    v2[c] = nvi
            step_unsafe = False
            for p in range(n_agents):
                if d[p] == 0:
                    nd = np.int64(0)
                elif d[p] == dmax:
                    nd = np.int64(dmax)
                else:
                    dv = (v[p + 1] + v2[p + 1]) - (v[p] + v2[p])
                    nd = d[p] + dv
                    if nd < 0:
                        nd = np.int64(0)
                    if nd > dmax:
                        nd = np.int64(dmax)
                d[p] = nd
                if nd <= 0 or nd >= dmax:
                    step_unsafe = True
            for c in range(n_cars):
                v[c] = v2[c]
            if step_unsafe:
                unsafe[e] += 1
            if train_agent >= 0:
                obs2 = (v[train_agent] * nv + v[train_agent + 1]) * n_obs_d \
                    + d[train_agent]
                if t == L - 1:
                    tgt = tr_cost
                else:
                    mask2 = shield_allow[train_agent, obs2]
                    if mask2 == np.uint64(0):
                        err[0] = 1
                        err[1] = train_agent
                        err[2] = obs2
                        return
                    b = argmin_allowed(q[obs2], mask2, 3)
                    tgt = tr_cost + gamma * q[obs2, b]
                q[tr_obs, tr_act] += alpha * (tgt - q[tr_obs, tr_act])


platoon_episodes = maybe_jit(_platoon_episodes)


class PlatoonModel:
    """Model factory binding the platoon to the synthesis/learning/sim APIs."""

    name = "platoon"

    def __init__(self, params=None):
        self.params = params or PlatoonParams()

    @property
    def n_agents(self):
        return self.params.n_agents

    # -- synthesis ---------------------------------------------------------

    def guarantee_order(self):
        return list(range(self.n_agents))

    def variant_key(self, i, assume):
        rear = i > 0 and not assume
        return ("platoon", "raw" if rear else "pruned")

    def local_game(self, i, assume):
        return build_local_game(self.params, rear_crash=(i > 0 and not assume))

    def obs_space(self, i):
        return local_obs_space(self.params)

    def local_action_labels(self, i):
        return ACTION_LABELS

    def local_safe_member(self, i):
        """Restricted projection of 0 < d_i < d_max onto the observation
        space: the gap is observed, so the fiber is constant in it."""
        space = local_obs_space(self.params)
        gap = space.coords_array(np.arange(space.size, dtype=np.int64))[:, 2]
        return (gap > 0) & (gap < self.params.d_max)

    # -- oracle (small instances) ------------------------------------------

    def global_nagent(self, guard=ORACLE_STATE_GUARD):
        t = build_global_lts(self.params, guard)
        n = self.params.n_cars
        prjs = [
            Projection(t.space, (ag, ag + 1, n + ag))
            for ag in range(self.n_agents)
        ]
        return NAgentSystem(t, prjs, self.declared_deps())

    def agent_prop_member(self, i, space=None):
        space = space or global_space(self.params)
        gcol = space.coords_array(np.arange(space.size, dtype=np.int64))
        gap = gcol[:, self.params.n_cars + i]
        return (gap > 0) & (gap < self.params.d_max)

    def global_safe_member(self, space=None):
        space = space or global_space(self.params)
        out = np.ones(space.size, dtype=bool)
        for i in range(self.n_agents):
            out &= self.agent_prop_member(i, space)
        return out

    # -- learning ----------------------------------------------------------

    def declared_deps(self):
        """Car i follows car i+1: agent i depends on the agent ahead."""
        return [(i, i + 1) for i in range(self.n_agents - 1)]

    def n_obs(self, i):
        return self.params.nv ** 2 * (self.params.d_max + 1)

    def n_local_actions(self, i):
        return 3

    def global_obs_count(self):
        # python int: exceeds 2**63 for the full-size platoon
        return global_size(self.params)

    def global_obs_index(self, state):
        p = self.params
        idx = 0
        for c in range(p.n_cars):
            idx = idx * p.nv + int(state[c])
        for g in range(p.n_agents):
            idx = idx * (p.d_max + 1) + int(state[p.n_cars + g])
        return idx

    def agent_cost(self, i, obs_idx, action):
        """Per-step cost: the observed gap to the car ahead."""
        return float(obs_idx % (self.params.d_max + 1))

    # -- simulation ---------------------------------------------------------

    @property
    def default_episode_len(self):
        return self.params.episode_len

    def initial_state(self):
        p = self.params
        vi = (p.init_speed - p.v_min) // 2
        return np.concatenate([
            np.full(p.n_cars, vi, dtype=np.int64),
            np.full(p.n_agents, p.init_gap, dtype=np.int64),
        ])

    def observe_index(self, i, state):
        p = self.params
        v = state[: p.n_cars]
        d = state[p.n_cars:]
        return int((v[i] * p.nv + v[i + 1]) * (p.d_max + 1) + d[i])

    def step(self, state, actions, rng):
        p = self.params
        v = state[: p.n_cars]
        d = state[p.n_cars:]
        costs = d.astype(np.float64).copy()
        fv = p.v_min + 2 * int(v[-1])
        w = front_car_weights(fv)
        f = rng.categorical(w)
        v2, g2 = step_state(p, v, d, actions, f)
        nxt = np.concatenate([v2, g2])
        return nxt, costs, self.is_safe(nxt)

    def is_safe(self, state):
        d = state[self.params.n_cars:]
        return bool(((d > 0) & (d < self.params.d_max)).all())

    # -- batched kernels -----------------------------------------------------

    def _kernel_args(self):
        p = self.params
        return p.n_cars, p.nv, p.zero_idx, p.v_min, p.d_max

    def eval_episodes(self, shield_allow, tables, seeds, length):
        """shield_allow: uint64[n_agents, n_obs]; tables: int64[n_agents, n_obs]
        (-1 entries sample uniformly over the allowed mask)."""
        n_ep = seeds.shape[0]
        costs = np.zeros((n_ep, self.n_agents), dtype=np.float64)
        unsafe = np.zeros(n_ep, dtype=np.int64)
        err = np.zeros(3, dtype=np.int64)
        q = np.zeros((1, 3), dtype=np.float64)
        eps = np.zeros(n_ep, dtype=np.float64)
        st = self.initial_state()
        platoon_episodes(*self._kernel_args(), length,
                         shield_allow, tables, -1, q, 0.0, 1.0, eps,
                         seeds, st[: self.params.n_cars],
                         st[self.params.n_cars:], costs, unsafe, err)
        return costs, unsafe, err

    def train_episodes(self, shield_allow, tables, train_agent, q,
                       alpha, gamma, eps, seeds, length):
        n_ep = seeds.shape[0]
        costs = np.zeros((n_ep, self.n_agents), dtype=np.float64)
        unsafe = np.zeros(n_ep, dtype=np.int64)
        err = np.zeros(3, dtype=np.int64)
        st = self.initial_state()
        platoon_episodes(*self._kernel_args(), length,
                         shield_allow, tables, train_agent, q,
                         alpha, gamma, eps, seeds,
                         st[: self.params.n_cars], st[self.params.n_cars:],
                         costs, unsafe, err)
        return costs, unsafe, err
