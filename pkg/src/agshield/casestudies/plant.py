"""Chemical production plant: ten interconnected storage units, two
consumers with periodic demand, and externally provided inflows at
periodically varying cost.

Each unit has exactly three input flows (upstream units or external
providers) it can open or close each step, and one or two outgoing arrows
it cannot close. Flow rates are uniform in [2.15, 3.15] l/s over a 0.5 s
decision period. Material flows through within a period: a unit's
availability for downstream draws is its volume plus its own inflow, so a
draw is short exactly when the supplier ends the step empty, which is the
supplier's own safety violation.

Simulation keeps real-valued volumes; synthesis plays a sound interval
abstraction on 1-liter volume bins where the adversary picks draw/no-draw
and a flow extreme per outgoing arrow.
"""

from dataclasses import dataclass, field
from math import ceil, floor

import numpy as np

from ..core import ActionSpace, Lts, StateSpace, VarDomain
from ..errors import TooLarge
from ..kernels import maybe_jit, sm64_uniform, uniform_allowed, argmin_allowed

N_UNITS = 10

# unit input slots, 0-based sources; -1 is an external provider
INPUT_SRC = np.array([
    [-1, -1, -1],   # unit 1
    [-1, -1, -1],   # unit 2
    [-1, -1, -1],   # unit 3
    [0, 1, -1],     # unit 4  <- 1, 2
    [1, 2, -1],     # unit 5  <- 2, 3
    [3, -1, -1],    # unit 6  <- 4
    [3, 4, -1],     # unit 7  <- 4, 5
    [4, -1, -1],    # unit 8  <- 5
    [5, 6, -1],     # unit 9  <- 6, 7
    [6, 7, -1],     # unit 10 <- 7, 8
], dtype=np.int64)

# number of outgoing arrows (internal edges plus consumer arrows)
OUT_DEGREE = np.array([1, 2, 1, 2, 2, 1, 2, 1, 2, 2], dtype=np.int64)

CONSUMER_OF_UNIT = {8: 0, 9: 1}   # unit 9 feeds consumer A, unit 10 feeds B

_DEFAULT_COST_1 = (0.0, 5.0, 3.0, 3.0, 3.0)
_DEFAULT_COST_10 = (9.0, 0.0, 6.0, 6.0, 6.0)


def _default_cost_tables():
    """Units 1 and 10 carry the reference price patterns; the other eight
    default to synthetic phase-shifted copies of unit 1's pattern
    (shift = unit index mod 5)."""
    tables = []
    for u in range(1, N_UNITS + 1):
        if u == 1:
            tables.append(_DEFAULT_COST_1)
        elif u == 10:
            tables.append(_DEFAULT_COST_10)
        else:
            shift = u % 5
            tables.append(tuple(
                _DEFAULT_COST_1[(sec + shift) % 5] for sec in range(5)
            ))
    return tuple(tables)


@dataclass(frozen=True)
class PlantParams:
    capacity: float = 50.0
    flow_rate_min: float = 2.15
    flow_rate_max: float = 3.15
    period: float = 0.5
    episode_len: int = 100
    init_volume: float = 25.0
    init_phase: int = 0
    demand_a: tuple = (5.0, 5.0, 3.0, 0.0, 0.0)
    demand_b: tuple = (5.0, 3.0, 3.0, 3.0, 0.0)
    cost_tables: tuple = field(default_factory=_default_cost_tables)
    action_alias: bool = False   # add a 9th no-op action label

    def __post_init__(self):
        if self.capacity != int(self.capacity) or self.capacity < 2:
            raise ValueError("capacity must be an integer number of liters >= 2")
        if not (0 < self.flow_rate_min < self.flow_rate_max):
            raise ValueError("flow rates must satisfy 0 < min < max")
        if len(self.demand_a) != 5 or len(self.demand_b) != 5:
            raise ValueError("demand tables must have 5 entries")
        if min(self.demand_a + self.demand_b) < 0:
            raise ValueError("demand must be nonnegative")
        if len(self.cost_tables) != N_UNITS:
            raise ValueError("need one cost table per unit")
        for tbl in self.cost_tables:
            if len(tbl) != 5 or min(tbl) < 0:
                raise ValueError("cost tables must be 5 nonnegative entries")
        if not (0 < self.init_volume < self.capacity):
            raise ValueError("initial volume must be strictly inside (0, capacity)")
        if not 0 <= self.init_phase < 10:
            raise ValueError("initial phase must be in 0..9")

    @property
    def flow_lo(self):
        """Per-step liters at the minimum rate."""
        return self.flow_rate_min * self.period

    @property
    def flow_hi(self):
        return self.flow_rate_max * self.period

    @property
    def n_bins(self):
        return int(self.capacity) + 1

    @property
    def n_actions(self):
        return 9 if self.action_alias else 8

    def action_labels(self):
        labels = [format(m, "03b") for m in range(8)]
        if self.action_alias:
            labels.append("noop")
        return tuple(labels)


def _open_slots(action):
    if action >= 8:      # alias of all-closed
        return []
    return [s for s in range(3) if action >> s & 1]


def obs_space(params):
    return StateSpace((
        VarDomain.int_range("phase", 0, 9, 1),
        VarDomain.int_range("volume", 0, int(params.capacity), 1),
    ))


def build_local_game(params, out_degree, n_providers, assume):
    """Sound interval abstraction of one unit on 1-liter volume bins.

    The controller opens an input subset. Opened inputs deliver a full
    per-step draw; without the upstream-nonempty assumption, inputs fed by
    other units may adversarially deliver nothing. Each outgoing arrow
    adversarially draws nothing or any in-range amount, uniformly covering
    both downstream units and consumer demand (per-arrow demand never
    exceeds the maximum flow). Successor bins are every bin reachable under
    some real-valued choice in those ranges.
    """
    cap = int(params.capacity)
    space = obs_space(params)
    acts = ActionSpace.single(params.action_labels())
    flow_lo, flow_hi = params.flow_lo, params.flow_hi
    out_max = out_degree * flow_hi
    prov_slots = set(range(3 - n_providers, 3))
    triples = []
    for phase in range(10):
        nphase = (phase + 1) % 10
        for b in range(cap + 1):
            for m in range(acts.n_joint):
                slots = _open_slots(m)
                n_open = len(slots)
                n_prov = sum(1 for s in slots if s in prov_slots)
                in_min = flow_lo * (n_open if assume else n_prov)
                in_max = flow_hi * n_open
                # bin b is [b, b+1) for b < cap and the closed point {cap}
                top_closed = b == cap
                v_lo = float(b)
                v_sup = float(cap) if top_closed else float(b + 1)
                lo = v_lo + in_min - out_max        # attained (closed)
                hi = v_sup + in_max                 # open sup unless top_closed
                bins = set()
                if lo < -1e-9:
                    bins.add(0)
                if hi > cap + 1e-9 or (top_closed and hi >= cap - 1e-9):
                    bins.add(cap)
                a = max(lo, 0.0)
                z = min(hi, float(cap))
                if a <= z:
                    start = int(floor(a + 1e-9))
                    if top_closed:
                        stop = int(floor(z + 1e-9))
                    else:
                        stop = int(ceil(z - 1e-9)) - 1
                    bins.update(range(max(start, 0), min(stop, cap) + 1))
                src = phase * (cap + 1) + b
                for b2 in sorted(bins):
                    triples.append((src, m, nphase * (cap + 1) + b2))
    return Lts.from_triples(space, acts, triples)


# ---------------------------------------------------------------------------
# Episode kernel
# ---------------------------------------------------------------------------


def _plant_episodes(L, n_acts, n_bins, capacity, flow_lo, flow_span, period,
                    input_src, demand, cost,
                    shield_allow, tables, train_agent, q,
                    alpha, gamma, eps, seeds,
                    v0, phase0, costs, unsafe, err):
    n = input_src.shape[0]
    v = np.empty(n, dtype=np.float64)
    v2 = np.empty(n, dtype=np.float64)
    draw = np.zeros((n, 3), dtype=np.float64)
    req = np.zeros(n, dtype=np.float64)
    scale = np.ones(n, dtype=np.float64)
    acts = np.empty(n, dtype=np.int64)
    for e in range(seeds.shape[0]):
        state = seeds[e]
        phase = phase0
        for j in range(n):
            v[j] = v0[j]
        bad0 = v[8] <= 0.0 or v[9] <= 0.0
        for j in range(n):
            if v[j] >= capacity:
                bad0 = True
        if bad0:
            unsafe[e] += 1
        for t in range(L):
            sec = phase // 2
            tr_obs = np.int64(-1)
            tr_act = np.int64(-1)
            # decisions, agents ascending
            for ag in range(n):
                b = int(v[ag])
                if b > n_bins - 1:
                    b = n_bins - 1
                obs = phase * n_bins + b
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
                        a = argmin_allowed(q[obs], mask, n_acts)
                    tr_obs = obs
                    tr_act = a
                elif tables[ag, obs] >= 0:
                    a = tables[ag, obs]
                else:
                    state, a = uniform_allowed(state, mask)
                acts[ag] = a
            # flow draws: units ascending, slots ascending
            for j in range(n):
                m = acts[j]
                for s in range(3):
                    if m < 8 and (m >> s) & 1:
                        state, u = sm64_uniform(state)
                        draw[j, s] = flow_lo + u * flow_span
                    else:
                        draw[j, s] = 0.0
            # requested outflow per unit
            for j in range(n):
                req[j] = 0.0
            for k in range(n):
                m = acts[k]
                for s in range(3):
                    if m < 8 and (m >> s) & 1:
                        src = input_src[k, s]
                        if src >= 0:
                            req[src] += draw[k, s]
            req[8] += demand[0, sec] * period
            req[9] += demand[1, sec] * period
            # resolve flows upstream-first; availability includes own inflow
            tr_cost = 0.0
            for j in range(n):
                inflow = 0.0
                purchase = 0.0
                m = acts[j]
                for s in range(3):
                    if m < 8 and (m >> s) & 1:
                        src = input_src[j, s]
                        if src < 0:
                            inflow += draw[j, s]
                            purchase += draw[j, s]
                        else:
                            inflow += draw[j, s] * scale[src]
                avail = v[j] + inflow
                if req[j] > 0.0 and req[j] > avail:
                    scale[j] = avail / req[j]
                    v2[j] = 0.0
                else:
                    scale[j] = 1.0
                    v2[j] = avail - req[j]
                if v2[j] > capacity:
                    v2[j] = capacity
                c = cost[j, sec] * purchase
                costs[e, j] += c
                if j == train_agent:
                    tr_cost = c
            step_unsafe = v2[8] <= 0.0 or v2[9] <= 0.0
            for j in range(n):
                v[j] = v2[j]
                if v[j] >= capacity:
                    step_unsafe = True
            phase = (phase + 1) % 10
            if step_unsafe:
                unsafe[e] += 1
            if train_agent >= 0:
                b = int(v[train_agent])
                if b > n_bins - 1:
                    b = n_bins - 1
                obs2 = phase * n_bins + b
                if t == L - 1:
                    tgt = tr_cost
                else:
                    mask2 = shield_allow[train_agent, obs2]
                    if mask2 == np.uint64(0):
                        err[0] = 1
                        err[1] = train_agent
                        err[2] = obs2
                        return
                    bb = argmin_allowed(q[obs2], mask2, n_acts)
                    tgt = tr_cost + gamma * q[obs2, bb]
                q[tr_obs, tr_act] += alpha * (tgt - q[tr_obs, tr_act])


plant_episodes = maybe_jit(_plant_episodes)


class PlantModel:
    """Model factory binding the plant to the synthesis/learning/sim APIs."""

    name = "plant"

    def __init__(self, params=None):
        self.params = params or PlantParams()

    @property
    def n_agents(self):
        return N_UNITS

    # -- synthesis ---------------------------------------------------------

    def guarantee_order(self):
        return list(range(N_UNITS))

    def n_providers(self, i):
        return int((INPUT_SRC[i] < 0).sum())

    def variant_key(self, i, assume):
        if assume:
            return ("plant", int(OUT_DEGREE[i]))
        return ("plant", int(OUT_DEGREE[i]), self.n_providers(i))

    def local_game(self, i, assume):
        return build_local_game(
            self.params, int(OUT_DEGREE[i]), self.n_providers(i), assume
        )

    def obs_space(self, i):
        return obs_space(self.params)

    def local_action_labels(self, i):
        return self.params.action_labels()

    def local_safe_member(self, i):
        space = obs_space(self.params)
        vol = space.coords_array(np.arange(space.size, dtype=np.int64))[:, 1]
        return (vol > 0) & (vol < int(self.params.capacity))

    # -- oracle -------------------------------------------------------------

    def global_nagent(self, guard=None):
        raise TooLarge("plant global state space", float("inf"), guard or 0)

    # -- learning -----------------------------------------------------------

    def declared_deps(self):
        """A unit depends on exactly the units that draw from it."""
        deps = []
        for k in range(N_UNITS):
            for s in range(3):
                src = int(INPUT_SRC[k, s])
                if src >= 0:
                    deps.append((src, k))
        return sorted(set(deps))

    def n_obs(self, i):
        return 10 * self.params.n_bins

    def n_local_actions(self, i):
        return self.params.n_actions

    def agent_cost(self, i, obs_idx, action):
        """Expected purchase cost of one step (mean draw per open provider)."""
        phase = obs_idx // self.params.n_bins
        mean_draw = 0.5 * (self.params.flow_lo + self.params.flow_hi)
        prov = [s for s in _open_slots(action) if INPUT_SRC[i, s] < 0]
        return self.params.cost_tables[i][phase // 2] * mean_draw * len(prov)

    # -- simulation -----------------------------------------------------------

    @property
    def default_episode_len(self):
        return self.params.episode_len

    def initial_state(self):
        st = np.empty(N_UNITS + 1, dtype=np.float64)
        st[0] = self.params.init_phase
        st[1:] = self.params.init_volume
        return st

    def observe_index(self, i, state):
        b = int(state[1 + i])
        b = min(b, self.params.n_bins - 1)
        return int(state[0]) * self.params.n_bins + b

    def step(self, state, actions, rng):
        p = self.params
        phase = int(state[0])
        v = state[1:]
        sec = phase // 2
        draw = np.zeros((N_UNITS, 3))
        for j in range(N_UNITS):
            for s in _open_slots(int(actions[j])):
                draw[j, s] = p.flow_lo + rng.uniform() * (p.flow_hi - p.flow_lo)
        req = np.zeros(N_UNITS)
        for k in range(N_UNITS):
            for s in _open_slots(int(actions[k])):
                src = int(INPUT_SRC[k, s])
                if src >= 0:
                    req[src] += draw[k, s]
        req[8] += p.demand_a[sec] * p.period
        req[9] += p.demand_b[sec] * p.period
        scale = np.ones(N_UNITS)
        v2 = np.empty(N_UNITS)
        costs = np.zeros(N_UNITS)
        for j in range(N_UNITS):
            inflow = 0.0
            purchase = 0.0
            for s in _open_slots(int(actions[j])):
                src = int(INPUT_SRC[j, s])
                if src < 0:
                    inflow += draw[j, s]
                    purchase += draw[j, s]
                else:
                    inflow += draw[j, s] * scale[src]
            avail = v[j] + inflow
            if req[j] > 0.0 and req[j] > avail:
                scale[j] = avail / req[j]
                v2[j] = 0.0
            else:
                scale[j] = 1.0
                v2[j] = avail - req[j]
            v2[j] = min(v2[j], p.capacity)
            costs[j] = p.cost_tables[j][sec] * purchase
        nxt = np.empty(N_UNITS + 1)
        nxt[0] = (phase + 1) % 10
        nxt[1:] = v2
        return nxt, costs, self.is_safe(nxt)

    def is_safe(self, state):
        v = state[1:]
        return bool((v < self.params.capacity).all() and v[8] > 0 and v[9] > 0)

    # -- batched kernels ------------------------------------------------------

    def _kernel_const(self):
        p = self.params
        return (
            p.n_actions, p.n_bins, p.capacity, p.flow_lo,
            p.flow_hi - p.flow_lo, p.period, INPUT_SRC,
            np.array([p.demand_a, p.demand_b], dtype=np.float64),
            np.array(p.cost_tables, dtype=np.float64),
        )

    def eval_episodes(self, shield_allow, tables, seeds, length):
        n_ep = seeds.shape[0]
        costs = np.zeros((n_ep, N_UNITS), dtype=np.float64)
        unsafe = np.zeros(n_ep, dtype=np.int64)
        err = np.zeros(3, dtype=np.int64)
        q = np.zeros((1, self.params.n_actions), dtype=np.float64)
        eps = np.zeros(n_ep, dtype=np.float64)
        st = self.initial_state()
        plant_episodes(length, *self._kernel_const(),
                       shield_allow, tables, -1, q, 0.0, 1.0, eps, seeds,
                       st[1:], int(st[0]), costs, unsafe, err)
        return costs, unsafe, err

    def train_episodes(self, shield_allow, tables, train_agent, q,
                       alpha, gamma, eps, seeds, length):
        n_ep = seeds.shape[0]
        costs = np.zeros((n_ep, N_UNITS), dtype=np.float64)
        unsafe = np.zeros(n_ep, dtype=np.int64)
        err = np.zeros(3, dtype=np.int64)
        st = self.initial_state()
        plant_episodes(length, *self._kernel_const(),
                       shield_allow, tables, train_agent, q,
                       alpha, gamma, eps, seeds,
                       st[1:], int(st[0]), costs, unsafe, err)
        return costs, unsafe, err
