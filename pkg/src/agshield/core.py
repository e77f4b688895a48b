"""Finite transition systems: state spaces, LTS/MDP semantics, strategies,
policies, runs, safety properties, and the shielding operators.

States live in a product of named variable domains and are addressed by
flat row-major indices (dimension 0 most significant). Explicit systems
store successors in CSR layout over (state, action) pairs.
"""

from dataclasses import dataclass
from functools import cached_property
from math import prod

import numpy as np

from .errors import DeadEndCreated, IncompatibleAt, TooLarge
from . import kernels

STATE_GUARD = 10**7        # check_models / fixpoint enumeration limit
TRANSITION_GUARD = 10**8   # explicit transition table limit
PROB_TOL = 1e-9


@dataclass(frozen=True)
class VarDomain:
    """One named variable: an integer range (lo, hi, step) or enumerated labels."""

    name: str
    lo: int = 0
    hi: int = 0
    step: int = 1
    labels: tuple = None

    def __post_init__(self):
        if self.labels is not None:
            if len(self.labels) == 0:
                raise ValueError(f"domain {self.name}: empty label list")
        else:
            if self.step <= 0:
                raise ValueError(f"domain {self.name}: step must be positive")
            if (self.hi - self.lo) % self.step != 0 or self.hi < self.lo:
                raise ValueError(
                    f"domain {self.name}: (hi - lo) must be a nonnegative "
                    f"multiple of step"
                )

    @classmethod
    def int_range(cls, name, lo, hi, step=1):
        return cls(name, lo, hi, step)

    @classmethod
    def enum(cls, name, labels):
        return cls(name, labels=tuple(labels))

    @property
    def size(self):
        if self.labels is not None:
            return len(self.labels)
        return (self.hi - self.lo) // self.step + 1

    def value(self, idx):
        if self.labels is not None:
            return self.labels[idx]
        return self.lo + idx * self.step

    def index(self, value):
        if self.labels is not None:
            return self.labels.index(value)
        off = value - self.lo
        if off % self.step != 0 or not (self.lo <= value <= self.hi):
            raise ValueError(f"{value} not in domain {self.name}")
        return off // self.step


@dataclass(frozen=True)
class StateSpace:
    """Ordered product of variable domains; row-major flat indexing."""

    dims: tuple

    def __post_init__(self):
        if len(self.dims) == 0:
            raise ValueError("state space needs at least one dimension")

    @cached_property
    def sizes(self):
        return tuple(d.size for d in self.dims)

    @cached_property
    def size(self):
        return prod(self.sizes)  # python int: may exceed 2**63 for generators

    @cached_property
    def strides(self):
        st = [1] * len(self.dims)
        for j in range(len(self.dims) - 2, -1, -1):
            st[j] = st[j + 1] * self.sizes[j + 1]
        return tuple(st)

    @property
    def ndim(self):
        return len(self.dims)

    def index(self, coords):
        idx = 0
        for c, sz, st in zip(coords, self.sizes, self.strides):
            if not 0 <= c < sz:
                raise ValueError(f"coordinate {c} out of range (size {sz})")
            idx += c * st
        return idx

    def coords(self, index):
        out = []
        for sz, st in zip(self.sizes, self.strides):
            out.append((index // st) % sz)
        return tuple(out)

    def values(self, index):
        return tuple(d.value(c) for d, c in zip(self.dims, self.coords(index)))

    def index_of_values(self, values):
        return self.index(tuple(d.index(v) for d, v in zip(self.dims, values)))

    def coords_array(self, indices):
        """(n, ndim) int64 coordinate matrix for an array of flat indices."""
        indices = np.asarray(indices, dtype=np.int64)
        out = np.empty((indices.shape[0], self.ndim), dtype=np.int64)
        for j, (sz, st) in enumerate(zip(self.sizes, self.strides)):
            out[:, j] = (indices // st) % sz
        return out

    def index_array(self, coords):
        coords = np.asarray(coords, dtype=np.int64)
        idx = np.zeros(coords.shape[0], dtype=np.int64)
        for j, st in enumerate(self.strides):
            idx += coords[:, j] * st
        return idx

    def all_coords(self):
        return self.coords_array(np.arange(self.size, dtype=np.int64))


# Observation spaces have the same structure as state spaces.
ObservationSpace = StateSpace


@dataclass(frozen=True)
class ActionSpace:
    """Per-agent action label lists; joint actions indexed row-major."""

    agents: tuple

    def __post_init__(self):
        if any(len(a) == 0 for a in self.agents):
            raise ValueError("every agent needs at least one action")

    @classmethod
    def single(cls, labels):
        return cls((tuple(labels),))

    @classmethod
    def uniform(cls, n_agents, labels):
        return cls(tuple(tuple(labels) for _ in range(n_agents)))

    @cached_property
    def sizes(self):
        return tuple(len(a) for a in self.agents)

    @cached_property
    def n_joint(self):
        return prod(self.sizes)

    @cached_property
    def strides(self):
        st = [1] * len(self.agents)
        for j in range(len(self.agents) - 2, -1, -1):
            st[j] = st[j + 1] * self.sizes[j + 1]
        return tuple(st)

    @property
    def n_agents(self):
        return len(self.agents)

    def component(self, joint, i):
        return (joint // self.strides[i]) % self.sizes[i]

    def component_array(self, i):
        """Map from joint action index to agent i's component index."""
        joints = np.arange(self.n_joint, dtype=np.int64)
        return (joints // self.strides[i]) % self.sizes[i]

    def joint_index(self, components):
        return sum(c * st for c, st in zip(components, self.strides))

    def joint_labels(self, joint):
        return tuple(
            self.agents[i][self.component(joint, i)] for i in range(self.n_agents)
        )

    def without_agent(self, i):
        return ActionSpace(self.agents[:i] + self.agents[i + 1:])


def _dedupe_csr(n_pairs, pair_ids, targets):
    """Build CSR offsets/succs from (pair, target) lists, sorted and deduped."""
    order = np.lexsort((targets, pair_ids))
    pair_ids = pair_ids[order]
    targets = targets[order]
    if pair_ids.size:
        keep = np.ones(pair_ids.size, dtype=bool)
        keep[1:] = (pair_ids[1:] != pair_ids[:-1]) | (targets[1:] != targets[:-1])
        pair_ids = pair_ids[keep]
        targets = targets[keep]
    counts = np.bincount(pair_ids, minlength=n_pairs)
    offsets = np.zeros(n_pairs + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, targets.astype(np.int32)


class Lts:
    """Explicit labeled transition system with CSR successor tables."""

    def __init__(self, space, actions, offsets, succs, allow_dead_ends=False):
        self.space = space
        self.actions = actions
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        self.succs = np.ascontiguousarray(succs, dtype=np.int32)
        n_pairs = space.size * actions.n_joint
        if self.offsets.shape[0] != n_pairs + 1:
            raise ValueError("offsets shape does not match state/action spaces")
        counts = self.offsets[1:] - self.offsets[:-1]
        enabled = (counts > 0).reshape(space.size, actions.n_joint)
        self._enabled_pairs = enabled
        if not allow_dead_ends and not enabled.any(axis=1).all():
            dead = int(np.nonzero(~enabled.any(axis=1))[0][0])
            raise ValueError(f"dead end at state {dead}: no enabled action")
        self.has_dead_ends = bool(not enabled.any(axis=1).all())

    @property
    def n_states(self):
        return self.space.size

    @property
    def n_actions(self):
        return self.actions.n_joint

    @classmethod
    def from_triples(cls, space, actions, triples, allow_dead_ends=False):
        """triples: iterable of (state_idx, joint_action_idx, succ_idx)."""
        arr = np.asarray(list(triples), dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 3)
        pair_ids = arr[:, 0] * actions.n_joint + arr[:, 1]
        offsets, succs = _dedupe_csr(
            space.size * actions.n_joint, pair_ids, arr[:, 2]
        )
        return cls(space, actions, offsets, succs, allow_dead_ends)

    @classmethod
    def from_function(cls, space, actions, fn, max_transitions=TRANSITION_GUARD,
                      allow_dead_ends=False):
        """Materialize a generator-backed system; fn(s, a) -> successor indices."""
        if space.size * actions.n_joint > max_transitions:
            raise TooLarge("state-action pairs", space.size * actions.n_joint,
                           max_transitions)
        triples = []
        for s in range(space.size):
            for a in range(actions.n_joint):
                for t in fn(s, a):
                    triples.append((s, a, t))
                    if len(triples) > max_transitions:
                        raise TooLarge("transitions", len(triples), max_transitions)
        return cls.from_triples(space, actions, triples, allow_dead_ends)

    def succ(self, s, a):
        p = s * self.n_actions + a
        return self.succs[self.offsets[p]:self.offsets[p + 1]]

    @cached_property
    def enabled_mask(self):
        """uint64 per-state bitmask of enabled joint actions."""
        return kernels.pack_action_masks(
            self.n_states, self.n_actions, self._enabled_pairs
        )

    def n_transitions(self):
        return int(self.offsets[-1])

    def transition_set(self):
        """Set of (s, a, s') triples; for equality tests on small systems."""
        out = set()
        for s in range(self.n_states):
            for a in range(self.n_actions):
                for t in self.succ(s, a):
                    out.add((s, a, int(t)))
        return out

    def restricted_by(self, t_other):
        """True when self's transitions are a subset of t_other's."""
        return self.transition_set() <= t_other.transition_set()


class Mdp:
    """Explicit MDP with a dense probability tensor (small systems only)."""

    DENSE_GUARD = 5 * 10**7

    def __init__(self, space, actions, probs):
        self.space = space
        self.actions = actions
        probs = np.asarray(probs, dtype=np.float64)
        expect = (space.size, actions.n_joint, space.size)
        if probs.shape != expect:
            raise ValueError(f"probability tensor must have shape {expect}")
        if probs.size > self.DENSE_GUARD:
            raise TooLarge("dense MDP entries", probs.size, self.DENSE_GUARD)
        if (probs < 0).any():
            raise ValueError("negative transition probability")
        sums = probs.sum(axis=2)
        ok = (np.abs(sums - 1.0) <= PROB_TOL) | (np.abs(sums) <= PROB_TOL)
        if not ok.all():
            s, a = np.argwhere(~ok)[0]
            raise ValueError(
                f"probabilities at state {s}, action {a} sum to {sums[s, a]}"
            )
        if not (np.abs(sums - 1.0) <= PROB_TOL).any(axis=1).all():
            s = int(np.nonzero(~(np.abs(sums - 1.0) <= PROB_TOL).any(axis=1))[0][0])
            raise ValueError(f"state {s} has no action with total probability 1")
        self.probs = probs

    @property
    def n_states(self):
        return self.space.size

    @property
    def n_actions(self):
        return self.actions.n_joint

    def succ_p(self, s, a):
        row = self.probs[s, a]
        idx = np.nonzero(row)[0]
        return idx, row[idx]

    @cached_property
    def enabled_mask(self):
        enabled = self.probs.sum(axis=2) > PROB_TOL
        return kernels.pack_action_masks(self.n_states, self.n_actions, enabled)


@dataclass
class Strategy:
    """Nondeterministic action choice: per-state uint64 bitmask, nonempty."""

    allow: np.ndarray

    def __post_init__(self):
        self.allow = np.ascontiguousarray(self.allow, dtype=np.uint64)

    def validate(self, sys):
        if (self.allow == 0).any():
            s = int(np.nonzero(self.allow == 0)[0][0])
            raise ValueError(f"strategy empty at state {s}")
        extra = self.allow & ~sys.enabled_mask
        if (extra != 0).any():
            s = int(np.nonzero(extra != 0)[0][0])
            raise ValueError(f"strategy allows a disabled action at state {s}")
        return self

    def allowed(self, s):
        m = int(self.allow[s])
        return [a for a in range(64) if m >> a & 1]


@dataclass
class Policy:
    """Probabilistic action choice: rows sum to 1 over enabled actions."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)

    def validate(self, sys):
        mask = sys.enabled_mask
        for s in range(self.probs.shape[0]):
            m = int(mask[s])
            on = self.probs[s][[a for a in range(self.probs.shape[1]) if m >> a & 1]]
            off = self.probs[s][[a for a in range(self.probs.shape[1])
                                 if not m >> a & 1]]
            if abs(on.sum() - 1.0) > PROB_TOL or (np.abs(off) > 0).any():
                raise ValueError(f"policy row {s} is not a distribution "
                                 f"over enabled actions")
        return self


@dataclass
class Run:
    """Alternating state/action sequence s0 a0 s1 a1 ... (flat indices)."""

    states: list
    actions: list

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("a run has one more state than actions")

    def __len__(self):
        return len(self.actions)

    def is_run_of(self, lts):
        for i, a in enumerate(self.actions):
            if self.states[i + 1] not in lts.succ(self.states[i], a):
                return False
        return True


class SafetyProp:
    """Set of safe states, materialized as a bitset over the space."""

    def __init__(self, space, member):
        self.space = space
        self.member = np.ascontiguousarray(member, dtype=np.bool_)
        if self.member.shape != (space.size,):
            raise ValueError("bitset length must equal the state count")

    @classmethod
    def from_predicate(cls, space, pred):
        """pred receives a tuple of domain *values* for each state."""
        member = np.fromiter(
            (bool(pred(space.values(i))) for i in range(space.size)),
            dtype=np.bool_, count=space.size,
        )
        return cls(space, member)

    @classmethod
    def from_indices(cls, space, indices):
        member = np.zeros(space.size, dtype=np.bool_)
        member[list(indices)] = True
        return cls(space, member)

    def __contains__(self, state_idx):
        return bool(self.member[state_idx])

    def intersect(self, other):
        return SafetyProp(self.space, self.member & other.member)

    def complement(self):
        return SafetyProp(self.space, ~self.member)


@dataclass
class Verdict:
    safe: bool
    counterexample: Run = None


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def enabled_actions(sys, s):
    """Joint actions with at least one successor (positive probability for MDPs)."""
    m = int(sys.enabled_mask[s])
    return [a for a in range(sys.n_actions) if m >> a & 1]


def induced_lts(m):
    """Possibility abstraction of an MDP: edge present iff probability > 0."""
    triples = []
    for s in range(m.n_states):
        for a in range(m.n_actions):
            idx, _ = m.succ_p(s, a)
            for t in idx:
                triples.append((s, a, int(t)))
    return Lts.from_triples(m.space, m.actions, triples)


def is_safe_run(run, prop):
    return all(prop.member[s] for s in run.states)


def compose_strategies(s1, s2):
    """Pointwise intersection; raises IncompatibleAt(lowest witness state)."""
    both = s1.allow & s2.allow
    empty = np.nonzero(both == 0)[0]
    if empty.size:
        raise IncompatibleAt(int(empty[0]))
    return Strategy(both)


def _filter_csr(lts, allow):
    n_s, n_a = lts.n_states, lts.n_actions
    counts = (lts.offsets[1:] - lts.offsets[:-1]).copy()
    shifts = np.arange(n_a, dtype=np.uint64)
    keep = ((allow[:, None] >> shifts[None, :]) & np.uint64(1)).astype(bool)
    keep = keep.reshape(n_s * n_a)
    counts[~keep] = 0
    offsets = np.zeros(n_s * n_a + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    kept_pairs = np.nonzero(counts > 0)[0]
    starts = lts.offsets[kept_pairs]
    lens = counts[kept_pairs]
    flat = np.repeat(starts, lens) + (
        np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens)
    )
    return offsets, lts.succs[flat]


def shielded_lts(t, shield):
    """Restrict transitions to shield-allowed actions.

    Accepts a Strategy or anything with a per-state `allow` bitmask. States
    with an empty mask become dead ends (they are outside the winning
    region); a nonempty mask that loses all its transitions is an error.
    """
    allow = np.ascontiguousarray(shield.allow, dtype=np.uint64)
    effective = allow & t.enabled_mask
    broken = (allow != 0) & (effective == 0)
    if broken.any():
        raise DeadEndCreated(int(np.nonzero(broken)[0][0]))
    offsets, succs = _filter_csr(t, allow)
    return Lts(t.space, t.actions, offsets, succs, allow_dead_ends=True)


def shielded_mdp(m, shield):
    """Zero forbidden actions; per-action distributions are never renormalized."""
    allow = np.ascontiguousarray(shield.allow, dtype=np.uint64)
    shifts = np.arange(m.n_actions, dtype=np.uint64)
    keep = ((allow[:, None] >> shifts[None, :]) & np.uint64(1)).astype(bool)
    probs = m.probs * keep[:, :, None]
    out = object.__new__(Mdp)
    out.space, out.actions, out.probs = m.space, m.actions, probs
    return out


def check_models(t, prop, initials, guard=STATE_GUARD):
    """Exhaustive reachability: safe iff no state outside prop is reachable.

    Returns a Verdict with a shortest counterexample run on failure.
    """
    if t.n_states > guard:
        raise TooLarge("states", t.n_states, guard)
    initials = np.asarray(list(initials), dtype=np.int64)
    hit, parent_s, parent_a = kernels.bfs_unsafe(
        t.n_states, t.n_actions, t.offsets, t.succs,
        t.enabled_mask, initials, prop.member,
    )
    if hit < 0:
        return Verdict(safe=True)
    states = [int(hit)]
    actions = []
    while parent_s[states[0]] >= 0:
        actions.insert(0, int(parent_a[states[0]]))
        states.insert(0, int(parent_s[states[0]]))
    return Verdict(safe=False, counterexample=Run(states, actions))
