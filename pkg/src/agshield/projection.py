"""Projection algebra: observation subspaces, extensions, standard and
restricted projection of state sets, and projection of an n-agent LTS
to one agent's observation space."""

from dataclasses import dataclass, field
from functools import cached_property
from math import prod

import numpy as np

from .core import Lts, ActionSpace, StateSpace, TRANSITION_GUARD
from .errors import TooLarge


@dataclass(frozen=True)
class Projection:
    """Coordinate selection from a source space (0-based dimension indices)."""

    source: StateSpace
    indices: tuple

    def __post_init__(self):
        idx = self.indices
        if not idx or any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("indices must be nonempty and strictly increasing")
        if idx[-1] >= self.source.ndim or idx[0] < 0:
            raise ValueError("projection index out of range")

    @cached_property
    def target(self):
        return StateSpace(tuple(self.source.dims[j] for j in self.indices))

    @cached_property
    def _dropped(self):
        return tuple(j for j in range(self.source.ndim) if j not in self.indices)

    def apply_coords(self, coords):
        return tuple(coords[j] for j in self.indices)

    def obs_of_state(self, state_idx):
        return self.target.index(self.apply_coords(self.source.coords(state_idx)))

    def obs_of_states(self, state_indices):
        """Vectorized flat-state-index to flat-observation-index map."""
        state_indices = np.asarray(state_indices, dtype=np.int64)
        out = np.zeros(state_indices.shape[0], dtype=np.int64)
        for j, tstride in zip(self.indices, self.target.strides):
            sz = self.source.sizes[j]
            st = self.source.strides[j]
            out += ((state_indices // st) % sz) * tstride
        return out

    def fiber_size(self):
        return prod(self.source.sizes[j] for j in self._dropped)


def project_state(p, state_idx):
    """Observation index of one state."""
    return p.obs_of_state(state_idx)


def extension(p, obs_idx):
    """All states projecting to the observation (sorted flat indices)."""
    base = 0
    ocoords = p.target.coords(obs_idx)
    for j, c in zip(p.indices, ocoords):
        base += c * p.source.strides[j]
    out = np.array([base], dtype=np.int64)
    for j in p._dropped:
        st = p.source.strides[j]
        offs = np.arange(p.source.sizes[j], dtype=np.int64) * st
        out = (out[:, None] + offs[None, :]).ravel()
    out.sort()
    return out


def project_set(p, member):
    """Image of a state bitset in the observation space."""
    member = np.asarray(member, dtype=bool)
    out = np.zeros(p.target.size, dtype=bool)
    idx = np.nonzero(member)[0]
    if idx.size:
        out[p.obs_of_states(idx)] = True
    return out


def restricted_project_set(p, member):
    """Observations whose entire extension lies inside the set.

    Computed by the complement identity: O minus the projection of the
    complement of the set.
    """
    member = np.asarray(member, dtype=bool)
    return ~project_set(p, ~member)


@dataclass
class NAgentSystem:
    """A transition system with one projection per agent.

    declared_deps lists (i, j) pairs, 0-based: agent i depends on agent j.
    """

    sys: object
    projections: list
    declared_deps: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.projections) != self.sys.actions.n_agents:
            raise ValueError("need exactly one projection per agent")
        for p in self.projections:
            if p.source is not self.sys.space and p.source != self.sys.space:
                raise ValueError("projection source must be the system space")

    @property
    def n_agents(self):
        return len(self.projections)


def project_lts(ns, i, max_transitions=TRANSITION_GUARD):
    """Observation-level LTS of agent i: successor sets are unions over
    fibers and over the other agents' action components."""
    t = ns.sys if isinstance(ns.sys, Lts) else None
    if t is None:
        from .core import induced_lts
        t = induced_lts(ns.sys)
    if t.n_transitions() > max_transitions:
        raise TooLarge("transitions", t.n_transitions(), max_transitions)
    p = ns.projections[i]
    n_a = t.n_actions

    counts = t.offsets[1:] - t.offsets[:-1]
    pair_ids = np.repeat(np.arange(t.n_states * n_a, dtype=np.int64), counts)
    src = pair_ids // n_a
    act = pair_ids % n_a

    obs_src = p.obs_of_states(src)
    obs_dst = p.obs_of_states(t.succs.astype(np.int64))
    comp = t.actions.component_array(i)[act]

    local_actions = ActionSpace.single(t.actions.agents[i])
    triples = np.stack([obs_src, comp, obs_dst], axis=1)
    return Lts.from_triples(p.target, local_actions, triples,
                            allow_dead_ends=True)
