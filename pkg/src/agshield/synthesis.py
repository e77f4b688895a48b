"""Safety-game solving and distributed shield synthesis.

A shield stores, per state of its (observation) space, the bitmask of
allowed actions; the mask is nonempty exactly on winning states. Local
shields are lifted to the global space lazily by constraining only their
own agent's action component, and the distributed shield is the pointwise
intersection of those liftings.
"""

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .core import ActionSpace, SafetyProp, StateSpace, VarDomain, shielded_lts
from .errors import CompatibilityFailure, EmptyWinningSet, FormatError, TooLarge
from .projection import NAgentSystem, project_lts, restricted_project_set

ORACLE_STATE_GUARD = 10**7


@dataclass
class Shield:
    """Per-state allowed-action bitmask with a winning flag per state."""

    space: StateSpace
    action_labels: tuple
    allow: np.ndarray
    winning: np.ndarray

    def __post_init__(self):
        self.allow = np.ascontiguousarray(self.allow, dtype=np.uint64)
        self.winning = np.ascontiguousarray(self.winning, dtype=np.bool_)
        if ((self.allow != 0) != self.winning).any():
            raise ValueError("allow mask must be nonempty exactly on winning states")

    @property
    def n_actions(self):
        return len(self.action_labels)

    def winning_fraction(self):
        return float(self.winning.mean())

    def allowed(self, obs_idx):
        m = int(self.allow[obs_idx])
        return [a for a in range(self.n_actions) if m >> a & 1]

    def equals(self, other):
        return (
            self.space.sizes == other.space.sizes
            and self.action_labels == other.action_labels
            and np.array_equal(self.allow, other.allow)
        )


def winning_states(t, prop, guard=ORACLE_STATE_GUARD):
    """Complement of the least fixpoint of environment-forced unsafety."""
    if t.n_states > guard:
        raise TooLarge("states", t.n_states, guard)
    losing = kernels.losing_states(
        t.n_states, t.n_actions, t.offsets, t.succs, ~prop.member
    )
    return ~losing


def most_permissive_shield(t, prop, guard=ORACLE_STATE_GUARD):
    """On winning states allow every enabled action whose successors are all
    winning; empty elsewhere. Raises EmptyWinningSet if no state is winning."""
    win = winning_states(t, prop, guard)
    if not win.any():
        raise EmptyWinningSet()
    pair_ok = kernels.pair_all_succ_in(t.offsets, t.succs, win)
    allow = kernels.pack_action_masks(t.n_states, t.n_actions, pair_ok)
    allow[~win] = 0
    if ((allow != 0) != win).any():
        # cannot happen for a correct fixpoint; guards against kernel bugs
        raise AssertionError("winning state without an all-winning action")
    labels = t.actions.agents[0] if t.actions.n_agents == 1 else tuple(
        "|".join(t.actions.joint_labels(a)) for a in range(t.n_actions)
    )
    return Shield(t.space, tuple(labels), allow, win)


def synthesize_local_shield(local_lts, phi_member, prj=None):
    """Shield for one agent's local game.

    phi_member is the agent safety property: over the global space when a
    projection is given (the restricted projection is applied), otherwise
    already over the local observation space.
    """
    if prj is not None:
        member = restricted_project_set(prj, phi_member)
    else:
        member = np.asarray(phi_member, dtype=bool)
    return most_permissive_shield(local_lts, SafetyProp(local_lts.space, member))


@dataclass
class ExtendedShield:
    """Local shield lifted to the global space, evaluated on demand."""

    local: Shield
    agent: int
    actions: ActionSpace
    projection: object

    @cached_property
    def _comp_masks(self):
        """Joint-action bitmask per local action component."""
        comp = self.actions.component_array(self.agent)
        n_local = len(self.actions.agents[self.agent])
        masks = np.zeros(n_local, dtype=np.uint64)
        for a in range(self.actions.n_joint):
            masks[comp[a]] |= np.uint64(1) << np.uint64(a)
        return masks

    def joint_mask(self, local_mask):
        out = np.uint64(0)
        m = int(local_mask)
        for c in range(self._comp_masks.shape[0]):
            if m >> c & 1:
                out |= self._comp_masks[c]
        return out

    def local_mask_at(self, state_idx):
        return int(self.local.allow[self.projection.obs_of_state(state_idx)])

    def allow_at(self, state_idx):
        return self.joint_mask(self.local_mask_at(state_idx))

    def joint_allow_array(self, state_indices):
        obs = self.projection.obs_of_states(state_indices)
        local = self.local.allow[obs]
        out = np.zeros(local.shape[0], dtype=np.uint64)
        for c in range(self._comp_masks.shape[0]):
            bit = (local >> np.uint64(c)) & np.uint64(1)
            out |= np.where(bit.astype(bool), self._comp_masks[c], np.uint64(0))
        return out


class DistributedShield:
    """Pointwise intersection of extended shields; no runtime communication.

    Because every extended shield constrains only its own action component,
    the composition exists at a state exactly when each agent's local allow
    set is nonempty there.
    """

    def __init__(self, parts):
        if not parts:
            raise ValueError("need at least one extended shield")
        self.parts = list(parts)
        self.actions = self.parts[0].actions

    def winning_at(self, state_idx):
        return all(p.local_mask_at(state_idx) != 0 for p in self.parts)

    def allow_at(self, state_idx):
        out = ~np.uint64(0)
        for p in self.parts:
            lm = p.local_mask_at(state_idx)
            if lm == 0:
                raise CompatibilityFailure(state_idx, p.agent)
            out &= p.joint_mask(lm)
        return int(out)

    def materialize(self, space):
        """Global Shield over an explicit space; exhaustive compatibility check."""
        idx = np.arange(space.size, dtype=np.int64)
        winning = np.ones(space.size, dtype=bool)
        allow = np.full(space.size, ~np.uint64(0), dtype=np.uint64)
        for p in self.parts:
            obs = p.projection.obs_of_states(idx)
            winning &= p.local.winning[obs]
            allow &= p.joint_allow_array(idx)
        allow[~winning] = 0
        empty = winning & (allow == 0)
        if empty.any():
            s = int(np.nonzero(empty)[0][0])
            for p in self.parts:
                if p.local_mask_at(s) == 0:
                    raise CompatibilityFailure(s, p.agent)
            raise CompatibilityFailure(s, -1)
        n_joint = self.actions.n_joint
        if n_joint < 64:
            allow &= np.uint64((1 << n_joint) - 1)
        labels = tuple(
            "|".join(self.actions.joint_labels(a))
            for a in range(self.actions.n_joint)
        )
        return Shield(space, labels, allow, winning)


def extend_shield(local_shield, agent, projection, actions):
    return ExtendedShield(local_shield, agent, actions, projection)


def compose_distributed(shields, projections, actions):
    """One extended shield per agent, lazily intersected."""
    parts = [
        ExtendedShield(sh, i, actions, prj)
        for i, (sh, prj) in enumerate(zip(shields, projections))
    ]
    return DistributedShield(parts)


def _popcount_total(masks):
    u = masks.copy()
    total = 0
    while u.any():
        total += int((u & np.uint64(1)).sum())
        u >>= np.uint64(1)
    return total


@dataclass
class AgentSynthesis:
    agent: int
    variant: object
    winning_fraction: float
    allowed_pairs: int
    wall_time: float
    reused: bool


@dataclass
class SynthesisReport:
    per_agent: list = field(default_factory=list)
    compatibility: str = "unchecked"

    def lines(self):
        out = []
        for row in self.per_agent:
            out.append(
                f"agent {row.agent + 1}: variant={row.variant} "
                f"winning={row.winning_fraction:.6f} "
                f"allowed_pairs={row.allowed_pairs} "
                f"time={row.wall_time:.3f}s"
                + (" (reused)" if row.reused else "")
            )
        out.append(f"compatibility: {self.compatibility}")
        return out


def assume_guarantee_synthesize(model, assume=True, order=None):
    """Synthesize one local shield per agent in guarantee order.

    The model supplies, per agent, a local game already pruned by the
    guarantees of earlier agents (when `assume` is set); `order` overrides
    the model's declared guarantee sequence. Agents declaring the same
    variant key share a single synthesis. Raises EmptyWinningSet naming
    the first agent whose guarantees are insufficient.
    """
    cache = {}
    shields = [None] * model.n_agents
    report = SynthesisReport()
    for i in (model.guarantee_order() if order is None else order):
        key = model.variant_key(i, assume)
        reused = key in cache
        if not reused:
            t0 = time.perf_counter()
            game = model.local_game(i, assume)
            member = model.local_safe_member(i)
            try:
                shield = synthesize_local_shield(game, member)
            except EmptyWinningSet:
                raise EmptyWinningSet(agent=i) from None
            cache[key] = (shield, time.perf_counter() - t0)
        shield, elapsed = cache[key]
        shields[i] = shield
        report.per_agent.append(AgentSynthesis(
            agent=i, variant=key,
            winning_fraction=shield.winning_fraction(),
            allowed_pairs=_popcount_total(shield.allow),
            wall_time=elapsed, reused=reused,
        ))
    report.compatibility = "product-form (local nonemptiness per state)"
    return shields, report


def oracle_global_pipeline(model, assume=True, guard=ORACLE_STATE_GUARD,
                           order=None):
    """Certify the compositional backend on a small instance.

    For each agent in guarantee order: most-permissive global shield for the
    intersection of earlier guarantees, shield the global LTS, project to the
    agent, then synthesize the local shield from the restricted projection of
    the agent property.
    """
    ns = model.global_nagent()
    t = ns.sys
    if t.n_states > guard:
        raise TooLarge("states", t.n_states, guard)
    shields = [None] * model.n_agents
    assumed = np.ones(t.n_states, dtype=bool)
    for i in (model.guarantee_order() if order is None else order):
        smp = most_permissive_shield(t, SafetyProp(t.space, assumed), guard)
        tsh = shielded_lts(t, smp)
        local = project_lts(NAgentSystem(tsh, ns.projections), i)
        prj = ns.projections[i]
        member = restricted_project_set(prj, model.agent_prop_member(i))
        try:
            shields[i] = most_permissive_shield(
                local, SafetyProp(prj.target, member), guard
            )
        except EmptyWinningSet:
            raise EmptyWinningSet(agent=i) from None
        if assume:
            assumed = assumed & model.agent_prop_member(i)
    return shields


@dataclass
class CertifyResult:
    bitmask_equal: list          # per agent
    modelcheck_safe: bool
    winning_initials: int
    counterexample: object = None

    @property
    def ok(self):
        return self.modelcheck_safe and all(self.bitmask_equal)


def certify_compositional(model, assume=True, shields=None,
                          guard=ORACLE_STATE_GUARD):
    """Small-instance certificate: compositional shields must be
    bitmask-identical to the global oracle pipeline, and the distributed
    shield must model-check safe from every winning initial state."""
    from .core import check_models, shielded_lts as _shielded

    if shields is None:
        shields, _ = assume_guarantee_synthesize(model, assume)
    oracle = oracle_global_pipeline(model, assume, guard)
    equal = [c.equals(o) for c, o in zip(shields, oracle)]
    ns = model.global_nagent()
    dist = compose_distributed(shields, ns.projections, ns.sys.actions)
    gsh = dist.materialize(ns.sys.space)
    tsh = _shielded(ns.sys, gsh)
    initials = np.nonzero(gsh.winning)[0]
    phi = SafetyProp(ns.sys.space, model.global_safe_member())
    verdict = check_models(tsh, phi, initials, guard)
    return CertifyResult(
        bitmask_equal=equal,
        modelcheck_safe=verdict.safe,
        winning_initials=int(initials.size),
        counterexample=verdict.counterexample,
    )


# ---------------------------------------------------------------------------
# Shield file format (text, LF line endings)
# ---------------------------------------------------------------------------


def serialize_shield(shield):
    lines = ["DSHIELD v1", f"vars {shield.space.ndim}"]
    for d in shield.space.dims:
        if d.labels is not None:
            lines.append(f"var {d.name} enum " + " ".join(d.labels))
        else:
            lines.append(f"var {d.name} int {d.lo} {d.hi} {d.step}")
    lines.append(f"actions {shield.n_actions}")
    for a, label in enumerate(shield.action_labels):
        lines.append(f"action {a} {label}")
    lines.append(f"states {shield.space.size}")
    for m in shield.allow:
        lines.append(format(int(m), "x"))
    return ("\n".join(lines) + "\n").encode("ascii")


def deserialize_shield(data):
    text = data.decode("ascii", errors="replace")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def take(expect_prefix=None):
        nonlocal pos
        if pos >= len(lines):
            raise FormatError(pos + 1, "unexpected end of file")
        line = lines[pos]
        pos += 1
        if expect_prefix is not None and not line.startswith(expect_prefix):
            raise FormatError(pos, f"expected `{expect_prefix}...`, got `{line}`")
        return line

    if take() != "DSHIELD v1":
        raise FormatError(1, "bad magic, expected `DSHIELD v1`")
    try:
        k = int(take("vars ").split()[1])
    except (IndexError, ValueError):
        raise FormatError(pos, "malformed vars header") from None
    dims = []
    for _ in range(k):
        parts = take("var ").split()
        try:
            if parts[2] == "int":
                dims.append(VarDomain(parts[1], int(parts[3]), int(parts[4]),
                                      int(parts[5])))
            elif parts[2] == "enum":
                dims.append(VarDomain.enum(parts[1], parts[3:]))
            else:
                raise FormatError(pos, f"unknown var kind `{parts[2]}`")
        except (IndexError, ValueError):
            raise FormatError(pos, "malformed var line") from None
    space = StateSpace(tuple(dims))
    try:
        m = int(take("actions ").split()[1])
    except (IndexError, ValueError):
        raise FormatError(pos, "malformed actions header") from None
    labels = []
    for a in range(m):
        parts = take("action ").split()
        try:
            if int(parts[1]) != a:
                raise FormatError(pos, f"action index {parts[1]}, expected {a}")
        except ValueError:
            raise FormatError(pos, "malformed action line") from None
        labels.append(parts[2])
    try:
        count = int(take("states ").split()[1])
    except (IndexError, ValueError):
        raise FormatError(pos, "malformed states header") from None
    if count != space.size:
        raise FormatError(pos, f"states {count} != domain product {space.size}")
    allow = np.zeros(count, dtype=np.uint64)
    for s in range(count):
        line = take()
        try:
            v = int(line, 16)
        except ValueError:
            raise FormatError(pos, f"bad bitmask `{line}`") from None
        if v < 0 or v >= (1 << m):
            raise FormatError(pos, f"bitmask {line} out of range for {m} actions")
        allow[s] = v
    if pos != len(lines):
        raise FormatError(pos + 1, "trailing content after state table")
    return Shield(space, tuple(labels), allow, allow != 0)
