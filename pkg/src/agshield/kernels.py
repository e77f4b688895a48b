"""Numeric kernels: seeded RNG, safety-game fixpoint, reachability search.

Hot loops are JIT-compiled with numba by default. Setting the environment
variable AGSHIELD_NUMBA=0 selects the pure NumPy fallback path instead:
loop kernels then run uninterpreted and the fixpoint/reachability kernels
switch to vectorized NumPy implementations. Both paths produce identical
results; benchmarks/bench_kernels.py compares their speed.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("AGSHIELD_NUMBA", "1") != "0"

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a hard dependency
        USE_NUMBA = False

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_M2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


def maybe_jit(fn):
    """njit the function, or wrap it to tolerate uint64 wraparound in CPython."""
    if USE_NUMBA:
        return _njit(cache=True)(fn)

    def wrapper(*args):
        with np.errstate(over="ignore"):
            return fn(*args)

    wrapper.__name__ = fn.__name__
    wrapper.py_func = fn
    return wrapper


# ---------------------------------------------------------------------------
# SplitMix64
# ---------------------------------------------------------------------------


# Jitted helpers call each other through the module-level dispatcher names,
# so the same source runs under numba and plain CPython.


def _sm64_mix(x):
    z = (x + SM64_GAMMA) & MASK64
    z = ((z ^ (z >> np.uint64(30))) * _SM64_M1) & MASK64
    z = ((z ^ (z >> np.uint64(27))) * _SM64_M2) & MASK64
    return z ^ (z >> np.uint64(31))


sm64_mix = maybe_jit(_sm64_mix)


def _episode_seed(master, index):
    x = master ^ ((index + np.uint64(1)) * SM64_GAMMA & MASK64)
    return sm64_mix(x)


_episode_seed_jit = maybe_jit(_episode_seed)


def _sm64_next(state):
    state = (state + SM64_GAMMA) & MASK64
    return state, sm64_mix(state)


sm64_next = maybe_jit(_sm64_next)


def _sm64_uniform(state):
    state, z = sm64_next(state)
    return state, float(z >> np.uint64(11)) * _INV_2_53


sm64_uniform = maybe_jit(_sm64_uniform)


def episode_seed(master, index):
    """Derive the 64-bit seed of one episode from the master seed."""
    return int(_episode_seed_jit(np.uint64(master), np.uint64(index)))


class Stream:
    """Deterministic SplitMix64 draw stream for the non-jitted code paths."""

    __slots__ = ("state",)

    def __init__(self, seed):
        self.state = np.uint64(seed)

    def next_u64(self):
        with np.errstate(over="ignore"):
            self.state, z = _sm64_next(self.state)
        return int(z)

    def uniform(self):
        """Uniform double in [0, 1) from the high 53 bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def categorical(self, weights):
        """Index drawn by cumulative weights, strict-less against a uniform."""
        target = self.uniform() * float(sum(weights))
        acc = 0.0
        for k, w in enumerate(weights):
            acc += w
            if target < acc:
                return k
        return len(weights) - 1


# ---------------------------------------------------------------------------
# Bitmask action sampling (shared by the episode kernels)
# ---------------------------------------------------------------------------


def _mask_count(mask):
    n = 0
    m = mask
    while m != np.uint64(0):
        n += 1
        m &= m - np.uint64(1)
    return n


mask_count = maybe_jit(_mask_count)


def _mask_kth_bit(mask, k):
    """Index of the k-th set bit (ascending); caller guarantees k < popcount."""
    seen = 0
    for a in range(64):
        if (mask >> np.uint64(a)) & np.uint64(1):
            if seen == k:
                return a
            seen += 1
    return -1


mask_kth_bit = maybe_jit(_mask_kth_bit)


def _uniform_allowed(state, mask):
    """One uniform draw; picks among set bits by floor(u * count)."""
    state, u = sm64_uniform(state)
    n = mask_count(mask)
    k = int(u * n)
    return state, mask_kth_bit(mask, k)


uniform_allowed = maybe_jit(_uniform_allowed)


def _argmin_allowed(q_row, mask, n_actions):
    """Smallest-index argmin of q_row restricted to set bits of mask."""
    best = -1
    best_v = 0.0
    for a in range(n_actions):
        if (mask >> np.uint64(a)) & np.uint64(1):
            if best < 0 or q_row[a] < best_v:
                best = a
                best_v = q_row[a]
    return best


argmin_allowed = maybe_jit(_argmin_allowed)


# ---------------------------------------------------------------------------
# Safety-game attractor fixpoint
#
# Transition tables are CSR over (state, action) pairs: pair p = s * A + a
# owns successors succs[offsets[p]:offsets[p + 1]].
# ---------------------------------------------------------------------------


def _losing_fixpoint_loop(n_states, n_actions, offsets, succs, unsafe):
    n_pairs = n_states * n_actions
    total = np.empty(n_pairs, dtype=np.int64)
    good_actions = np.zeros(n_states, dtype=np.int64)
    for p in range(n_pairs):
        cnt = offsets[p + 1] - offsets[p]
        total[p] = cnt
        if cnt > 0:
            good_actions[p // n_actions] += 1
    good_succ = total.copy()

    # reversed edges grouped by successor (counting sort, linear)
    nnz = offsets[n_pairs]
    rev_off = np.zeros(n_states + 1, dtype=np.int64)
    for e in range(nnz):
        rev_off[succs[e] + 1] += 1
    for s in range(n_states):
        rev_off[s + 1] += rev_off[s]
    rev_pair = np.empty(nnz, dtype=np.int64)
    fill = rev_off[:-1].copy()
    for p in range(n_pairs):
        for e in range(offsets[p], offsets[p + 1]):
            t = succs[e]
            rev_pair[fill[t]] = p
            fill[t] += 1

    losing = np.empty(n_states, dtype=np.bool_)
    stack = np.empty(n_states, dtype=np.int64)
    top = 0
    for s in range(n_states):
        lose = unsafe[s] or good_actions[s] == 0
        losing[s] = lose
        if lose:
            stack[top] = s
            top += 1

    while top > 0:
        top -= 1
        t = stack[top]
        for r in range(rev_off[t], rev_off[t + 1]):
            p = rev_pair[r]
            newly_bad = good_succ[p] == total[p]
            good_succ[p] -= 1
            if newly_bad:
                s = p // n_actions
                good_actions[s] -= 1
                if good_actions[s] == 0 and not losing[s]:
                    losing[s] = True
                    stack[top] = s
                    top += 1
    return losing


losing_fixpoint_loop = maybe_jit(_losing_fixpoint_loop)


def _segment_any(values, offsets):
    """Per-segment logical OR over a CSR layout; empty segments give False.

    Reduces only over nonempty segments: consecutive nonempty segments are
    adjacent in `values`, so their starts form valid reduceat boundaries.
    """
    n_seg = offsets.shape[0] - 1
    out = np.zeros(n_seg, dtype=bool)
    if values.shape[0] == 0:
        return out
    nonempty = offsets[1:] > offsets[:-1]
    starts = offsets[:-1][nonempty]
    if starts.size == 0:
        return out
    red = np.add.reduceat(values.astype(np.int64), starts)
    out[nonempty] = red > 0
    return out


def losing_fixpoint_numpy(n_states, n_actions, offsets, succs, unsafe):
    """Vectorized iterate-to-fixpoint twin of the worklist kernel."""
    n_pairs = n_states * n_actions
    total = offsets[1:] - offsets[:-1]
    enabled = total > 0
    losing = unsafe | ~enabled.reshape(n_states, n_actions).any(axis=1)
    while True:
        pair_bad = _segment_any(losing[succs], offsets)
        dead = (pair_bad | ~enabled).reshape(n_states, n_actions).all(axis=1)
        new_losing = losing | dead
        if np.array_equal(new_losing, losing):
            return new_losing
        losing = new_losing


def losing_states(n_states, n_actions, offsets, succs, unsafe):
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    succs = np.ascontiguousarray(succs, dtype=np.int32)
    unsafe = np.ascontiguousarray(unsafe, dtype=np.bool_)
    if USE_NUMBA:
        return losing_fixpoint_loop(n_states, n_actions, offsets, succs, unsafe)
    return losing_fixpoint_numpy(n_states, n_actions, offsets, succs, unsafe)


def pack_action_masks(n_states, n_actions, pair_flags):
    """Pack per-(state, action) booleans into per-state uint64 bitmasks."""
    if n_actions > 64:
        raise ValueError("explicit action masks support at most 64 actions")
    bits = pair_flags.reshape(n_states, n_actions).astype(np.uint64)
    shifts = np.arange(n_actions, dtype=np.uint64)
    return np.bitwise_or.reduce(bits << shifts[None, :], axis=1)


def pair_all_succ_in(offsets, succs, member):
    """Per-pair test: nonempty successor set entirely inside `member`."""
    n_pairs = offsets.shape[0] - 1
    nonempty = offsets[1:] > offsets[:-1]
    bad = _segment_any(~member[succs], offsets)
    out = np.zeros(n_pairs, dtype=bool)
    out[nonempty] = ~bad[nonempty]
    return out


# ---------------------------------------------------------------------------
# Reachability with shortest counterexample (BFS)
# ---------------------------------------------------------------------------


def _bfs_unsafe_loop(n_states, n_actions, offsets, succs, allow, initials, safe):
    parent_state = np.full(n_states, -1, dtype=np.int64)
    parent_action = np.full(n_states, -1, dtype=np.int64)
    seen = np.zeros(n_states, dtype=np.bool_)
    queue = np.empty(n_states, dtype=np.int64)
    head = 0
    tail = 0
    for k in range(initials.shape[0]):
        s = initials[k]
        if not seen[s]:
            seen[s] = True
            queue[tail] = s
            tail += 1
            if not safe[s]:
                return s, parent_state, parent_action
    while head < tail:
        s = queue[head]
        head += 1
        mask = allow[s]
        for a in range(n_actions):
            if mask & (np.uint64(1) << np.uint64(a)):
                p = s * n_actions + a
                for e in range(offsets[p], offsets[p + 1]):
                    t = succs[e]
                    if not seen[t]:
                        seen[t] = True
                        parent_state[t] = s
                        parent_action[t] = a
                        if not safe[t]:
                            return t, parent_state, parent_action
                        queue[tail] = t
                        tail += 1
    return -1, parent_state, parent_action


bfs_unsafe_loop = maybe_jit(_bfs_unsafe_loop)


def bfs_unsafe_numpy(n_states, n_actions, offsets, succs, allow, initials, safe):
    """Level-synchronous vectorized twin of the BFS kernel."""
    parent_state = np.full(n_states, -1, dtype=np.int64)
    parent_action = np.full(n_states, -1, dtype=np.int64)
    seen = np.zeros(n_states, dtype=bool)
    frontier = np.unique(initials)
    seen[frontier] = True
    bad = frontier[~safe[frontier]]
    if bad.size:
        return int(bad[0]), parent_state, parent_action
    shifts = np.arange(n_actions, dtype=np.uint64)
    while frontier.size:
        pair_open = (allow[frontier, None] >> shifts[None, :]).astype(np.int64) & 1
        pairs = (frontier[:, None] * n_actions + np.arange(n_actions))[pair_open == 1]
        pairs.sort()
        starts = offsets[pairs]
        counts = offsets[pairs + 1] - starts
        if counts.sum() == 0:
            break
        # flat gather indices: for each pair, starts[i] .. starts[i]+counts[i]-1
        flat = np.repeat(starts, counts) + (
            np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        )
        targets = succs[flat]
        src_pairs = np.repeat(pairs, counts)
        fresh = ~seen[targets]
        targets = targets[fresh]
        src_pairs = src_pairs[fresh]
        if targets.size == 0:
            break
        order = np.lexsort((src_pairs, targets))
        targets = targets[order]
        src_pairs = src_pairs[order]
        first = np.ones(targets.size, dtype=bool)
        first[1:] = targets[1:] != targets[:-1]
        targets = targets[first]
        src_pairs = src_pairs[first]
        seen[targets] = True
        parent_state[targets] = src_pairs // n_actions
        parent_action[targets] = src_pairs % n_actions
        bad = targets[~safe[targets]]
        if bad.size:
            return int(bad[0]), parent_state, parent_action
        frontier = targets
    return -1, parent_state, parent_action


def bfs_unsafe(n_states, n_actions, offsets, succs, allow, initials, safe):
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    succs = np.ascontiguousarray(succs, dtype=np.int32)
    allow = np.ascontiguousarray(allow, dtype=np.uint64)
    initials = np.ascontiguousarray(initials, dtype=np.int64)
    safe = np.ascontiguousarray(safe, dtype=np.bool_)
    if USE_NUMBA:
        return bfs_unsafe_loop(
            n_states, n_actions, offsets, succs, allow, initials, safe
        )
    return bfs_unsafe_numpy(
        n_states, n_actions, offsets, succs, allow, initials, safe
    )
