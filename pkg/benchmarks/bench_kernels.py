#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-NumPy/CPython fallbacks.

Usage:
    python benchmarks/bench_kernels.py

Covers the three hot paths: the safety-game fixpoint, counterexample BFS,
and the platoon episode kernel. The numba columns need AGSHIELD_NUMBA=1
(the default); the fallback columns always run the non-jitted code.
"""

import os
import subprocess
import sys
import time

import numpy as np

from agshield import kernels
from agshield.casestudies.platoon import (PlatoonModel, PlatoonParams,
                                          build_local_game, platoon_episodes)
from agshield.kernels import (bfs_unsafe_loop, bfs_unsafe_numpy,
                              losing_fixpoint_loop, losing_fixpoint_numpy)
from agshield.sim import allow_matrix, random_tables
from agshield.synthesis import assume_guarantee_synthesize


def timeit(fn, repeats=3):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


LOOP_LABEL = "numba loop" if kernels.USE_NUMBA else "cpython loop"


def show(name, t_loop, t_fallback, fallback_label="numpy"):
    speedup = t_fallback / t_loop if t_loop > 0 else float("inf")
    print(f"{name:<38} {LOOP_LABEL} {t_loop * 1000:9.1f} ms   "
          f"{fallback_label} {t_fallback * 1000:9.1f} ms   x{speedup:6.1f}")


def bench_fixpoint():
    model = PlatoonModel(PlatoonParams(n_cars=10))
    game = build_local_game(model.params, rear_crash=False)
    unsafe = ~model.local_safe_member(1)
    args = (game.n_states, game.n_actions, game.offsets, game.succs, unsafe)
    losing_fixpoint_loop(*args)   # warm the JIT cache
    t_loop, a = timeit(lambda: losing_fixpoint_loop(*args))
    t_np, b = timeit(lambda: losing_fixpoint_numpy(*args))
    assert np.array_equal(a, b)
    show(f"fixpoint ({game.n_states} states)", t_loop, t_np)


def bench_bfs():
    model = PlatoonModel(PlatoonParams(n_cars=2))
    ns = model.global_nagent()
    t = ns.sys
    phi = model.global_safe_member()
    allow = t.enabled_mask
    initials = np.array([model.global_obs_index(model.initial_state())],
                        dtype=np.int64)
    args = (t.n_states, t.n_actions, t.offsets, t.succs, allow, initials, phi)
    bfs_unsafe_loop(*args)
    t_loop, (h1, _, _) = timeit(lambda: bfs_unsafe_loop(*args))
    t_np, (h2, _, _) = timeit(lambda: bfs_unsafe_numpy(*args))
    assert (h1 < 0) == (h2 < 0)
    show(f"reachability BFS ({t.n_states} states)", t_loop, t_np)


def run_episode_batch(count):
    model = PlatoonModel(PlatoonParams(n_cars=10))
    shields, _ = assume_guarantee_synthesize(model, assume=True)
    allow = allow_matrix(model, shields)
    tables = random_tables(model)
    seeds = np.arange(1, count + 1, dtype=np.uint64)
    costs = np.zeros((count, model.n_agents))
    unsafe = np.zeros(count, dtype=np.int64)
    err = np.zeros(3, dtype=np.int64)
    st = model.initial_state()
    p = model.params
    platoon_episodes(p.n_cars, p.nv, p.zero_idx, p.v_min, p.d_max, 100,
                     allow, tables, -1, np.zeros((1, 3)), 0.0, 1.0,
                     np.zeros(count), seeds,
                     st[: p.n_cars], st[p.n_cars:], costs, unsafe, err)
    return costs


def bench_episodes():
    # backend selection happens at import time, so the fallback timing
    # comes from a child process with AGSHIELD_NUMBA=0
    n_ep = 200
    run_episode_batch(2)
    t_here, _ = timeit(lambda: run_episode_batch(n_ep), repeats=2)
    if not kernels.USE_NUMBA:
        print(f"platoon episodes ({n_ep} x 100 steps):  fallback "
              f"{t_here * 1000:.1f} ms")
        return
    n_child = 20
    env = dict(os.environ, AGSHIELD_NUMBA="0")
    out = subprocess.run(
        [sys.executable, __file__, "--episodes-only", str(n_child)],
        env=env, capture_output=True, text=True, check=True,
    )
    t_child = float(out.stdout.strip().split()[-1]) * (n_ep / n_child)
    show(f"platoon episodes ({n_ep} x 100 steps)", t_here, t_child,
         fallback_label="cpython")


def main():
    if len(sys.argv) > 2 and sys.argv[1] == "--episodes-only":
        count = int(sys.argv[2])
        t, _ = timeit(lambda: run_episode_batch(count), repeats=1)
        print(f"EPISODES_SECONDS {t:.6f}")
        return
    print(f"backend: {'numba' if kernels.USE_NUMBA else 'numpy fallback'} "
          f"(AGSHIELD_NUMBA)")
    bench_fixpoint()
    bench_bfs()
    bench_episodes()


if __name__ == "__main__":
    main()
