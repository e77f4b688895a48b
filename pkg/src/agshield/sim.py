"""Deterministic seeded episode simulator and evaluation statistics.

Episode seeds derive from a master seed through SplitMix64, and all
in-episode draws come from one SplitMix64 stream per episode, consumed in
a fixed order (agents ascending, then environment draws). Identical
inputs therefore give byte-identical CSV output, on either kernel path.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InitialNotWinning, NoAllowedAction
from .kernels import Stream, episode_seed


@dataclass
class EpisodeConfig:
    length: int
    master_seed: int
    record_trace: bool = False

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("episode length must be positive")


@dataclass
class EpisodeResult:
    costs: np.ndarray          # per-agent totals
    safe: bool
    steps: int
    unsafe_steps: int
    seed: int
    trace: list = None

    @property
    def total_cost(self):
        return float(self.costs.sum())


@dataclass
class EvalStats:
    mean_cost: float
    min_cost: float
    max_cost: float
    fraction_safe: float
    episodes: int


def full_mask(n_actions):
    return np.uint64((1 << n_actions) - 1)


def allow_matrix(model, shields):
    """uint64[n_agents, n_obs] allow table; all-enabled when unshielded."""
    n_obs = max(model.n_obs(i) for i in range(model.n_agents))
    out = np.zeros((model.n_agents, n_obs), dtype=np.uint64)
    for i in range(model.n_agents):
        if shields is None or shields[i] is None:
            out[i, : model.n_obs(i)] = full_mask(model.n_local_actions(i))
        else:
            out[i, : model.n_obs(i)] = shields[i].allow
    return out


def random_tables(model):
    """Policy tables that sample uniformly over the allowed mask (-1)."""
    n_obs = max(model.n_obs(i) for i in range(model.n_agents))
    return np.full((model.n_agents, n_obs), -1, dtype=np.int64)


def check_initial_winning(model, shields):
    if shields is None:
        return
    state = model.initial_state()
    for i in range(model.n_agents):
        if shields[i] is None:
            continue
        obs = model.observe_index(i, state)
        if not shields[i].winning[obs]:
            raise InitialNotWinning(i, obs)


def sample_from_mask(rng, mask):
    n = bin(int(mask)).count("1")
    k = int(rng.uniform() * n)
    seen = 0
    for a in range(64):
        if int(mask) >> a & 1:
            if seen == k:
                return a
            seen += 1
    raise AssertionError("empty mask")


def run_episode(model, tables, allow, cfg, index):
    """Reference (non-kernel) episode: tables rows hold greedy actions,
    -1 entries sample uniformly over the allowed mask."""
    seed = episode_seed(cfg.master_seed, index)
    rng = Stream(seed)
    state = model.initial_state()
    n = model.n_agents
    costs = np.zeros(n)
    unsafe = 0 if model.is_safe(state) else 1
    trace = [state.copy() if hasattr(state, "copy") else state] \
        if cfg.record_trace else None
    actions = np.zeros(n, dtype=np.int64)
    for t in range(cfg.length):
        for i in range(n):
            obs = model.observe_index(i, state)
            mask = allow[i, obs]
            if mask == 0:
                raise NoAllowedAction(i, obs)
            if tables[i, obs] >= 0:
                actions[i] = tables[i, obs]
            else:
                actions[i] = sample_from_mask(rng, mask)
        state, step_costs, safe = model.step(state, actions, rng)
        costs += step_costs
        if not safe:
            unsafe += 1
        if trace is not None:
            trace.append(state.copy() if hasattr(state, "copy") else state)
    return EpisodeResult(costs=costs, safe=unsafe == 0, steps=cfg.length,
                         unsafe_steps=unsafe, seed=seed, trace=trace)


def _episode_seeds(master, n_episodes):
    return np.array(
        [episode_seed(master, i) for i in range(n_episodes)], dtype=np.uint64
    )


def _evaluate_range(model, tables, allow, master, start, stop, length):
    seeds = np.array(
        [episode_seed(master, i) for i in range(start, stop)], dtype=np.uint64
    )
    if hasattr(model, "eval_episodes"):
        costs, unsafe, err = model.eval_episodes(allow, tables, seeds, length)
        if err[0]:
            raise NoAllowedAction(int(err[1]), int(err[2]))
        return costs, unsafe, seeds
    cfg = EpisodeConfig(length=length, master_seed=master)
    costs = np.zeros((stop - start, model.n_agents))
    unsafe = np.zeros(stop - start, dtype=np.int64)
    for k, i in enumerate(range(start, stop)):
        r = run_episode(model, tables, allow, cfg, i)
        costs[k] = r.costs
        unsafe[k] = r.unsafe_steps
    return costs, unsafe, seeds


def evaluate(model, tables, shields, n_episodes, master_seed,
             length=None, jobs=1):
    """Aggregate n_episodes seeded episodes; deterministic given the master
    seed regardless of jobs. Returns (EvalStats, rows) where each row is
    (episode, seed, steps, safe, total, per-agent costs)."""
    length = length or model.default_episode_len
    check_initial_winning(model, shields)
    allow = allow_matrix(model, shields)
    if tables is None:
        tables = random_tables(model)
    if jobs > 1 and n_episodes >= 2 * jobs:
        bounds = np.linspace(0, n_episodes, jobs + 1, dtype=int)
        chunks = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [
                pool.submit(_evaluate_range, model, tables, allow,
                            master_seed, int(a), int(b), length)
                for a, b in zip(bounds[:-1], bounds[1:])
                if b > a
            ]
            chunks = [f.result() for f in futs]
        costs = np.concatenate([c[0] for c in chunks])
        unsafe = np.concatenate([c[1] for c in chunks])
        seeds = np.concatenate([c[2] for c in chunks])
    else:
        costs, unsafe, seeds = _evaluate_range(
            model, tables, allow, master_seed, 0, n_episodes, length
        )
    totals = costs.sum(axis=1)
    rows = []
    for e in range(n_episodes):
        rows.append((e, int(seeds[e]), length, int(unsafe[e] == 0),
                     float(totals[e]), costs[e]))
    stats = EvalStats(
        mean_cost=float(totals.mean()),
        min_cost=float(totals.min()),
        max_cost=float(totals.max()),
        fraction_safe=float((unsafe == 0).mean()),
        episodes=n_episodes,
    )
    return stats, rows


def write_eval_csv(path, rows, n_agents):
    header = "episode,seed,steps,safe,total_cost," + ",".join(
        f"cost_agent_{i + 1}" for i in range(n_agents)
    )
    lines = [header]
    for (episode, seed, steps, safe, total, costs) in rows:
        parts = [str(episode), str(seed), str(steps), str(safe),
                 f"{total:.6f}"] + [f"{c:.6f}" for c in costs]
        lines.append(",".join(parts))
    data = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(data)
    return data
