"""Command-line front end tying synthesis, learning, and evaluation into
reproducible experiments.

Output file paths are echoed to stdout, one per line; human-readable
reports and progress go to stderr. Exit code 0 means every requested
artifact was produced and every embedded check passed.
"""

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from .casestudies import CounterexampleToy, PlantModel, PlatoonModel
from .casestudies.params import parse_kv_file, plant_params, platoon_params
from .errors import AgshieldError
from .learning import (LearnerConfig, cascading_learn, centralized_learn,
                       deserialize_policy, serialize_policy,
                       write_training_csv)
from .sim import evaluate, write_eval_csv
from .synthesis import (assume_guarantee_synthesize, certify_compositional,
                        deserialize_shield, oracle_global_pipeline,
                        serialize_shield)


def _log(msg):
    print(msg, file=sys.stderr)


def _emit_path(path):
    print(str(path))


def build_model(args):
    kv = parse_kv_file(args.params) if args.params else None
    if args.case == "platoon":
        overrides = {}
        if args.n is not None:
            overrides["n_cars"] = args.n
        return PlatoonModel(platoon_params(kv, **overrides))
    if args.case == "plant":
        return PlantModel(plant_params(kv))
    if kv or args.n is not None:
        raise ValueError("the toy case takes no parameters")
    return CounterexampleToy()


def default_learner_config(case):
    """Per-case experiment defaults (tabular TD needs a denser budget and a
    discount on the platoon than the generic defaults)."""
    if case == "platoon":
        return LearnerConfig(episodes=30000, gamma=0.95)
    if case == "plant":
        return LearnerConfig(episodes=3000, gamma=0.95)
    return LearnerConfig()


def variant_slug(key):
    case = key[0]
    if case == "plant":
        slug = f"outdeg{key[1]}"
        if len(key) > 2:
            slug += f"_prov{key[2]}"
        return slug
    return "_".join(str(p) for p in key[1:])


def shield_path(out, case, key):
    return Path(out) / f"shield_{case}_{variant_slug(key)}.dshield"


def policy_path(out, case, agent):
    return Path(out) / f"policy_{case}_agent{agent + 1}.dpolicy"


def out_dir(args):
    out = args.out or os.environ.get("AGSHIELD_OUT") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_shields(model, out, case, assume=True, required=True):
    """Per-agent shields from the per-variant files written by synth."""
    shields = []
    for i in range(model.n_agents):
        path = shield_path(out, case, model.variant_key(i, assume))
        if not path.exists():
            if required:
                raise FileNotFoundError(f"missing shield file {path}; "
                                        f"run `agshield synth` first")
            return None
        shields.append(deserialize_shield(path.read_bytes()))
    return shields


def load_policy_tables(model, policies_dir, case):
    n_obs = max(model.n_obs(i) for i in range(model.n_agents))
    tables = np.full((model.n_agents, n_obs), -1, dtype=np.int64)
    for i in range(model.n_agents):
        path = policy_path(policies_dir, case, i)
        if not path.exists():
            raise FileNotFoundError(f"missing policy file {path}")
        table, space, _ = deserialize_policy(path.read_bytes())
        if space.size != model.n_obs(i):
            raise ValueError(f"{path}: policy space does not match the model")
        tables[i, : model.n_obs(i)] = table
    return tables


def cmd_synth(args):
    model = build_model(args)
    out = out_dir(args)
    assume = not args.no_assumptions
    t0 = time.perf_counter()
    if args.backend == "oracle":
        shields = oracle_global_pipeline(model, assume)
        report_lines = [
            f"agent {i + 1}: winning={sh.winning_fraction():.6f}"
            for i, sh in enumerate(shields)
        ]
        paths = []
        for i, sh in enumerate(shields):
            path = Path(out) / f"shield_{args.case}_agent{i + 1}.dshield"
            path.write_bytes(serialize_shield(sh))
            paths.append(path)
    else:
        shields, report = assume_guarantee_synthesize(model, assume)
        report_lines = report.lines()
        written = {}
        for row in report.per_agent:
            if row.variant not in written:
                path = shield_path(out, args.case, row.variant)
                path.write_bytes(serialize_shield(shields[row.agent]))
                written[row.variant] = path
        paths = list(written.values())
    report_lines.append(f"total wall time: {time.perf_counter() - t0:.3f}s")
    report_path = Path(out) / f"synth_report_{args.case}.txt"
    report_path.write_text("\n".join(report_lines) + "\n")
    for line in report_lines:
        _log(line)
    for path in paths:
        _emit_path(path)
    _emit_path(report_path)
    return 0


def cmd_check(args):
    model = build_model(args)
    shields = None
    if args.out:
        shields = load_shields(model, out_dir(args), args.case,
                               required=False)
        if shields is not None:
            _log("checking shield files from " + str(args.out))
    res = certify_compositional(model, assume=True, shields=shields)
    for i, eq in enumerate(res.bitmask_equal):
        _log(f"agent {i + 1}: oracle bitmask {'match' if eq else 'MISMATCH'}")
    _log(f"model check: {'safe' if res.modelcheck_safe else 'UNSAFE'} "
         f"from {res.winning_initials} winning initial states")
    if not res.modelcheck_safe and res.counterexample is not None:
        _log(f"counterexample of length {len(res.counterexample)}: "
             f"{res.counterexample.states}")
    return 0 if res.ok else 1


def cmd_learn(args):
    model = build_model(args)
    out = out_dir(args)
    shields = load_shields(model, out, args.case)
    cfg = default_learner_config(args.case)
    if args.episodes is not None:
        cfg.episodes = args.episodes
    cfg.master_seed = args.seed
    if args.centralized:
        q, ep_costs, ep_unsafe = centralized_learn(model, shields, cfg)
        rows = [(-1, e, 0, float(ep_costs[e]), int(ep_unsafe[e]))
                for e in range(cfg.episodes)]
        csv_path = Path(out) / f"training_log_{args.case}_central.csv"
        write_training_csv(csv_path, rows)
        _log(f"centralized learning done; final episode cost "
             f"{ep_costs[-1]:.1f}")
        _emit_path(csv_path)
        return 0
    res = cascading_learn(model, shields, cfg)
    unsafe_total = sum(r[4] for r in res.log_rows)
    _log(f"training order: {[a + 1 for a in res.order]}")
    _log(f"unsafe training steps: {unsafe_total}")
    paths = []
    for i in range(model.n_agents):
        path = policy_path(out, args.case, i)
        path.write_bytes(serialize_policy(
            res.tables[i, : model.n_obs(i)], model.obs_space(i),
            model.local_action_labels(i),
        ))
        paths.append(path)
    csv_path = Path(out) / f"training_log_{args.case}.csv"
    write_training_csv(csv_path, res.log_rows)
    for path in paths:
        _emit_path(path)
    _emit_path(csv_path)
    return 0 if unsafe_total == 0 else 1


def cmd_eval(args):
    model = build_model(args)
    out = out_dir(args)
    shields = load_shields(model, out, args.case)
    if args.random:
        tables = None
        tag = "random"
    else:
        policies_dir = args.policies or out
        tables = load_policy_tables(model, policies_dir, args.case)
        tag = "learned"
    stats, rows = evaluate(model, tables, shields, args.episodes, args.seed,
                           jobs=args.jobs)
    csv_path = Path(out) / f"eval_{args.case}_{tag}.csv"
    write_eval_csv(csv_path, rows, model.n_agents)
    _log(f"episodes={stats.episodes} mean={stats.mean_cost:.6f} "
         f"min={stats.min_cost:.6f} max={stats.max_cost:.6f} "
         f"fraction_safe={stats.fraction_safe:.6f}")
    _emit_path(csv_path)
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="agshield",
        description="distributed shield synthesis, cascading learning, and "
                    "evaluation for multi-agent case studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, episodes_default=None):
        p.add_argument("--case", choices=("platoon", "plant", "toy"),
                       default="toy")
        p.add_argument("--params", help="key = value model parameter file")
        p.add_argument("--n", type=int, default=None,
                       help="platoon size (number of cars)")
        p.add_argument("--out", default=None,
                       help="output directory (default $AGSHIELD_OUT or ./out)")
        p.add_argument("--seed", type=lambda v: int(v, 0), default=1,
                       help="master seed (64-bit)")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker process cap")
        if episodes_default is not None:
            p.add_argument("--episodes", type=int, default=episodes_default)

    p = sub.add_parser("synth", help="synthesize distributed shields")
    common(p)
    p.add_argument("--backend", choices=("compositional", "oracle"),
                   default="compositional")
    p.add_argument("--no-assumptions", action="store_true",
                   help="disable assume-guarantee pruning")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("check", help="certify compositional shields against "
                                     "the global oracle")
    common(p)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("learn", help="cascading (or centralized) learning")
    common(p)
    p.add_argument("--episodes", type=int, default=None,
                   help="episodes per agent")
    p.add_argument("--centralized", action="store_true",
                   help="train one joint policy instead (small instances)")
    p.set_defaults(fn=cmd_learn)

    p = sub.add_parser("eval", help="evaluate policies over seeded episodes")
    common(p, episodes_default=1000)
    p.add_argument("--random", action="store_true",
                   help="shielded uniform-random baseline")
    p.add_argument("--policies", default=None,
                   help="directory holding policy files (default --out)")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (AgshieldError, FileNotFoundError, ValueError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
