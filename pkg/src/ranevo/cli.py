"""Command line entry point.

Three subcommands: ``run`` plays one experiment seed and writes the CSV
outputs, ``validate`` checks a configuration document and prints its
shape, ``summarize`` recomputes the per-agent summary from a previous
run's metrics.csv. Exit code 0 on success, 2 on any diagnosed error.
"""

from __future__ import annotations

import argparse
import csv
import sys

from .config import ConfigError, load_config
from .harness import MetricsRecord, run_experiment, summarize, write_outputs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ranevo",
        description="Evolution-assisted RAN control experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="play one experiment seed and write CSVs")
    run.add_argument("--config", required=True, help="path to a config JSON file")
    run.add_argument("--seed", type=int, required=True, help="run seed")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument(
        "--baseline",
        action="store_true",
        help="disable the optimizer (the no-GA comparison runs)",
    )
    run.add_argument(
        "--episodes", type=int, default=None, help="override the configured episode count"
    )

    val = sub.add_parser("validate", help="check a config document and exit")
    val.add_argument("--config", required=True, help="path to a config JSON file")

    summ = sub.add_parser("summarize", help="recompute summaries from metrics.csv")
    summ.add_argument(
        "--in", dest="in_dir", required=True, help="directory holding metrics.csv"
    )
    summ.add_argument(
        "--ne-interval", type=int, default=None, help="window size (default: infer 125)"
    )
    summ.add_argument(
        "--target-return", type=float, default=950.0, help="target episode return"
    )
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    ga_enabled = False if args.baseline else None
    result = run_experiment(cfg, args.seed, ga_enabled=ga_enabled, episodes=args.episodes)
    paths = write_outputs(result, args.out)
    for s in result.summaries:
        reached = s.episodes_to_target if s.episodes_to_target is not None else "never"
        print(
            f"agent {s.agent_id}: target at episode {reached}, "
            f"final window avg {s.final_window_avg:.1f}, "
            f"jobs {s.total_ne_jobs}, stalled {str(s.stalled).lower()}"
        )
    print("wrote " + ", ".join(paths))
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(
        f"ok: {cfg.name} ({cfg.model}, {cfg.n_agents} agent(s), "
        f"{cfg.episodes} episodes, ne_interval {cfg.ne_interval}, "
        f"{cfg.env.cells} cell(s) x {cfg.env.ues} UEs)"
    )
    return 0


def _load_metrics_csv(path) -> list:
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            records.append(
                MetricsRecord(
                    run_seed=int(row["run_seed"]),
                    episode=int(row["episode"]),
                    episode_return=float(row["return"]),
                    epsilon=float(row["epsilon"]),
                    drl_action_time_ms=float(row["drl_action_time_ms"]),
                    ne_active=row["ne_active"] == "true",
                    ne_job_ms=float(row["ne_job_ms"]) if row["ne_job_ms"] else None,
                    ga_triggered=row["ga_triggered"] == "true",
                    deployed=row["deployed"] == "true",
                    agent_id=int(row["agent_id"]),
                )
            )
    return records


def _cmd_summarize(args) -> int:
    import os

    path = os.path.join(args.in_dir, "metrics.csv")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no metrics.csv in '{args.in_dir}'")
    records = _load_metrics_csv(path)
    if not records:
        raise ValueError(f"'{path}' holds no data rows")
    interval = args.ne_interval if args.ne_interval is not None else 125
    episodes = max(r.episode for r in records)
    interval = min(interval, episodes)
    for s in summarize(records, interval, args.target_return):
        reached = s.episodes_to_target if s.episodes_to_target is not None else "never"
        print(
            f"agent {s.agent_id}: target at episode {reached}, "
            f"final window avg {s.final_window_avg:.1f}, "
            f"jobs {s.total_ne_jobs}, stalled {str(s.stalled).lower()}"
        )
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        return _cmd_summarize(args)
    except (ConfigError, OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
