"""Command line entry point: ``partcert <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import harness
from .harness import RunConfig

COMMANDS = {
    "certify": "pointwise",
    "sweep-width": "width-sweep",
    "sweep-depth": "depth-sweep",
    "np-fixture": "np-fixture",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="partcert", description="Certify ReLU networks with partitioned relaxations.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, experiment in COMMANDS.items():
        s = sub.add_parser(name, help=f"run the {experiment} experiment")
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--seed", type=int)
        s.add_argument("--methods", help="comma-separated method names")
        s.add_argument("--epsilon", type=float)
        s.add_argument("--output", help="results CSV path (companion files are written next to it)")
        s.add_argument("--workers", type=int)
        if name == "certify":
            s.add_argument("--problem", help="single problem JSON file (overrides network/nominals)")
            s.add_argument("--network", help="network JSON file")
            s.add_argument("--dataset", help="CSV of nominal inputs (features then label)")
            s.add_argument("--count", type=int, help="number of nominals drawn from the dataset")
        if name == "np-fixture":
            s.add_argument("--trials", type=int)
    return p


def build_config(args: argparse.Namespace) -> RunConfig:
    doc = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    cfg = RunConfig.from_dict({**doc, "experiment": COMMANDS[args.command]})
    over = {}
    for key in ("seed", "epsilon", "output", "workers"):
        val = getattr(args, key)
        if val is not None:
            over[key] = val
    if args.methods:
        over["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if getattr(args, "network", None):
        over["network"] = {"file": args.network}
    if getattr(args, "dataset", None) or getattr(args, "count", None):
        nom = dict(cfg.nominals) if "dataset" in cfg.nominals else {"dataset": "builtin:iris"}
        if args.dataset:
            nom["dataset"] = args.dataset
        if args.count is not None:
            nom["count"] = args.count
        over["nominals"] = nom
    if getattr(args, "trials", None) is not None:
        over["trials"] = args.trials
    return replace(cfg, **over)


def _print(out: harness.RunOutput) -> None:
    sys.stdout.write(harness.results_csv(out.rows))
    if out.summary:
        sys.stdout.write("\n" + harness.summary_csv(out.summary))
    for note in out.notes:
        print(note)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = build_config(args)
        if args.command == "certify" and args.problem:
            from .problem import load_problem
            problem = load_problem(args.problem)
            rows = harness.certify_problem(problem, cfg.methods, cfg, problem.name or "problem")
            out = harness.RunOutput(cfg, rows)
        else:
            out = harness.run(cfg)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"partcert: error: {exc}", file=sys.stderr)
        return 2
    _print(out)
    if cfg.output:
        for path in harness.write_outputs(out, cfg.output):
            print(f"wrote {path}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
