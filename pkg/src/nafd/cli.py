"""Command-line entry point.

Exit codes: 0 on success, 1 if any sweep point failed, 2 on configuration
errors.
"""

import argparse
import sys

from .config import KINDS, Sweep, load_tree
from .errors import ConfigurationError
from .harness import make_spec, render, run_experiment, write_atomic

COMMANDS = {k.replace("_", "-"): k for k in KINDS}


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _common(p):
    p.add_argument("--config", metavar="PATH", help="YAML or JSON config file")
    p.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
    p.add_argument("--trials", type=_positive, help="Monte-Carlo trials per point")
    p.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    p.add_argument("--emit", choices=("csv", "json"), help="output format")
    p.add_argument("--workers", type=_positive, default=1, help="worker processes")
    p.add_argument("--sweep", metavar="AXIS=FROM:STEP:TO", help="swept system key")
    p.add_argument("--exhaustive", action="store_true", default=None,
                   help="also run exhaustive scheduling (schedule-compare)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nafd", description="Deterministic-equivalent and Monte-Carlo analysis "
        "of network-assisted full-duplex cell-free massive MIMO.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        _common(sub.add_parser(name, help=f"run the {name} experiment"))
    _common(sub.add_parser("run", help="run the experiment named by experiment.kind"))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        tree = load_tree(args.config) if args.config else {}
        exp = tree.get("experiment", {}) if isinstance(tree.get("experiment"), dict) else {}
        if args.command == "run":
            kind = exp.get("kind")
            if kind is None:
                raise ConfigurationError("required by the run command", "experiment.kind")
        else:
            kind = COMMANDS[args.command]
        sweep = Sweep.parse(args.sweep) if args.sweep else None
        spec = make_spec(kind, tree, seed=args.seed, trials=args.trials, out=args.out,
                         emit=args.emit, sweep=sweep, exhaustive=args.exhaustive)
        outcome = run_experiment(spec, tree, workers=args.workers)
    except (ConfigurationError, OSError) as exc:
        print(f"nafd: configuration error: {exc}", file=sys.stderr)
        return 2
    text = render(outcome.rows, spec.emit)
    if spec.out:
        write_atomic(spec.out, text)
    else:
        sys.stdout.write(text)
    for r in outcome.rows:
        if r["status"] != "ok":
            print(f"nafd: point {r['point_index']} {r['metric']} failed: {r['message']}",
                  file=sys.stderr)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
