"""Command-line front end.

Exit codes: 0 success, 1 invalid config/input, 2 the run diverged (the partial
trace is still written), 3 I/O failure.  Wall time is reported on stdout only;
trace files carry step/sample/evaluation counters instead, so their bytes stay
machine-independent.
"""
from __future__ import annotations

import argparse
import sys

from .harness import (
    ConfigError,
    compare_runs,
    load_config,
    run_experiment,
    serialize_config,
)
from .objective import DatasetError
from .topology import TopologyError, build_complete, build_regular3, build_ring

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_DIVERGED = 2
EXIT_IO = 3

_BUILDERS = {"ring": build_ring, "regular3": build_regular3, "complete": build_complete}


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    result = run_experiment(cfg, base_dir=args.output_dir)
    if result.diverged:
        exc = result.divergence
        print(
            f"diverged at step {exc.step} on node {exc.node}; "
            f"partial trace at {result.output_path}",
            file=sys.stderr,
        )
        return EXIT_DIVERGED
    print(f"wrote {result.output_path} ({len(result.trace)} rows)")
    if result.lyapunov_path:
        print(f"wrote {result.lyapunov_path}")
    if result.trace:
        print(f"final_gap = {result.trace[-1].stationary_gap:.6g}")
    print(f"wall_time = {result.wall_time:.3f}s")
    if args.report:
        from .report import report_run

        for path in report_run(result.output_path, args.output_dir):
            print(f"wrote {path}")
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    sys.stdout.write(serialize_config(cfg))
    return EXIT_OK


def _cmd_nu(args: argparse.Namespace) -> int:
    matrix = _BUILDERS[args.topology](args.nodes)
    print(f"{matrix.nu:.12g}")
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    if args.report:
        from .report import report_compare

        written, comparison = report_compare(args.traces, args.output_dir)
    else:
        written, comparison = [], compare_runs(args.traces)
    print(f"{'rank':<4} {'final_gap':<24} {'final_loss':<24} trace")
    for rank, (path, gap, loss, _) in enumerate(comparison.entries, start=1):
        print(f"{rank:<4} {gap:<24.17g} {loss:<24.17g} {path}")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    from .report import report_run

    for path in report_run(args.trace, args.output_dir):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adamdo",
        description="Adaptive momentum decentralized optimization harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config and write its trace")
    p_run.add_argument("config", help="JSON experiment config")
    p_run.add_argument("--output-dir", default=None, help="directory for outputs")
    p_run.add_argument("--report", action="store_true", help="also render figures")
    p_run.set_defaults(handler=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a config and print its canonical form")
    p_val.add_argument("config", help="JSON experiment config")
    p_val.set_defaults(handler=_cmd_validate)

    p_nu = sub.add_parser("nu", help="print the mixing contraction factor of a topology")
    p_nu.add_argument("topology", choices=sorted(_BUILDERS))
    p_nu.add_argument("nodes", type=int)
    p_nu.set_defaults(handler=_cmd_nu)

    p_cmp = sub.add_parser("compare", help="rank recorded traces by final stationary gap")
    p_cmp.add_argument("traces", nargs="+", help="trace CSV files")
    p_cmp.add_argument("--output-dir", default=None, help="directory for outputs")
    p_cmp.add_argument("--report", action="store_true", help="also render overlay figures")
    p_cmp.set_defaults(handler=_cmd_compare)

    p_rep = sub.add_parser("report", help="render figures for one recorded trace")
    p_rep.add_argument("trace", help="trace CSV file")
    p_rep.add_argument("--output-dir", default=None, help="directory for figures")
    p_rep.set_defaults(handler=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, DatasetError, TopologyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
