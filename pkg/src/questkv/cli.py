"""``questkv`` command line: verify, recall, traffic and bench subcommands.

Every subcommand writes RFC 4180 CSV (header row, UTF-8) to ``--out`` or
stdout. Exit status is 0 on success, 1 when ``verify`` finds a failure and
2 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from questkv import experiments, verify
from questkv.policies import PolicyKind
from questkv.workloads import TraceFormatError, read_trace

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2

log = logging.getLogger("questkv")


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _str_list(text: str) -> list[str]:
    return [x.strip().lower() for x in text.split(",") if x.strip()]


def _write_csv(rows: list[dict], fields: list[str], out: str | None) -> None:
    if out:
        f = open(out, "w", newline="", encoding="utf-8")
    else:
        f = sys.stdout
    try:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\r\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if out:
            f.close()


def cmd_verify(args) -> int:
    suites = args.suite or list(verify.SUITES)
    unknown = set(suites) - set(verify.SUITES)
    if unknown:
        raise ConfigError(f"unknown suite(s) {sorted(unknown)}; choose from {verify.SUITES}")
    results = verify.run_suites(suites, seed=args.seed, scale=args.scale,
                                fault=args.inject_fault)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status}  checked={r.checked} failures={r.failures} "
              f"{r.seconds:.2f}s  {r.detail}", file=sys.stderr)
    if args.out:
        _write_csv([vars(r) for r in results],
                   ["name", "passed", "checked", "failures", "seconds", "detail"], args.out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY_FAILED


def cmd_recall(args) -> int:
    try:
        policies = tuple(PolicyKind(p).value for p in args.policy)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    page_size = args.page_size[0]
    setup = experiments.RecallSetup(
        policies=policies, budgets=tuple(args.budget), page_size=page_size, n=args.n,
        force_include_recent=args.force_include_recent, sink_count=args.sink_count,
        with_error=not args.no_error,
    )
    if args.trace:
        try:
            trace = read_trace(args.trace)
        except (OSError, TraceFormatError) as e:
            raise ConfigError(f"cannot read trace {args.trace}: {e}") from None
        _check_budgets(setup, len(trace))
        rows = experiments.simulate_recall(trace, setup, seed_label=Path(args.trace).name)
        rows.extend(experiments.summarize(rows))
    else:
        length = args.length[0]
        _check_budgets(setup, length)
        seeds = range(args.seed, args.seed + args.reps)
        rows = experiments.run_recall_grid(seeds, length, args.head_dim, setup)
    if args.means_only:
        rows = [r for r in rows if r["step"] == "mean"]
    _write_csv(rows, experiments.RECALL_FIELDS, args.out)
    return EXIT_OK


def _check_budgets(setup: experiments.RecallSetup, length: int) -> None:
    if max(setup.budgets) > length:
        raise ConfigError(f"budget {max(setup.budgets)} exceeds trace length {length}")
    if setup.n > length:
        raise ConfigError(f"--n {setup.n} exceeds trace length {length}")
    if "quest" in setup.policies and min(setup.budgets) < setup.page_size:
        raise ConfigError(
            f"quest budget {min(setup.budgets)} is smaller than page size {setup.page_size}"
        )


def cmd_traffic(args) -> int:
    rows = experiments.traffic_rows(args.page_size, args.length, args.budget,
                                    head_dim=args.head_dim, seed=args.seed,
                                    counted=not args.model_only)
    if not rows:
        raise ConfigError("no grid point satisfies page_size <= budget <= length")
    for r in rows:
        if r["overhead_warning"]:
            log.warning("page_size=%s length=%s budget=%s: modelled traffic %.4f of dense; "
                        "estimation overhead erases the saving", r["page_size"],
                        r["token_count"], r["token_budget"], r["fraction_model"])
    _write_csv(rows, experiments.TRAFFIC_FIELDS, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    rows = []
    for S in args.page_size:
        for L in args.length:
            for B in args.budget:
                if B > L:
                    raise ConfigError(f"budget {B} exceeds length {L}")
                if B < S:
                    raise ConfigError(f"budget {B} is smaller than page size {S}")
                rows.extend(experiments.bench_rows(
                    L, S, B, head_dim=args.head_dim, reps=args.reps, warmup=args.warmup,
                    seed=args.seed, force_include_recent=args.force_include_recent))
    print(f"# CPU wall-clock analog: reps={args.reps} warmup={args.warmup}; "
          "timings are host-dependent, bytes columns are deterministic", file=sys.stderr)
    _write_csv(rows, experiments.BENCH_FIELDS, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="CSV output path (default: stdout)")
    common.add_argument("--head-dim", type=int, default=128)
    common.add_argument("--force-include-recent", action=argparse.BooleanOptionalAction,
                        default=True, help="always attend the newest page (default: on)")

    parser = argparse.ArgumentParser(prog="questkv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run the invariant suites")
    p.add_argument("--suite", action="append", choices=verify.SUITES,
                   help="run only this suite (repeatable)")
    p.add_argument("--scale", type=float, default=1.0,
                   help="multiply default instance counts")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("recall", parents=[common], help="recall@n per policy and budget")
    p.add_argument("--policy", type=_str_list, default=["quest", "h2o", "tova", "streaming"],
                   help="comma-separated: full,quest,h2o,tova,streaming")
    p.add_argument("--budget", type=_int_list, default=[32, 64, 128, 256, 512])
    p.add_argument("--page-size", type=_int_list, default=[16])
    p.add_argument("--length", type=_int_list, default=[4096])
    p.add_argument("--trace", help="binary trace file instead of a generated trace")
    p.add_argument("--reps", type=int, default=1, help="number of seeds, starting at --seed")
    p.add_argument("--n", type=int, default=10, help="top-n cutoff for recall")
    p.add_argument("--sink-count", type=int, default=4, help="streaming attention sinks")
    p.add_argument("--means-only", action="store_true", help="omit per-step rows")
    p.add_argument("--no-error", action="store_true", help="skip output-error computation")
    p.set_defaults(func=cmd_recall)

    p = sub.add_parser("traffic", parents=[common], help="memory-traffic model vs counted bytes")
    p.add_argument("--page-size", type=_int_list, default=[16])
    p.add_argument("--length", type=_int_list, default=[65536])
    p.add_argument("--budget", type=_int_list, default=[4096])
    p.add_argument("--model-only", action="store_true", help="skip the instrumented run")
    p.set_defaults(func=cmd_traffic)

    p = sub.add_parser("bench", parents=[common], help="CPU timing and bytes touched per kernel")
    p.add_argument("--page-size", type=_int_list, default=[16])
    p.add_argument("--length", type=_int_list, default=[65536])
    p.add_argument("--budget", type=_int_list, default=[4096])
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "reps", 1) < 1:
        print("questkv: error: --reps must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ValueError as e:
        print(f"questkv: error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
