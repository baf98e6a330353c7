"""Command-line interface.

Exit codes: 0 on success, 2 on usage errors (bad flags, names or session
protocol), 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

from .benchmarks import REGISTRY_KEYS, get_benchmark
from .harness import (
    SessionError,
    UsageError,
    ask,
    config_from_mapping,
    init_session,
    points_to_csv,
    read_config_file,
    run_experiment,
    tell,
    write_summary,
    write_traces,
)
from .strategies import STRATEGIES

log = logging.getLogger("batchbo")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--function", help=f"benchmark name-dim, one of: {', '.join(REGISTRY_KEYS)}")
    p.add_argument("--strategy", help=f"one of: {', '.join(STRATEGIES)}")
    p.add_argument("--iters", type=int, help="iterations T (default 10*D)")
    p.add_argument("--init", type=int, help="initial points n0 (default 3*D)")
    p.add_argument("--batch", type=int, help="fixed batch size q for baselines")
    p.add_argument("--beta-sqrt", type=float, dest="beta_sqrt", help="UCB exploration weight (default 2)")
    p.add_argument("--gamma", type=float, help="kernel gamma (default 0.1*D)")
    p.add_argument("--replicates", type=int, help="independent replicates (default 20)")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--jobs", type=int, help="replicates run in parallel (default 1)")
    p.add_argument("--normalize", action="store_const", const="true", default=None,
                   help="optimize on the unit box instead of the native domain")
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--timing", action="store_true", default=None,
                   help="fill the wall_ms column (output is then not byte-reproducible)")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="batchbo", description="Batch Bayesian optimization experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    _add_run_flags(sub.add_parser("run", help="run one benchmark/strategy experiment"))

    p = sub.add_parser("bench-all", help="run every benchmark with every strategy")
    p.add_argument("--out", required=True)
    p.add_argument("--functions", default=",".join(REGISTRY_KEYS))
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("init", help="start an ask/tell session over a box")
    p.add_argument("--session", required=True)
    p.add_argument("--lower", type=_floats, help="comma-separated lower bounds")
    p.add_argument("--upper", type=_floats, help="comma-separated upper bounds")
    p.add_argument("--function", help="take the box from a registered benchmark instead")
    p.add_argument("--strategy", default="b3o")
    p.add_argument("--init", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--beta-sqrt", type=float, dest="beta_sqrt", default=2.0)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true")

    p = sub.add_parser("ask", help="print the next batch as CSV and mark it pending")
    p.add_argument("--session", required=True)
    p.add_argument("--out", help="write the CSV here instead of stdout")

    p = sub.add_parser("tell", help="record outcomes for the pending batch (maximized)")
    p.add_argument("--session", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--values", type=_floats, help="comma-separated outcomes in batch order")
    g.add_argument("--file", help="file with one outcome per line (nan for a failure)")
    return parser


def _run(args) -> int:
    values = read_config_file(args.config) if args.config else {}
    for key in ("function", "strategy", "iters", "init", "batch", "beta_sqrt", "gamma",
                "replicates", "seed", "jobs", "normalize", "timing", "out"):
        v = getattr(args, key)
        if v is not None:
            values[key.replace("_", "-")] = v
    if not values.get("out"):
        raise UsageError("--out is required")
    if not values.get("strategy"):
        values["strategy"] = "b3o"
    config = config_from_mapping(values)
    timing = str(values.get("timing", "false")).lower() in ("1", "true", "yes", "on")
    _experiment(config, values["out"], timing)
    return EXIT_OK


def _experiment(config, out: str, timing: bool = False):
    os.makedirs(out, exist_ok=True)
    log.info("running %s / %s: %d replicates", config.function, config.strategy, config.replicates)
    result = run_experiment(config)
    write_traces(result, os.path.join(out, "traces.csv"), timing=timing)
    summary = write_summary(result, os.path.join(out, "summary.json"), timing=timing)
    print(f"{config.function} {config.strategy}: median best {summary['final_best_median']:.6g}, "
          f"mean N {summary['mean_total_evaluations']:.2f}")
    return result


def _bench_all(args) -> int:
    functions = [f for f in args.functions.split(",") if f]
    strategies = [s for s in args.strategies.split(",") if s]
    configs = []
    for f in functions:
        for s in strategies:
            values = {"function": f, "strategy": s, "replicates": args.replicates, "seed": args.seed,
                      "jobs": args.jobs}
            configs.append(config_from_mapping(values))
    for config in configs:
        _experiment(config, os.path.join(args.out, config.function, config.strategy))
    return EXIT_OK


def _init(args) -> int:
    if args.function:
        try:
            domain = get_benchmark(args.function).domain
        except KeyError as err:
            raise UsageError(err.args[0]) from None
        lower, upper = domain.lower, domain.upper
    elif args.lower is not None and args.upper is not None:
        lower, upper = args.lower, args.upper
    else:
        raise UsageError("give --lower and --upper, or --function")
    init_session(args.session, lower, upper, args.strategy, args.init, args.batch, args.beta_sqrt,
                 args.gamma, args.seed, args.normalize)
    return EXIT_OK


def _ask(args) -> int:
    text = points_to_csv(ask(args.session))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _read_values(path: str) -> list[float]:
    """Last comma-separated field of each non-blank line; a non-numeric first line is a header."""
    vals = []
    with open(path, encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    for i, line in enumerate(lines):
        try:
            vals.append(float(line.split(",")[-1]))
        except ValueError:
            if i > 0:
                raise UsageError(f"cannot parse outcome {line!r}") from None
    return vals


def _tell(args) -> int:
    values = args.values if args.values is not None else _read_values(args.file)
    state = tell(args.session, values)
    print(f"iteration {state['iteration']}: {len(state['outcomes'])} observations")
    return EXIT_OK


COMMANDS = {"run": _run, "bench-all": _bench_all, "init": _init, "ask": _ask, "tell": _tell}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"batchbo: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, SessionError) as err:
        print(f"batchbo: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:  # noqa: BLE001 - reported as a runtime failure
        log.debug("failure", exc_info=True)
        print(f"batchbo: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
