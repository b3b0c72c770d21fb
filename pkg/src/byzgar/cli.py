"""Command-line interface: ``byzgar {aggregate,simulate,bench,check}``.

Exit codes: 0 success, 2 input/format error, 3 precondition violation,
4 internal numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bench, gar, gradfile, resilience
from .attacks import ATTACKS, AttackSpec
from .simulator import CostModel, LearningRate, SimConfig, run_simulation

log = logging.getLogger("byzgar")

EXIT_OK, EXIT_INPUT, EXIT_PRECONDITION, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_N = tuple(range(7, 40, 2))
DEFAULT_D = (100_000, 1_000_000)
LARGE_D = 10_000_000


class InputError(Exception):
    pass


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _dump_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _int_list(text: str) -> list[int]:
    """Parse ``7,9,11`` or an inclusive range ``7:39:2`` (step optional)."""
    try:
        if ":" in text:
            parts = [int(float(p)) for p in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1
            if step < 1:
                raise ValueError
            return list(range(start, stop + 1, step))
        return [int(float(p)) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list like 7,9,11 or a range like 7:39:2, got {text!r}")


def _rule_list(text: str) -> list[str]:
    rules = [r.strip() for r in text.split(",") if r.strip()]
    bad = [r for r in rules if r not in bench.BENCH_RULES]
    if bad or not rules:
        raise argparse.ArgumentTypeError(
            f"unknown rule(s) {', '.join(bad) or '(none)'}; valid rules: {', '.join(bench.BENCH_RULES)}"
        )
    return rules


def _attack_param(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    try:
        if not sep:
            raise ValueError
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")


# ---------------------------------------------------------------- aggregate


def cmd_aggregate(args) -> int:
    try:
        batch = gradfile.read_gradients(args.input)
    except OSError as exc:
        return _fail(EXIT_INPUT, f"cannot read {args.input}: {exc.strerror}")
    except gradfile.GradientFileError as exc:
        return _fail(EXIT_INPUT, f"{args.input}: {exc}")
    n = batch.shape[0]
    try:
        if args.f < 0 or args.f > gar.max_f(n, args.rule):
            bound = {"krum": "n >= 2f+3", "multi-krum": "n >= 2f+3", "multi-bulyan": "n >= 4f+3",
                     "median": "n >= 2f+1", "average": "f <= n-1"}[args.rule]
            raise gar.PreconditionError(f"{args.rule} requires {bound} (n={n}, f={args.f})")
        with np.errstate(over="raise", invalid="raise"):
            if args.rule in ("krum", "multi-krum"):
                m = 1 if args.rule == "krum" else args.m
                winner, out = gar.multi_krum(batch, args.f, m)
                print(winner)
            else:
                out = gar.aggregate(args.rule, batch, args.f, args.m)
    except gar.PreconditionError as exc:
        return _fail(EXIT_PRECONDITION, str(exc))
    except (FloatingPointError, ValueError) as exc:
        return _fail(EXIT_NUMERIC, f"aggregation failed: {exc}")
    if not np.all(np.isfinite(out)):
        return _fail(EXIT_NUMERIC, "aggregate is not finite (overflow)")
    gradfile.write_gradients(args.output, out.reshape(1, -1))
    return EXIT_OK


# ----------------------------------------------------------------- simulate

_TOP_KEYS = {
    "n", "f", "f_declared", "rule", "m", "attack", "model", "sigma", "batch_size", "steps", "lr", "seed",
    "threshold", "stop_at_threshold", "x0", "metrics_path", "summary_path", "plot_path",
}
_SUB_KEYS = {
    "attack": {"kind", "params"},
    "model": {"kind", "d", "optimum", "curvature", "amp", "freq"},
    "lr": {"schedule", "gamma0", "k0"},
}


def _check_keys(raw: dict) -> list[str]:
    bad = sorted(set(raw) - _TOP_KEYS)
    for name, allowed in _SUB_KEYS.items():
        sub = raw.get(name)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            bad.append(f"{name} (expected an object)")
            continue
        bad.extend(f"{name}.{k}" for k in sorted(set(sub) - allowed))
    return bad


def parse_sim_config(raw: dict) -> SimConfig:
    """Build a validated :class:`SimConfig`; raises ``InputError`` naming the offending keys."""
    if not isinstance(raw, dict):
        raise InputError("config must be a JSON object")
    bad = _check_keys(raw)
    if bad:
        raise InputError(f"unknown or malformed config keys: {', '.join(bad)}")
    try:
        model_raw = raw.get("model", {})
        model = CostModel.make(**model_raw)
        attack = AttackSpec.from_dict(raw.get("attack", {}))
        lr = LearningRate(**raw.get("lr", {}))
        x0 = raw.get("x0")
        config = SimConfig(
            n=int(raw.get("n", 11)),
            f=int(raw.get("f", 0)),
            f_declared=None if raw.get("f_declared") is None else int(raw["f_declared"]),
            rule=str(raw.get("rule", "average")),
            m=None if raw.get("m") is None else int(raw["m"]),
            attack=attack,
            model=model,
            sigma=float(raw.get("sigma", 0.5)),
            batch_size=int(raw.get("batch_size", 1)),
            steps=int(raw.get("steps", 100)),
            lr=lr,
            seed=int(raw.get("seed", 0)),
            threshold=float(raw.get("threshold", 1e-3)),
            stop_at_threshold=bool(raw.get("stop_at_threshold", False)),
            x0=None if x0 is None else tuple(float(v) for v in x0),
        )
        config.validate()
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from None
    return config


def _fmt(value: float) -> str:
    return repr(float(value)) if math.isfinite(value) else str(value).lower()


def write_metrics(records, stream) -> None:
    stream.write("step,loss,grad_norm,cosine\n")
    for r in records:
        stream.write(f"{r.step},{_fmt(r.loss)},{_fmt(r.grad_norm)},{_fmt(r.cosine)}\n")


def cmd_simulate(args) -> int:
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        return _fail(EXIT_INPUT, f"cannot read {path}: {exc.strerror}")
    except json.JSONDecodeError as exc:
        return _fail(EXIT_INPUT, f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}")
    try:
        config = parse_sim_config(raw)
    except InputError as exc:
        return _fail(EXIT_INPUT, str(exc))
    base = path.parent
    stem = path.stem
    metrics_path = base / raw.get("metrics_path", f"{stem}_metrics.csv")
    summary_path = base / raw.get("summary_path", f"{stem}_summary.json")
    plot_path = args.plot or (str(base / raw["plot_path"]) if raw.get("plot_path") else None)
    try:
        metrics = run_simulation(config)
    except (FloatingPointError, OverflowError) as exc:
        return _fail(EXIT_NUMERIC, f"simulation failed: {exc}")
    with open(metrics_path, "w", newline="") as fh:
        write_metrics(metrics.records, fh)
    _dump_json(metrics.summary(), str(summary_path))
    if plot_path:
        from .plots import plot_trajectory

        plot_trajectory(metrics.records, plot_path,
                        title=f"{config.rule}, n={config.n}, f={config.f}, attack={config.attack.kind}")
    return EXIT_OK


# -------------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    d_list = list(args.d) + ([LARGE_D] if args.large else [])
    records = [] if args.raw else None
    try:
        summaries = bench.run_bench(args.rules, args.n, d_list, repeats=args.repeats, seed=args.seed, records=records)
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))
    if args.output in (None, "-"):
        bench.write_summaries(summaries, sys.stdout)
    else:
        with open(args.output, "w", newline="") as fh:
            bench.write_summaries(summaries, fh)
    if args.raw:
        with open(args.raw, "w", newline="") as fh:
            bench.write_records(records, fh)
    if args.plot:
        from .plots import plot_bench

        plot_bench(summaries, args.plot, axis=args.plot_axis)
    return EXIT_OK


# -------------------------------------------------------------------- check


def cmd_check(args) -> int:
    try:
        attack = AttackSpec(args.attack, dict(args.attack_param or []))
        if args.d < 1:
            raise ValueError(f"d must be >= 1, got {args.d}")
        if args.f < 0 or args.f > gar.max_f(args.n, args.rule):
            raise gar.PreconditionError(
                f"f={args.f} exceeds the bound {gar.max_f(args.n, args.rule)} of {args.rule} at n={args.n}"
            )
    except gar.PreconditionError as exc:
        return _fail(EXIT_PRECONDITION, str(exc))
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))
    g = np.full(args.d, 1.0 / math.sqrt(args.d))
    try:
        estimate = resilience.estimate_weak_condition(
            args.rule, args.n, args.f, attack, g, args.sigma, args.trials, args.seed, args.eta_variant, args.m
        )
    except gar.PreconditionError as exc:
        return _fail(EXIT_PRECONDITION, str(exc))
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))
    report = estimate.to_dict()
    if args.leeway:
        scaling = resilience.leeway_scaling(
            args.rule, args.n, args.f, attack, args.sigma * math.sqrt(args.d), dims=args.leeway_dims,
            trials=args.leeway_trials, seed=args.seed,
        )
        report["leeway"] = {"per_d": {str(k): v for k, v in scaling["leeway"].items()}, "exponent": scaling["exponent"]}
    if not all(math.isfinite(v) for v in report["moments"].values()) or not math.isfinite(report["inner_product_lhs"]):
        _dump_json({k: v for k, v in report.items() if k not in ("moments", "inner_product_lhs")}, args.output)
        return _fail(EXIT_NUMERIC, "Monte-Carlo estimate is not finite")
    _dump_json(report, args.output)
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="byzgar", description="Byzantine-resilient gradient aggregation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aggregate", help="aggregate a gradient file")
    p.add_argument("--rule", required=True, choices=gar.RULES)
    p.add_argument("--f", type=int, default=0, help="declared number of Byzantine inputs")
    p.add_argument("--m", type=int, default=None, help="multi-krum average width (default n-f-2)")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("simulate", help="run a parameter-server simulation from a JSON config")
    p.add_argument("config")
    p.add_argument("--plot", default=None, help="write a loss/cosine figure to this path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="time aggregation rules over an (n, d) grid")
    p.add_argument("--rules", type=_rule_list, default=list(gar.RULES), help="comma-separated rule names")
    p.add_argument("--n", type=_int_list, default=list(DEFAULT_N), help="list 7,9,11 or range 7:39:2")
    p.add_argument("--d", type=_int_list, default=list(DEFAULT_D), help="comma-separated dimensions")
    p.add_argument("--large", action="store_true", help=f"also run d={LARGE_D} (several GB of memory)")
    p.add_argument("--repeats", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None, help="summary CSV (default stdout)")
    p.add_argument("--raw", default=None, help="also write per-run timings to this CSV")
    p.add_argument("--plot", default=None, help="write a log-log timing figure to this path")
    p.add_argument("--plot-axis", choices=("n", "d"), default="n")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("check", help="Monte-Carlo resilience check")
    p.add_argument("--rule", required=True, choices=gar.RULES)
    p.add_argument("--n", type=int, default=11)
    p.add_argument("--f", type=int, default=2)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--attack", choices=ATTACKS, default="reversed")
    p.add_argument("--attack-param", type=_attack_param, action="append", metavar="NAME=VALUE")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eta-variant", choices=resilience.ETA_VARIANTS, default="lemma_statement")
    p.add_argument("--leeway", action="store_true", help="also report the leeway scaling across dimensions")
    p.add_argument("--leeway-dims", type=_int_list, default=[16, 64, 256, 1024])
    p.add_argument("--leeway-trials", type=int, default=500)
    p.add_argument("--output", default=None, help="JSON report path (default stdout)")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (FloatingPointError, OverflowError) as exc:
        return _fail(EXIT_NUMERIC, str(exc))


if __name__ == "__main__":
    sys.exit(main())
