"""Command-line interface: ``transferq <command> [options]``.

Exit status is 0 on success, 1 when a computation fails (a JSON error object
is printed) and 2 on usage errors.  Every option may also come from a
``--config`` file of ``key = value`` lines; flags on the command line win.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .concentration import CiSide, mean_ci, quantile_ci
from .core import Loss, LossSpec, Transform
from .errors import TransferQError
from .intervals import forecast_interval
from .io import dumps, ingest, metadata_to_csv, parse_config, read_weights
from .metareg import FeatureSet, Method, build_ratio_dataset, fit_ratio_predictor
from .rules.configs import parse_rule
from .rules.economic import FitConfig
from .shift import default_gamma_grid, everywhere_dominates, weighted_forecast_interval, worst_case_dominates
from .synthetic import SyntheticMetaSpec, simulate_coverage, simulate_metadata
from .transfer import (
    MeasureKind,
    MeasureSpec,
    PartialSplit,
    TransferErrorTensor,
    pooled_transfer_errors,
    within_domain_table,
)

WORKERS_ENV = "TRANSFERQ_WORKERS"
TENSOR_HEADER = "train_ids,target_id,value,flag"
STOCHASTIC = {"within-domain", "transfer", "meta-regress", "simulate", "coverage"}
DEFAULTS = {
    "transform": "identity",
    "resolution": 25,
    "restarts": 3,
    "r": 1,
    "measure": "transfer_error",
    "tau": 0.95,
    "side": "two",
    "k": 10,
    "rules": "eu,cpt-abdg,forest,kernel-ridge",
    "baseline": "forest",
    "mode": "worst_case",
    "target": "quantile",
    "beta": 0.5,
    "alpha": 0.1,
    "ci_side": "two_sided",
    "numerator": "forest",
    "denominator": "cpt-abdg",
    "methods": "constant,least_squares,stump,forest",
    "feature_set": "both",
    "n_domains": 10,
    "obs_min": 10,
    "obs_max": 20,
    "param_means": "0.8,0.9,0.6,0.8",
    "param_spreads": "0.05,0.05,0.1,0.1",
    "lottery_mode": "shared_grid",
    "noise_sd": 1.0,
    "prize_max": 100.0,
    "loss_share": 0.0,
    "grid_size": 20,
    "replications": 1000,
}


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; command-line flags override it")
    p.add_argument("-o", "--output", help="write the artifact here instead of stdout")
    p.add_argument("--seed", type=int, help="random seed (required for stochastic commands)")
    p.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    p.add_argument("--transform", choices=["identity", "sqrt"], help="identity reports MSE, sqrt reports RMSE")
    p.add_argument("--resolution", type=int, help="ERM grid points per parameter")
    p.add_argument("--restarts", type=int, help="Nelder-Mead starts from the best grid points")


def _tensor_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rule", help="decision rule, e.g. eu, cpt-abdg, forest:n_trees=50")
    p.add_argument("--r", type=int, help="training-set size")
    p.add_argument("--measure", choices=[k.value for k in MeasureKind])
    p.add_argument("--reference", action="append", help="reference rule for normalized measures (repeatable)")
    p.add_argument("--ratio", nargs=2, metavar=("NUMERATOR", "DENOMINATOR"), help="rule pair for the ratio measure")
    p.add_argument("--partial", help="FAMILY:param,param transferred for partial_transfer, e.g. cpt-abdg:gamma,delta")


def _spec_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-domains", type=int)
    p.add_argument("--obs-min", type=int)
    p.add_argument("--obs-max", type=int)
    p.add_argument("--param-means", help="alpha,beta,gamma,delta")
    p.add_argument("--param-spreads", help="alpha,beta,gamma,delta")
    p.add_argument("--lottery-mode", choices=["shared_grid", "per_domain_random", "fixed_prizes"])
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--prize-max", type=float)
    p.add_argument("--loss-share", type=float)
    p.add_argument("--grid-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transferq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"transferq {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("validate", help="check a meta-data CSV")
    p.add_argument("data")
    _common(p)

    p = sub.add_parser("within-domain", help="k-fold CV error per rule and domain")
    p.add_argument("data")
    p.add_argument("--rules", help="comma-separated rules")
    p.add_argument("--k", type=int)
    p.add_argument("--baseline", help="rule the ratios are taken against")
    _common(p)

    p = sub.add_parser("transfer", help="pooled transfer-error tensor as CSV")
    p.add_argument("data")
    _tensor_options(p)
    _common(p)

    p = sub.add_parser("intervals", help="forecast interval from a tensor CSV or a meta-data CSV")
    p.add_argument("input")
    _tensor_options(p)
    p.add_argument("--tau", type=float)
    p.add_argument("--side", choices=["one", "two"])
    p.add_argument("--weights", help="domain_id,weight CSV for a reweighted interval")
    p.add_argument("--gamma", type=float, help="bound on the likelihood ratio; reports the guaranteed level")
    _common(p)

    p = sub.add_parser("dominance", help="compare two tensors over the likelihood-ratio box")
    p.add_argument("tensor_a")
    p.add_argument("tensor_b")
    p.add_argument("--tau", type=float)
    p.add_argument("--mode", choices=["worst_case", "everywhere"])
    p.add_argument("--gamma-grid", help="comma-separated values, 'inf' allowed; default 100/i and inf")
    _common(p)

    p = sub.add_parser("ci", help="confidence interval for a quantile or the mean")
    p.add_argument("input")
    _tensor_options(p)
    p.add_argument("--target", choices=["quantile", "mean"])
    p.add_argument("--beta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--ci-side", choices=[s.value for s in CiSide])
    p.add_argument("--bound", type=float, help="divide values by this bound before a mean interval")
    _common(p)

    p = sub.add_parser("meta-regress", help="predict error ratios from sample features")
    p.add_argument("data")
    p.add_argument("--numerator")
    p.add_argument("--denominator")
    p.add_argument("--r", type=int)
    p.add_argument("--methods", help=f"comma-separated from {', '.join(m.value for m in Method)}")
    p.add_argument("--k", type=int)
    p.add_argument("--feature-set", choices=[f.value for f in FeatureSet])
    p.add_argument("--export", help="also write the ratio dataset CSV here")
    _common(p)

    p = sub.add_parser("simulate", help="synthetic meta-data CSV")
    _spec_options(p)
    _common(p)

    p = sub.add_parser("coverage", help="Monte Carlo coverage of the one-sided interval")
    _spec_options(p)
    p.add_argument("--rule")
    p.add_argument("--r", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--replications", type=int)
    _common(p)
    return parser


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    """Fill unset options from the config file, then from built-in defaults."""
    dests = {a.dest: a for a in _subparser(parser, args.command)._actions}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        for key, value in parse_config(path.read_text(encoding="utf-8")).items():
            action = dests.get(key)
            if action is None or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            if getattr(args, key) is not None:
                continue
            if isinstance(action, argparse._AppendAction):
                setattr(args, key, [v.strip() for v in value.split(",") if v.strip()])
            elif action.nargs == 2:
                setattr(args, key, value.split())
            else:
                setattr(args, key, action.type(value) if action.type else value)
    for key, value in DEFAULTS.items():
        if key in dests and getattr(args, key) is None:
            setattr(args, key, value)
    if args.workers is None:
        args.workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return args


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _loss(args) -> LossSpec:
    return LossSpec(Loss.SQUARED_ERROR, Transform(args.transform))


def _fit_config(args) -> FitConfig:
    return FitConfig(resolution=args.resolution, restarts=args.restarts)


def _rule(text: str, args):
    return parse_rule(text, _fit_config(args))


def _measure(args) -> MeasureSpec:
    kind = MeasureKind(args.measure)
    refs = tuple(_rule(t, args) for t in (args.reference or ()))
    pair = tuple(_rule(t, args) for t in args.ratio) if args.ratio else None
    split = None
    if args.partial:
        family, _, params = args.partial.partition(":")
        split = PartialSplit(family.strip(), tuple(p.strip() for p in params.split(",") if p.strip()))
    return MeasureSpec(kind, refs, pair, split)


def _is_tensor_file(path: str) -> bool:
    with open(path, encoding="utf-8") as fh:
        return fh.readline().strip() == TENSOR_HEADER


def _tensor(args, path: str) -> TransferErrorTensor:
    if _is_tensor_file(path):
        return TransferErrorTensor.from_csv(Path(path).read_text(encoding="utf-8"), {"source": path})
    if args.seed is None:
        raise UsageError("--seed is required when computing a tensor from meta-data")
    measure = _measure(args)
    if measure.needs_rule and not args.rule:
        raise UsageError(f"--rule is required for measure {measure.kind.value}")
    meta, _ = ingest(path)
    rule = _rule(args.rule, args) if args.rule else None
    return pooled_transfer_errors(meta, rule, args.r, measure, _loss(args), args.seed, args.workers)


def _echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "output")}


def _report(args, result) -> str:
    return dumps({"command": args.command, "version": __version__, "seed": args.seed, "config": _echo(args), "result": result})


def _emit(args, text: str, sidecar: dict | None = None) -> None:
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        if sidecar is not None:
            Path(args.output + ".meta.json").write_text(_report(args, sidecar), encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_validate(args) -> int:
    meta, report = ingest(args.data, strict=False)
    result = {"n": meta.n, "sizes": {s.id: len(s) for s in meta}, "valid": not report.violations}
    result.update(report.to_dict())
    _emit(args, _report(args, result))
    return 0 if not report.violations else 1


def cmd_within_domain(args) -> int:
    meta, _ = ingest(args.data)
    rules = [_rule(t, args) for t in args.rules.split(",") if t.strip()]
    table = within_domain_table(meta, rules, args.k, _loss(args), args.seed, args.baseline.replace("-", "_"))
    result = {
        "rules": list(table.rule_names),
        "baseline": table.baseline,
        "errors": {d: dict(zip(table.rule_names, row)) for d, row in zip(table.domain_ids, table.errors.tolist())},
        "mean_ratio_to_baseline": table.mean_ratios(),
    }
    _emit(args, _report(args, result))
    return 0


def cmd_transfer(args) -> int:
    tensor = _tensor(args, args.data)
    _emit(args, tensor.to_csv(), sidecar=tensor.info)
    if tensor.excluded:
        print(f"warning: {tensor.excluded} entries flagged and excluded", file=sys.stderr)
    return 0


def cmd_intervals(args) -> int:
    tensor = _tensor(args, args.input)
    if args.weights:
        interval = weighted_forecast_interval(tensor, read_weights(args.weights), args.tau, args.side, args.gamma)
    else:
        interval = forecast_interval(tensor, args.tau, args.side)
    _emit(args, _report(args, interval.to_dict()))
    return 0


def _gamma_grid(text: str | None) -> list[float]:
    if not text:
        return default_gamma_grid()
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_dominance(args) -> int:
    a = _tensor(args, args.tensor_a)
    b = _tensor(args, args.tensor_b)
    if args.mode == "worst_case":
        report = worst_case_dominates(a, b, args.tau, _gamma_grid(args.gamma_grid))
    else:
        report = everywhere_dominates(a, b, args.tau)
    _emit(args, _report(args, report.to_dict()))
    return 0


def cmd_ci(args) -> int:
    tensor = _tensor(args, args.input)
    if args.target == "quantile":
        result = quantile_ci(tensor, args.beta, args.alpha, args.ci_side).to_dict()
    else:
        bounded = args.measure in (MeasureKind.INVERSE_NORMALIZED.value, MeasureKind.INVERSE_DETERIORATION.value)
        scale = 1.0
        if not bounded:
            if args.bound is None:
                raise UsageError("--bound is required for a mean interval on an unbounded measure")
            if not args.bound > 0:
                raise UsageError("--bound must be positive")
            scale = args.bound
        scaled = tensor.with_values(tensor.values / scale)
        ci = mean_ci(scaled, args.alpha, args.ci_side)
        result = ci.to_dict()
        result.update({"lower": ci.lower * scale, "upper": ci.upper * scale, "statistic": ci.statistic * scale, "bound": scale})
    _emit(args, _report(args, result))
    return 0


def cmd_meta_regress(args) -> int:
    meta, _ = ingest(args.data)
    data = build_ratio_dataset(
        meta,
        _rule(args.numerator, args),
        _rule(args.denominator, args),
        args.r,
        _loss(args),
        args.seed,
        args.feature_set,
        args.workers,
    )
    if args.export:
        Path(args.export).write_text(data.to_csv(), encoding="utf-8")
    fits = {}
    for m in (s.strip() for s in args.methods.split(",") if s.strip()):
        fits[Method(m).value] = fit_ratio_predictor(data, m, args.k, args.seed).to_dict()
    result = {"rows": len(data), "excluded": data.excluded, "feature_set": data.feature_set.value, "methods": fits}
    _emit(args, _report(args, result))
    return 0


def _reals(text: str, count: int, name: str) -> tuple[float, ...]:
    values = tuple(float(v) for v in text.split(","))
    if len(values) != count:
        raise UsageError(f"--{name} needs {count} comma-separated values")
    return values


def _synthetic_spec(args) -> SyntheticMetaSpec:
    return SyntheticMetaSpec(
        n_domains=args.n_domains,
        obs_min=args.obs_min,
        obs_max=args.obs_max,
        param_means=_reals(args.param_means, 4, "param-means"),
        param_spreads=_reals(args.param_spreads, 4, "param-spreads"),
        mode=args.lottery_mode,
        noise_sd=args.noise_sd,
        prize_max=args.prize_max,
        loss_share=args.loss_share,
        grid_size=args.grid_size,
        seed=args.seed,
    )


def cmd_simulate(args) -> int:
    meta = simulate_metadata(_synthetic_spec(args))
    _emit(args, metadata_to_csv(meta), sidecar={"n": meta.n, "sizes": {s.id: len(s) for s in meta}})
    return 0


def cmd_coverage(args) -> int:
    rule = _rule(args.rule or "eu", args)
    report = simulate_coverage(_synthetic_spec(args), rule, args.r, args.tau, args.replications, args.seed, _loss(args))
    _emit(args, _report(args, report.to_dict()))
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "within-domain": cmd_within_domain,
    "transfer": cmd_transfer,
    "intervals": cmd_intervals,
    "dominance": cmd_dominance,
    "ci": cmd_ci,
    "meta-regress": cmd_meta_regress,
    "simulate": cmd_simulate,
    "coverage": cmd_coverage,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _resolve(args, parser)
        if args.command in STOCHASTIC and args.seed is None:
            raise UsageError(f"--seed is required for {args.command}")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _subparser(parser, args.command).print_usage(sys.stderr)
        print(f"transferq {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TransferQError, ValueError, OSError, KeyError) as exc:
        sys.stdout.write(dumps({"error": {"type": type(exc).__name__, "message": str(exc)}, "command": args.command, "version": __version__}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
