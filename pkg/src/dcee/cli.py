"""Command-line entry point: ``dcee {simulate,oracle,estimate,compare,benchmark}``.

Every command reads an optional JSON config; flags override config values.
Exit codes: 0 success, 2 invalid input or config, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import __version__
from .benchmark import BenchmarkConfig, emit_report, run_benchmark
from .comparators import estimate_gee, estimate_wcls
from .data import DEFAULT_CLIP, CsvSchema, load_csv, write_csv
from .errors import DataError, NumericalError, SpecError, ValidationError
from .estimand import EstimandSpec
from .estimator import estimate_dcee
from .nuisance import LearnerSpec
from .simulator import (
    Example4Params,
    PolicySpec,
    SimParams,
    compute_oracle_betas,
    default_paper_params,
    simulate,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise SpecError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SpecError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise SpecError("config must be a JSON object")
    return cfg


def _check_keys(cfg: dict, allowed: set, command: str) -> None:
    unknown = set(cfg) - allowed
    if unknown:
        raise SpecError(f"unknown {command} config key(s) {sorted(unknown)}")


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _seed(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise SpecError(f"seed must be a nonnegative integer, got {seed!r}")
    return seed


def _model(cfg: dict):
    kind = cfg.get("model", "endogenous")
    if kind == "endogenous":
        params = cfg.get("params")
        return SimParams.from_dict(params) if params else default_paper_params()
    if kind == "example4":
        return Example4Params(**cfg.get("params", {}))
    raise SpecError(f"unknown model {kind!r}; use 'endogenous' or 'example4'")


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"model", "params", "n", "seed", "policy", "crn"}, "simulate")
    n = args.n if args.n is not None else cfg.get("n")
    if n is None:
        raise SpecError("simulate needs n (config key or --n)")
    policy = PolicySpec.parse(args.policy or cfg.get("policy", "mrt"))
    ds = simulate(_model(cfg), int(n), _seed(args, cfg), policy, crn=bool(cfg.get("crn", False)))
    if args.out is None:
        buf = io.StringIO()
        write_csv(ds, buf)
        sys.stdout.write(buf.getvalue())
    else:
        write_csv(ds, args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"model", "params", "estimand", "estimands", "mc_size", "seed", "crn"}, "oracle")
    if "estimands" in cfg:
        specs = [EstimandSpec.from_dict(d) for d in cfg["estimands"]]
    else:
        specs = [EstimandSpec.from_dict(cfg.get("estimand", {}))]
    mc_size = args.mc_size if args.mc_size is not None else int(cfg.get("mc_size", 1_000_000))
    results = compute_oracle_betas(_model(cfg), specs, mc_size, _seed(args, cfg), crn=bool(cfg.get("crn", False)))
    body = results[0].to_dict() if "estimands" not in cfg else [r.to_dict() for r in results]
    _emit(_dump(body), args.out)
    return EXIT_OK


_FIT_KEYS = {"data", "schema", "estimand", "nuisance", "crossfit_K", "seed", "ci_level", "clip", "use_t"}


def _load_data(args, cfg):
    data = args.data or cfg.get("data")
    if data is None:
        raise SpecError("no input data (config key 'data' or --data)")
    return load_csv(data, CsvSchema.from_dict(cfg.get("schema")))


def _fit_table(fit) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["coefficient", "estimate", "se", "ci_lo", "ci_hi"])
    for name, b, s, (lo, hi) in zip(fit.names, fit.beta_hat, fit.se, fit.ci):
        w.writerow([name, repr(float(b)), repr(float(s)), repr(float(lo)), repr(float(hi))])
    return buf.getvalue()


def cmd_estimate(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, _FIT_KEYS, "estimate")
    ds = _load_data(args, cfg)
    fit = estimate_dcee(
        ds,
        EstimandSpec.from_dict(cfg.get("estimand", {})),
        LearnerSpec.from_dict(cfg.get("nuisance")),
        K=int(cfg.get("crossfit_K", 0)),
        seed=_seed(args, cfg),
        level=float(cfg.get("ci_level", 0.95)),
        use_t=bool(cfg.get("use_t", False)),
        clip=float(cfg.get("clip", DEFAULT_CLIP)),
    )
    _emit(_fit_table(fit) if args.format == "csv" else _dump(fit.to_dict()), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, _FIT_KEYS | {"ptilde", "controls"}, "compare")
    ds = _load_data(args, cfg)
    spec = EstimandSpec.from_dict(cfg.get("estimand", {}))
    level = float(cfg.get("ci_level", 0.95))
    clip = float(cfg.get("clip", DEFAULT_CLIP))
    controls = cfg.get("controls")
    if args.method == "gee":
        fit = estimate_gee(ds, spec, controls=controls, level=level, clip=clip)
    else:
        fit = estimate_wcls(ds, spec, cfg.get("ptilde", "empirical"), controls=controls, level=level, clip=clip)
    _emit(_fit_table(fit) if args.format == "csv" else _dump(fit.to_dict()), args.out)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _load_config(args.config)
    cache = cfg.pop("oracle_cache", None)
    if args.seed is not None:
        cfg["seed"] = args.seed
    bench = BenchmarkConfig.from_dict(cfg)
    log = lambda msg: print(msg, file=sys.stderr)
    report = run_benchmark(bench, threads=args.threads, cache_dir=cache, log=log)
    text = emit_report(report, args.format)
    _emit(text, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--threads", type=int, default=1, help="worker processes for benchmark replicates")

    parser = argparse.ArgumentParser(prog="dcee", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dcee {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate an MRT dataset to long CSV")
    p.add_argument("--n", type=int, help="number of persons")
    p.add_argument("--policy", help="'mrt' or 'excursion:T0:A'")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", parents=[common], help="Monte-Carlo true projection coefficients")
    p.add_argument("--mc-size", type=int, help="persons per simulated dataset")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("estimate", parents=[common], help="fit the excursion-effect estimator")
    p.add_argument("--data", help="long-format CSV (overrides config 'data')")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("compare", parents=[common], help="fit a GEE or WCLS comparator")
    p.add_argument("--data", help="long-format CSV (overrides config 'data')")
    p.add_argument("--method", choices=("gee", "wcls"), required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("benchmark", parents=[common], help="bias, SD and coverage over replicates")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (DataError, ValidationError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TypeError, ValueError) as exc:
        # malformed config values, e.g. a string where a number belongs
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
