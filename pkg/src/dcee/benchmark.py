"""Bias, standard deviation and coverage over simulated replicates."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__
from .comparators import estimate_gee, estimate_wcls
from .errors import DceeError, NumericalError, SpecError
from .estimand import EstimandSpec
from .estimator import estimate_dcee
from .nuisance import LearnerSpec
from .simulator import OracleResult, SimParams, compute_oracle_beta, default_paper_params, simulate_dataset

METHODS = ("dcee", "dcee-cf", "gee", "wcls")
MAX_FAILURE_RATE = 0.05
SUMMARY_COLUMNS = (
    "method",
    "n",
    "coefficient",
    "beta_star",
    "mean_estimate",
    "bias",
    "bias_mcse",
    "sd",
    "sd_mcse",
    "mean_se",
    "mean_se_mcse",
    "coverage",
    "coverage_mcse",
    "n_ok",
    "n_failed",
)


class BenchmarkAborted(NumericalError):
    pass


@dataclass(frozen=True)
class BenchmarkConfig:
    sample_sizes: tuple[int, ...]
    replicates: int
    methods: tuple[str, ...]
    estimand: EstimandSpec = field(default_factory=EstimandSpec)
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    seed: int = 0
    crossfit_K: int = 5
    ci_level: float = 0.95
    params: SimParams = field(default_factory=default_paper_params)
    beta_star: tuple[float, ...] | None = None
    oracle_mc_size: int = 1_000_000
    wcls_ptilde: float | str = "empirical"

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise SpecError("benchmark needs at least one method")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise SpecError(f"unknown method(s) {unknown}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise SpecError("methods are listed more than once")
        if not self.sample_sizes or min(self.sample_sizes) < 10:
            raise SpecError("sample sizes must be >= 10")
        if self.replicates < 2:
            raise SpecError("replicates must be >= 2")
        if self.seed < 0:
            raise SpecError("seed must be nonnegative")
        if "dcee-cf" in self.methods and self.crossfit_K < 2:
            raise SpecError("dcee-cf needs crossfit_K >= 2")
        if self.beta_star is not None:
            b = tuple(float(x) for x in self.beta_star)
            if len(b) != self.estimand.p:
                raise SpecError(f"beta_star has {len(b)} entries, estimand has {self.estimand.p}")
            object.__setattr__(self, "beta_star", b)

    def to_dict(self) -> dict:
        return {
            "sample_sizes": list(self.sample_sizes),
            "replicates": self.replicates,
            "methods": list(self.methods),
            "estimand": self.estimand.to_dict(),
            "nuisance": self.learner.to_dict(),
            "seed": self.seed,
            "crossfit_K": self.crossfit_K,
            "ci_level": self.ci_level,
            "params": self.params.to_dict(),
            "beta_star": None if self.beta_star is None else list(self.beta_star),
            "oracle_mc_size": self.oracle_mc_size,
            "wcls_ptilde": self.wcls_ptilde,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BenchmarkConfig":
        d = dict(d)
        allowed = set(cls.__dataclass_fields__) - {"learner"} | {"nuisance"}
        unknown = set(d) - allowed
        if unknown:
            raise SpecError(f"unknown benchmark config key(s) {sorted(unknown)}")
        for key in ("sample_sizes", "replicates", "methods"):
            if key not in d:
                raise SpecError(f"benchmark config needs {key!r}")
        if "estimand" in d:
            d["estimand"] = EstimandSpec.from_dict(d["estimand"])
        d["learner"] = LearnerSpec.from_dict(d.pop("nuisance", None))
        if d.get("params") is not None:
            d["params"] = SimParams.from_dict(d["params"])
        else:
            d.pop("params", None)
        return cls(**d)


def replicate_stream(method: str, n: int, r: int) -> tuple[int, int, int]:
    """Stream key of replicate ``r`` at size ``n``; injective in (method, n, r)."""
    return (METHODS.index(method), n, r)


def _fit(cfg: BenchmarkConfig, method: str, n: int, r: int) -> dict:
    ds = simulate_dataset(cfg.params, n, cfg.seed, stream=replicate_stream(method, n, r))
    if method == "dcee":
        fit = estimate_dcee(ds, cfg.estimand, cfg.learner, K=0, seed=r, level=cfg.ci_level)
    elif method == "dcee-cf":
        fit = estimate_dcee(ds, cfg.estimand, cfg.learner, K=cfg.crossfit_K, seed=r, level=cfg.ci_level)
    elif method == "gee":
        fit = estimate_gee(ds, cfg.estimand, level=cfg.ci_level)
    else:
        fit = estimate_wcls(ds, cfg.estimand, cfg.wcls_ptilde, level=cfg.ci_level)
    return {"estimate": fit.beta_hat.tolist(), "se": fit.se.tolist(), "ci": fit.ci.tolist()}


def _run_one(args) -> dict:
    cfg, method, n, r = args
    out = {"method": method, "n": n, "replicate": r, "stream": list(replicate_stream(method, n, r))}
    try:
        out.update(status="ok", **_fit(cfg, method, n, r))
    except (DceeError, np.linalg.LinAlgError) as exc:
        out.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return out


def _summarize(method: str, n: int, names, beta_star: np.ndarray, runs: list[dict]) -> list[dict]:
    ok = [r for r in runs if r["status"] == "ok"]
    n_ok, n_failed = len(ok), len(runs) - len(ok)
    est = np.array([r["estimate"] for r in ok])
    se = np.array([r["se"] for r in ok])
    ci = np.array([r["ci"] for r in ok])
    rows = []
    for k, name in enumerate(names):
        b = est[:, k]
        sd = float(b.std(ddof=1))
        cover = float(np.mean((ci[:, k, 0] <= beta_star[k]) & (beta_star[k] <= ci[:, k, 1])))
        rows.append(
            {
                "method": method,
                "n": n,
                "coefficient": name,
                "beta_star": float(beta_star[k]),
                "mean_estimate": float(b.mean()),
                "bias": float(b.mean() - beta_star[k]),
                "bias_mcse": float(sd / np.sqrt(n_ok)),
                "sd": sd,
                "sd_mcse": float(sd / np.sqrt(2 * (n_ok - 1))),
                "mean_se": float(se[:, k].mean()),
                "mean_se_mcse": float(se[:, k].std(ddof=1) / np.sqrt(n_ok)),
                "coverage": cover,
                "coverage_mcse": float(np.sqrt(cover * (1 - cover) / n_ok)),
                "n_ok": n_ok,
                "n_failed": n_failed,
            }
        )
    return rows


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    beta_star: np.ndarray
    beta_star_source: str
    summary: list[dict]
    replicates: list[dict]

    def to_dict(self) -> dict:
        return {
            "tool": "dcee",
            "version": __version__,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "beta_star": self.beta_star.tolist(),
            "beta_star_source": self.beta_star_source,
            "columns": list(SUMMARY_COLUMNS),
            "summary": self.summary,
            "replicates": self.replicates,
        }

    def row(self, method: str, n: int, coefficient: str | int = 0) -> dict:
        if isinstance(coefficient, int):
            coefficient = self.config.estimand.labels()[coefficient]
        for r in self.summary:
            if r["method"] == method and r["n"] == n and r["coefficient"] == coefficient:
                return r
        raise KeyError((method, n, coefficient))


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def oracle_cache_key(params: SimParams, spec: EstimandSpec, mc_size: int, seed: int) -> str:
    return f"oracle-{_hash(params.to_dict())}-{_hash(spec.to_dict())}-{mc_size}-{seed}"


def default_cache_dir() -> Path:
    return Path(os.environ.get("DCEE_CACHE_DIR", Path.home() / ".cache" / "dcee"))


def cached_oracle(
    params: SimParams,
    spec: EstimandSpec,
    mc_size: int,
    seed: int,
    cache_dir: Path | str | None = None,
) -> OracleResult:
    """Oracle result from ``cache_dir`` if present, else computed and stored there."""
    path = Path(cache_dir or default_cache_dir()) / (oracle_cache_key(params, spec, mc_size, seed) + ".json")
    if path.exists():
        return OracleResult.from_dict(json.loads(path.read_text()))
    result = compute_oracle_beta(params, spec, mc_size, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(result.to_json())
    tmp.replace(path)
    return result


def run_benchmark(
    cfg: BenchmarkConfig,
    *,
    threads: int = 1,
    cache_dir: Path | str | None = None,
    log=None,
) -> BenchmarkReport:
    """Simulate, fit and summarize every (method, sample size) cell.

    Replicate ``r`` at size ``n`` for ``method`` draws from its own stream
    ``(seed; method, n, r)``. Failed replicates are excluded and counted;
    a cell with more than 5% failures aborts the run.
    """
    if cfg.beta_star is not None:
        beta_star, source = np.asarray(cfg.beta_star), "supplied"
    else:
        oracle = cached_oracle(cfg.params, cfg.estimand, cfg.oracle_mc_size, cfg.seed, cache_dir)
        beta_star, source = oracle.beta_star, f"oracle(mc_size={cfg.oracle_mc_size}, seed={cfg.seed})"
    names = cfg.estimand.labels()
    summary, replicates = [], []
    for method in cfg.methods:
        for n in cfg.sample_sizes:
            tasks = [(cfg, method, n, r) for r in range(cfg.replicates)]
            if threads > 1:
                with ProcessPoolExecutor(threads) as pool:
                    runs = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
            else:
                runs = [_run_one(t) for t in tasks]
            failed = sum(r["status"] != "ok" for r in runs)
            if failed > MAX_FAILURE_RATE * cfg.replicates:
                first = next(r["error"] for r in runs if r["status"] != "ok")
                raise BenchmarkAborted(
                    f"{method} at n={n}: {failed}/{cfg.replicates} replicates failed (first: {first})"
                )
            summary.extend(_summarize(method, n, names, beta_star, runs))
            replicates.extend(runs)
            if log:
                log(f"{method} n={n}: {cfg.replicates - failed} ok, {failed} failed")
    return BenchmarkReport(cfg, beta_star, source, summary, replicates)


def report_to_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    buf.write(f"# tool: dcee {__version__}\n")
    buf.write(f"# seed: {report.config.seed}\n")
    buf.write(f"# config: {json.dumps(report.config.to_dict(), sort_keys=True)}\n")
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report.summary:
        writer.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in row.items()})
    return buf.getvalue()


def emit_report(report: BenchmarkReport, fmt: str = "json", path=None) -> str:
    """Serialize ``report``; write it to ``path`` when given. Returns the text."""
    if fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        text = report_to_csv(report)
    else:
        raise SpecError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def read_report_csv(text: str) -> tuple[dict, list[dict]]:
    """Parse :func:`report_to_csv` output into (config, summary rows)."""
    lines = text.splitlines()
    meta = {}
    for line in lines:
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            meta[key] = value
    config = json.loads(meta["config"]) if "config" in meta else {}
    body = [line for line in lines if not line.startswith("#")]
    rows = []
    for row in csv.DictReader(body):
        typed = {}
        for k, v in row.items():
            if k in ("method", "coefficient"):
                typed[k] = v
            elif k in ("n", "n_ok", "n_failed"):
                typed[k] = int(v)
            else:
                typed[k] = float(v)
        rows.append(typed)
    return config, rows
