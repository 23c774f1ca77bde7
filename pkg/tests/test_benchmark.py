import json
import math

import numpy as np
import pytest

from dcee import benchmark
from dcee.benchmark import (
    METHODS,
    BenchmarkAborted,
    BenchmarkConfig,
    cached_oracle,
    emit_report,
    oracle_cache_key,
    read_report_csv,
    replicate_stream,
    run_benchmark,
)
from dcee.errors import SingularMatrixError, SpecError
from dcee.estimand import EstimandSpec, WeightSpec
from dcee.simulator import default_paper_params

# frozen output of the package oracle at one million persons (seed 20240601)
BETA_STAR_MARGINAL = 1.50534729


def smoke_config(**kw):
    base = dict(sample_sizes=(20, 30), replicates=3, methods=METHODS, beta_star=(BETA_STAR_MARGINAL,), seed=4)
    base.update(kw)
    return BenchmarkConfig(**base)


@pytest.fixture(scope="module")
def smoke():
    return run_benchmark(smoke_config())


def test_smoke_report(smoke):
    assert len(smoke.summary) == len(METHODS) * 2
    assert len(smoke.replicates) == len(METHODS) * 2 * 3
    for row in smoke.summary:
        assert all(math.isfinite(v) for v in row.values() if isinstance(v, float))
        assert 0 <= row["coverage"] <= 1
        assert row["n_ok"] + row["n_failed"] == 3
    for rep in smoke.replicates:
        assert rep["stream"] == list(replicate_stream(rep["method"], rep["n"], rep["replicate"]))
    assert smoke.beta_star_source == "supplied"
    assert smoke.row("gee", 30)["beta_star"] == BETA_STAR_MARGINAL


def test_summary_arithmetic(smoke):
    runs = [r for r in smoke.replicates if r["method"] == "dcee" and r["n"] == 20]
    est = np.array([r["estimate"][0] for r in runs])
    row = smoke.row("dcee", 20)
    assert row["mean_estimate"] == pytest.approx(est.mean())
    assert row["bias"] == pytest.approx(est.mean() - BETA_STAR_MARGINAL)
    assert row["sd"] == pytest.approx(est.std(ddof=1))
    assert row["bias_mcse"] == pytest.approx(est.std(ddof=1) / np.sqrt(3))
    covered = [lo <= BETA_STAR_MARGINAL <= hi for (lo, hi) in (r["ci"][0] for r in runs)]
    assert row["coverage"] == pytest.approx(np.mean(covered))


def test_json_and_csv_round_trip(smoke):
    doc = json.loads(emit_report(smoke, "json"))
    assert {"seed", "config", "tool", "version", "summary", "columns"} <= set(doc)
    assert doc["seed"] == 4 and doc["config"]["methods"] == list(METHODS)
    assert BenchmarkConfig.from_dict(doc["config"]) == smoke.config
    config, rows = read_report_csv(emit_report(smoke, "csv"))
    assert config == smoke.config.to_dict()
    assert rows == smoke.summary
    header = emit_report(smoke, "csv").splitlines()[3]
    assert header.split(",") == list(benchmark.SUMMARY_COLUMNS)
    with pytest.raises(SpecError):
        emit_report(smoke, "xml")


def test_byte_identical_rerun(smoke, tmp_path):
    again = run_benchmark(smoke_config())
    assert emit_report(again, "json") == emit_report(smoke, "json")
    assert emit_report(again, "csv") == emit_report(smoke, "csv")
    emit_report(again, "csv", tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == emit_report(smoke, "csv")


def test_parallel_matches_serial(smoke):
    parallel = run_benchmark(smoke_config(), threads=2)
    assert emit_report(parallel, "json") == emit_report(smoke, "json")


def test_different_seed_changes_results(smoke):
    other = run_benchmark(smoke_config(seed=5, methods=("gee",)))
    assert other.row("gee", 20)["mean_estimate"] != smoke.row("gee", 20)["mean_estimate"]


def test_replicate_streams_injective():
    keys = {replicate_stream(m, n, r) for m in METHODS for n in (10, 30, 300) for r in range(50)}
    assert len(keys) == len(METHODS) * 3 * 50


@pytest.mark.parametrize(
    "kw,match",
    [
        ({"methods": ()}, "at least one"),
        ({"methods": ("ols",)}, "unknown method"),
        ({"methods": ("gee", "gee")}, "more than once"),
        ({"sample_sizes": (5,)}, ">= 10"),
        ({"replicates": 1}, ">= 2"),
        ({"seed": -1}, "nonnegative"),
        ({"beta_star": (1.0, 2.0)}, "entries"),
        ({"crossfit_K": 1}, "crossfit_K"),
    ],
)
def test_config_validation(kw, match):
    with pytest.raises(SpecError, match=match):
        smoke_config(**kw)


def test_config_from_dict():
    cfg = BenchmarkConfig.from_dict(
        {"sample_sizes": [30], "replicates": 2, "methods": ["dcee"], "nuisance": {"kind": "mean-only"}}
    )
    assert cfg.learner.kind == "mean-only" and cfg.beta_star is None
    assert BenchmarkConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(SpecError, match="unknown"):
        BenchmarkConfig.from_dict({"sample_sizes": [30], "replicates": 2, "methods": ["dcee"], "extra": 1})
    with pytest.raises(SpecError, match="needs"):
        BenchmarkConfig.from_dict({"sample_sizes": [30], "replicates": 2})


def test_failures_counted_then_abort(monkeypatch):
    real = benchmark._fit

    def flaky(cfg, method, n, r):
        if r in fail:
            raise SingularMatrixError("bread", 1e17)
        return real(cfg, method, n, r)

    monkeypatch.setattr(benchmark, "_fit", flaky)
    cfg = smoke_config(sample_sizes=(20,), replicates=40, methods=("gee",))
    fail = {3, 7}
    report = run_benchmark(cfg)
    assert report.row("gee", 20)["n_failed"] == 2 and report.row("gee", 20)["n_ok"] == 38
    failed = [r for r in report.replicates if r["status"] == "failed"]
    assert [r["replicate"] for r in failed] == [3, 7] and "SingularMatrixError" in failed[0]["error"]
    fail = {1, 2, 3}
    with pytest.raises(BenchmarkAborted, match="3/40"):
        run_benchmark(cfg)


def test_oracle_cache(tmp_path, monkeypatch):
    model = default_paper_params(T=3)
    spec = EstimandSpec.marginal(WeightSpec("point", t0=1))
    first = cached_oracle(model, spec, 10_000, 1, tmp_path)
    files = list(tmp_path.glob("*.json"))
    assert len(files) == 1 and files[0].stem == oracle_cache_key(model, spec, 10_000, 1)

    def boom(*a, **k):
        raise AssertionError("oracle recomputed")

    monkeypatch.setattr(benchmark, "compute_oracle_beta", boom)
    second = cached_oracle(model, spec, 10_000, 1, tmp_path)
    np.testing.assert_array_equal(first.beta_star, second.beta_star)
    assert oracle_cache_key(model, spec, 10_000, 2) != oracle_cache_key(model, spec, 10_000, 1)
    assert oracle_cache_key(default_paper_params(), spec, 10_000, 1) != oracle_cache_key(model, spec, 10_000, 1)
    assert oracle_cache_key(model, EstimandSpec.marginal(), 10_000, 1) != oracle_cache_key(model, spec, 10_000, 1)


def test_benchmark_uses_cached_oracle(tmp_path):
    params = default_paper_params(T=3)
    cfg = BenchmarkConfig((20,), 2, ("gee",), params=params, oracle_mc_size=10_000, seed=2)
    report = run_benchmark(cfg, cache_dir=tmp_path)
    assert report.beta_star_source.startswith("oracle(") and len(list(tmp_path.glob("*.json"))) == 1


def test_dcee_unbiased_at_moderate_n():
    report = run_benchmark(BenchmarkConfig((100,), 200, ("dcee",), beta_star=(BETA_STAR_MARGINAL,), seed=8))
    row = report.row("dcee", 100)
    assert abs(row["bias"]) <= 3 * row["bias_mcse"]


def test_gee_undercovers_at_n500():
    report = run_benchmark(BenchmarkConfig((500,), 200, ("gee",), beta_star=(BETA_STAR_MARGINAL,), seed=8))
    assert report.row("gee", 500)["coverage"] < 0.80
