import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dcee.data import MrtDataset

settings.register_profile("ci", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def random_mrt(rng, n=40, T=5, elig_rate=0.8, effect=1.0):
    """Random valid MRT dataset with one continuous and one binary covariate."""
    elig = rng.random((n, T)) < elig_rate
    p = rng.uniform(0.2, 0.8, (n, T))
    treat = elig & (rng.random((n, T)) < p)
    X = rng.normal(size=(n, T))
    Z = (rng.random((n, T)) < 0.5).astype(float)
    y = rng.normal(size=n) + effect * treat.sum(axis=1) + X.sum(axis=1)
    return MrtDataset(
        ids=np.arange(1, n + 1),
        elig=elig,
        treat=treat,
        prob=np.where(elig, p, np.nan),
        covariates={"X": X, "Z": Z},
        outcome=y,
    )


@pytest.fixture
def make_mrt():
    return random_mrt


ACCEPTANCE_LOG: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    """Record a pass/fail line for an acceptance criterion, then assert it."""

    def record(label: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_LOG.append((label, bool(ok), detail))
        print(f"{label}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"{label}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE_LOG:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
