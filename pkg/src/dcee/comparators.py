"""Longitudinal-regression baselines that do not target the distal excursion effect.

Both regress the person's distal outcome, repeated at every decision point,
on pooled person-time rows and report person-clustered sandwich errors.
They are biased for the excursion effect by construction and are kept only
as comparators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import DEFAULT_CLIP, MrtDataset, validate
from .errors import SingularMatrixError, SpecError, ValidationError
from .estimand import EstimandSpec, build_features
from .estimator import RCOND_MIN, _ci


@dataclass
class ComparatorFit:
    method: str
    beta_hat: np.ndarray
    vcov: np.ndarray
    se: np.ndarray
    ci: np.ndarray
    level: float
    names: list[str]
    n: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "coefficients": dict(zip(self.names, self.beta_hat.tolist())),
            "names": list(self.names),
            "beta_hat": self.beta_hat.tolist(),
            "se": self.se.tolist(),
            "ci": self.ci.tolist(),
            "ci_level": self.level,
            "vcov": self.vcov.ravel().tolist(),
            "p": len(self.names),
            "n": self.n,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _clustered_wls(design: np.ndarray, y: np.ndarray, w: np.ndarray, person: np.ndarray, n: int):
    """Weighted least squares with the person-clustered (CR0) sandwich."""
    Xw = design * w[:, None]
    bread = Xw.T @ design
    sv = np.linalg.svd(bread, compute_uv=False)
    if sv[-1] <= 0 or sv[-1] / sv[0] < RCOND_MIN:
        cond = np.inf if sv[-1] <= 0 else sv[0] / sv[-1]
        raise SingularMatrixError("comparator design", cond)
    coef = np.linalg.solve(bread, Xw.T @ y)
    score_rows = Xw * (y - design @ coef)[:, None]
    scores = np.zeros((n, design.shape[1]))
    np.add.at(scores, person, score_rows)
    inv = np.linalg.inv(bread)
    vcov = inv @ (scores.T @ scores) @ inv.T
    return coef, (vcov + vcov.T) / 2, float(sv[0] / sv[-1])


def _controls(ds: MrtDataset, controls) -> tuple[str, ...]:
    names = ds.covariate_names if controls is None else tuple(controls)
    for name in names:
        ds.covariate(name)
    return names


def _check(ds: MrtDataset, spec: EstimandSpec, controls, clip: float) -> None:
    used = set(spec.moderators) | set(controls)
    report = validate(ds, clip, covariates=[c for c in ds.covariate_names if c in used])
    if not report.ok:
        raise ValidationError(report)


def _finish(method, coef, vcov, p, spec, ds, level, diagnostics) -> ComparatorFit:
    beta, V = coef[-p:], vcov[-p:, -p:]
    se = np.sqrt(np.clip(np.diag(V), 0.0, None))
    return ComparatorFit(
        method=method,
        beta_hat=beta,
        vcov=V,
        se=se,
        ci=_ci(beta, se, level, ds.n, p, False),
        level=level,
        names=spec.labels(),
        n=ds.n,
        diagnostics=diagnostics,
    )


def estimate_gee(
    ds: MrtDataset,
    spec: EstimandSpec | None = None,
    *,
    controls=None,
    level: float = 0.95,
    clip: float = DEFAULT_CLIP,
) -> ComparatorFit:
    """Working-independence GEE with identity link, pooled over all decision points.

    Mean model: a single intercept, the control covariates (all covariates by
    default) and A_t f(t, S_t). The coefficients on A_t f(t, S_t) are reported.
    """
    spec = spec or EstimandSpec.marginal()
    controls = _controls(ds, controls)
    _check(ds, spec, controls, clip)
    n, T, p = ds.n, ds.T, spec.p
    F = build_features(ds, spec).reshape(n * T, p)
    A = ds.treat.reshape(-1).astype(float)
    design = np.column_stack(
        [np.ones(n * T)] + [ds.covariate(c).reshape(-1) for c in controls] + [A[:, None] * F]
    )
    y = np.repeat(ds.outcome, T)
    person = np.repeat(np.arange(n), T)
    coef, vcov, cond = _clustered_wls(design, y, np.ones(n * T), person, n)
    return _finish("gee", coef, vcov, p, spec, ds, level, {"rows_used": n * T, "design_condition": cond})


def estimate_wcls(
    ds: MrtDataset,
    spec: EstimandSpec | None = None,
    ptilde: float | str | None = "empirical",
    *,
    controls=None,
    level: float = 0.95,
    clip: float = DEFAULT_CLIP,
) -> ComparatorFit:
    """Weighted and centered least squares with the distal outcome as a repeated response.

    Uses eligible rows only. Row weights are
    ``ptilde^A (1 - ptilde)^(1 - A) / p_t(A | H_t)`` and the treatment enters
    as ``(A_t - ptilde) f(t, S_t)`` next to an intercept and the controls.
    ``ptilde="empirical"`` (or None) uses the treatment rate over eligible rows.
    """
    spec = spec or EstimandSpec.marginal()
    controls = _controls(ds, controls)
    _check(ds, spec, controls, clip)
    n, T, p = ds.n, ds.T, spec.p
    rows = ds.elig == 1
    A = ds.treat[rows].astype(float)
    if A.size == 0:
        raise SpecError("no eligible rows")
    if ptilde is None or ptilde == "empirical":
        pt = float(A.mean())
    else:
        pt = float(ptilde)
    if not 0 < pt < 1:
        raise SpecError(f"ptilde must be in (0, 1), got {pt}")
    prob = ds.prob[rows]
    w = np.where(A == 1, pt / prob, (1 - pt) / (1 - prob))
    F = build_features(ds, spec)[rows]
    design = np.column_stack(
        [np.ones(A.size)] + [ds.covariate(c)[rows] for c in controls] + [(A - pt)[:, None] * F]
    )
    y = np.broadcast_to(ds.outcome[:, None], (n, T))[rows]
    person = np.broadcast_to(np.arange(n)[:, None], (n, T))[rows]
    coef, vcov, cond = _clustered_wls(design, y, w, person, n)
    diagnostics = {"rows_used": int(A.size), "ptilde": pt, "design_condition": cond}
    return _finish("wcls", coef, vcov, p, spec, ds, level, diagnostics)
