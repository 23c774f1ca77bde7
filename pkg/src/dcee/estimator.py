"""Distal causal excursion effect estimation.

The estimating function for one person is

    phi(beta, mu) = sum_t w(t) [U_t - f_t' beta] f_t,
    U_t = I_t (-1)^(1 - A_t) / p_t(A_t | H_t)
          * {Y - p_t(0 | H_t) mu_t(H_t, 1) - p_t(1 | H_t) mu_t(H_t, 0)},

which is affine in beta, so P_n phi(beta, mu_hat) = 0 is a p x p linear
system. With cross-fitting, rows of fold k use mu_hat fitted on the other
folds; the pooled equation and the sandwich are otherwise unchanged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import stats

from .data import DEFAULT_CLIP, DecisionRow, MrtDataset, Trajectory, validate
from .errors import EmptyArmError, NumericalError, SingularMatrixError, SpecError, ValidationError
from .estimand import EstimandSpec, build_features, build_weights
from .nuisance import (
    FoldAssignment,
    LearnerSpec,
    fit_outcome_model,
    fit_pooled_mean,
    make_folds,
)

log = logging.getLogger(__name__)

RCOND_MIN = 1e-10
ROOT_TOL = 1e-10


@dataclass(frozen=True)
class PhiTerms:
    """Per-row ingredients of phi for a set of persons.

    ``ipw`` is U_t (zero at ineligible rows), ``features`` is f(t, S_t) and
    ``weights`` is w(t).
    """

    ipw: np.ndarray  # (n, T) or (T,)
    features: np.ndarray  # (n, T, p) or (T, p)
    weights: np.ndarray  # (T,)


@dataclass
class DceeFit:
    beta_hat: np.ndarray
    vcov: np.ndarray
    se: np.ndarray
    ci: np.ndarray  # (p, 2)
    level: float
    crossfit_K: int
    names: list[str]
    n: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "coefficients": dict(zip(self.names, self.beta_hat.tolist())),
            "names": list(self.names),
            "beta_hat": self.beta_hat.tolist(),
            "se": self.se.tolist(),
            "ci": self.ci.tolist(),
            "ci_level": self.level,
            "vcov": self.vcov.ravel().tolist(),
            "p": len(self.names),
            "n": self.n,
            "crossfit_K": self.crossfit_K,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def residual_term(row: DecisionRow, y: float, mu1: float, mu0: float) -> float:
    """U_t for a single decision row.

    Returns I_t (-1)^(1-A_t) / p_t(A_t|H_t) * {y - (1-p) mu1 - p mu0}; the
    probability is never read at ineligible rows.
    """
    if row.elig == 0:
        return 0.0
    p = row.prob
    if not 0.0 < p < 1.0:
        raise SpecError(f"randomization probability {p!r} outside (0, 1) at an eligible row")
    if row.treat == 1:
        return (y - (1 - p) * mu1 - p * mu0) / p
    return -(y - (1 - p) * mu1 - p * mu0) / (1 - p)


def ipw_terms(ds: MrtDataset, mu1: np.ndarray, mu0: np.ndarray) -> np.ndarray:
    """Vectorized U_t for every (person, t); shape (n, T)."""
    on = ds.elig == 1
    p = np.where(on, ds.prob, 0.5)
    if np.any(~((p > 0) & (p < 1))):
        raise SpecError("randomization probability outside (0, 1) at an eligible row")
    a = ds.treat == 1
    p_obs = np.where(a, p, 1.0 - p)
    sign = np.where(a, 1.0, -1.0)
    y = ds.outcome[:, None]
    resid = y - (1.0 - p) * mu1 - p * mu0
    return np.where(on, sign / p_obs * resid, 0.0)


def phi_person(traj: Trajectory | None, beta, terms: PhiTerms) -> np.ndarray:
    """phi(beta, mu) for one person, from that person's (T,) / (T, p) terms."""
    beta = np.asarray(beta, dtype=float)
    F = np.asarray(terms.features, dtype=float)
    U = np.asarray(terms.ipw, dtype=float)
    w = np.asarray(terms.weights, dtype=float)
    if F.ndim != 2 or F.shape[1] != beta.size or U.shape != (F.shape[0],) or w.shape != U.shape:
        raise SpecError(
            f"dimension mismatch: features {F.shape}, ipw {U.shape}, weights {w.shape}, beta {beta.shape}"
        )
    if traj is not None and traj.T != U.size:
        raise SpecError(f"terms cover {U.size} decision points, trajectory has {traj.T}")
    return ((w * (U - F @ beta))[:, None] * F).sum(axis=0)


def phi_matrix(beta, terms: PhiTerms) -> np.ndarray:
    """phi(beta, mu) for every person; shape (n, p)."""
    F, U, w = terms.features, terms.ipw, terms.weights
    r = U - np.einsum("ntp,p->nt", F, np.asarray(beta, dtype=float))
    return np.einsum("nt,ntp->np", r * w[None, :], F)


def _bread_and_rhs(terms: PhiTerms) -> tuple[np.ndarray, np.ndarray]:
    F, U, w = terms.features, terms.ipw, terms.weights
    n = F.shape[0]
    Fw = F * w[None, :, None]
    bread = np.einsum("ntp,ntq->pq", Fw, F) / n
    rhs = np.einsum("ntp,nt->p", Fw, U) / n
    return bread, rhs


def _check_bread(bread: np.ndarray, seed=None) -> float:
    if not np.all(np.isfinite(bread)):
        raise SingularMatrixError("bread matrix", np.inf, seed)
    sv = np.linalg.svd(bread, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if not np.isfinite(cond) or 1.0 / cond < RCOND_MIN:
        raise SingularMatrixError("bread matrix P_n sum_t w(t) f f'", cond, seed)
    return cond


def make_terms(ds: MrtDataset, mu_preds, spec: EstimandSpec) -> PhiTerms:
    mu1, mu0 = mu_preds
    return PhiTerms(
        ipw=ipw_terms(ds, np.asarray(mu1, float), np.asarray(mu0, float)),
        features=build_features(ds, spec),
        weights=build_weights(ds.T, spec),
    )


def _solve(terms: PhiTerms, seed=None) -> tuple[np.ndarray, dict]:
    bread, rhs = _bread_and_rhs(terms)
    cond = _check_bread(bread, seed)
    beta = np.linalg.solve(bread, rhs)
    resid = float(np.max(np.abs(phi_matrix(beta, terms).mean(axis=0))))
    scale = 1.0 + float(np.max(np.abs(rhs)))
    if resid > ROOT_TOL * scale:
        raise NumericalError(f"root residual {resid:.3e} exceeds tolerance (scale {scale:.3e})")
    return beta, {"bread_condition": cond, "root_residual": resid, "root_scale": scale}


def solve_beta(ds: MrtDataset, mu_preds, spec: EstimandSpec) -> np.ndarray:
    """Closed-form root of P_n phi(beta, mu) = 0 for given nuisance predictions.

    Parameters
    ----------
    ds : MrtDataset
    mu_preds : tuple of ndarray
        ``(mu1, mu0)``, each shape (n, T); read only at eligible rows.
    spec : EstimandSpec
    """
    beta, _ = _solve(make_terms(ds, mu_preds, spec))
    return beta


def _sandwich(terms: PhiTerms, beta: np.ndarray) -> np.ndarray:
    n = terms.features.shape[0]
    bread, _ = _bread_and_rhs(terms)
    phi = phi_matrix(beta, terms)
    meat = phi.T @ phi / n
    binv = np.linalg.inv(bread)
    V = binv @ meat @ binv.T
    return (V + V.T) / 2 / n


def sandwich_variance(
    ds: MrtDataset,
    beta_hat,
    mu_preds,
    spec: EstimandSpec,
    folds: FoldAssignment | None = None,
) -> np.ndarray:
    """Per-estimate covariance V_hat / n.

    Under cross-fitting, ``mu_preds`` already hold fold-specific predictions
    and every person carries weight 1/n, so the fold-averaged bread and meat
    reduce to the pooled averages. ``folds`` is checked for coverage only.
    """
    if folds is not None:
        folds.folds_for(ds.ids)
    terms = make_terms(ds, mu_preds, spec)
    _check_bread(_bread_and_rhs(terms)[0])
    return _sandwich(terms, np.asarray(beta_hat, dtype=float))


def nuisance_predictions(
    ds: MrtDataset,
    learner: LearnerSpec,
    K: int = 0,
    seed: int = 0,
) -> tuple[tuple[np.ndarray, np.ndarray], dict]:
    """Stage 1: (mu1, mu0) at every row, cross-fitted when K > 0."""
    if K == 0:
        model = fit_outcome_model(ds, None, learner)
        return (model.predict(ds, 1), model.predict(ds, 0)), {}
    folds = make_folds(ds.ids, K, seed)
    fold = folds.folds_for(ds.ids)
    mu1 = np.empty((ds.n, ds.T))
    mu0 = np.empty((ds.n, ds.T))
    fallback = []
    for k in range(K):
        inside = np.nonzero(fold == k)[0]
        outside = np.nonzero(fold != k)[0]
        try:
            model = fit_outcome_model(ds, outside, learner)
        except (EmptyArmError, SingularMatrixError) as exc:
            log.info("fold %d: nuisance fit failed (%s); using mean-only fallback", k, exc)
            model = fit_pooled_mean(ds, outside)
            fallback.append(k)
        part = ds.subset(inside)
        mu1[inside] = model.predict(part, 1)
        mu0[inside] = model.predict(part, 0)
    return (mu1, mu0), {"fold_sizes": folds.sizes(), "fallback_folds": fallback}


def _check_arms(ds: MrtDataset, seed) -> None:
    on = ds.elig == 1
    for a in (1, 0):
        if not np.any(on & (ds.treat == a)):
            raise EmptyArmError(f"no eligible rows with A_t={a} [seed={seed}]")


def _ci(beta, se, level, n, p, use_t):
    if not 0 < level < 1:
        raise SpecError(f"ci level must be in (0, 1), got {level}")
    q = (1 + level) / 2
    crit = stats.t.ppf(q, n - p) if use_t else stats.norm.ppf(q)
    return np.column_stack([beta - crit * se, beta + crit * se])


def estimate_dcee(
    ds: MrtDataset,
    spec: EstimandSpec | None = None,
    learner: LearnerSpec | None = None,
    K: int = 0,
    seed: int = 0,
    level: float = 0.95,
    *,
    use_t: bool = False,
    clip: float = DEFAULT_CLIP,
    check: bool = True,
) -> DceeFit:
    """Two-stage DCEE estimator, optionally cross-fitted.

    Parameters
    ----------
    ds : MrtDataset
    spec : EstimandSpec
        Feature map, moderators and weights; defaults to the fully marginal
        effect with uniform weights.
    learner : LearnerSpec
        Nuisance learner; defaults to ridge-spline.
    K : int
        0 fits the nuisance on everyone; K >= 2 uses K-fold cross-fitting.
    seed : int
        Seed for the fold partition (recorded in diagnostics).
    level : float
        Confidence level of the intervals.
    use_t : bool
        Use a t quantile with n - p degrees of freedom instead of the normal.
    clip : float
        Positivity bound used when validating ``ds``.
    check : bool
        Validate ``ds`` first and raise :class:`ValidationError` on issues.

    Returns
    -------
    DceeFit
    """
    spec = spec or EstimandSpec()
    learner = learner or LearnerSpec()
    if K != 0 and not 2 <= K <= ds.n:
        raise SpecError(f"crossfit K must be 0 or in [2, n={ds.n}], got {K}")
    if check:
        used = set(spec.moderators)
        if learner.kind not in ("mean-only", "constant"):
            used |= set(learner.covariates if learner.covariates is not None else ds.covariate_names)
        used = [c for c in ds.covariate_names if c in used] + sorted(used - set(ds.covariate_names))
        report = validate(ds, clip, covariates=used)
        if not report.ok:
            raise ValidationError(report)
    _check_arms(ds, seed)
    mu_preds, nuis_diag = nuisance_predictions(ds, learner, K, seed)
    terms = make_terms(ds, mu_preds, spec)
    beta, diag = _solve(terms, seed)
    vcov = _sandwich(terms, beta)
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    diag.update(nuis_diag)
    diag["seed"] = seed
    return DceeFit(
        beta_hat=beta,
        vcov=vcov,
        se=se,
        ci=_ci(beta, se, level, ds.n, spec.p, use_t),
        level=level,
        crossfit_K=K,
        names=spec.labels(),
        n=ds.n,
        diagnostics=diag,
    )


def xi_terms(ds: MrtDataset) -> np.ndarray:
    """Raw IPW contrast 1(A=I)/P(A=I|H) Y - 1(A=0)/P(A=0|H) Y; shape (n, T)."""
    on = ds.elig == 1
    a = ds.treat
    p1 = np.where(on, ds.prob, 0.0)
    # P(A_t = I_t | H_t): prob when eligible, 1 when ineligible (A_t = 0 forced)
    p_match = np.where(on, p1, 1.0)
    p_zero = np.where(on, 1.0 - p1, 1.0)
    y = ds.outcome[:, None]
    ind_match = (a == ds.elig).astype(float)
    ind_zero = (a == 0).astype(float)
    return ind_match / p_match * y - ind_zero / p_zero * y


def xi_estimate(ds: MrtDataset, spec: EstimandSpec | None = None) -> np.ndarray:
    """Root of the preliminary (nuisance-free) estimating equation."""
    spec = spec or EstimandSpec()
    terms = PhiTerms(xi_terms(ds), build_features(ds, spec), build_weights(ds.T, spec))
    beta, _ = _solve(terms)
    return beta
