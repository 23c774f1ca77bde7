"""Outcome-regression nuisance mu_t(H_t, a) = E(Y | H_t, A_t = a) and cross-fitting folds.

Each arm gets its own regression, pooled over decision points and fitted on
eligible rows only. Learners are deliberately simple and deterministic: the
estimator stays consistent for any fitted limit, so the learner only
affects efficiency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import DecisionRow, MrtDataset
from .errors import DataError, EmptyArmError, SingularMatrixError, SpecError
from .splines import SplineBasis

KINDS = ("mean-only", "linear", "ridge-spline", "constant")
RCOND_MIN = 1e-12


@dataclass(frozen=True)
class LearnerSpec:
    """Nuisance learner configuration.

    ``continuous_covariates=None`` lets ridge-spline expand every covariate
    with more than two distinct training values; ``covariates=None`` uses
    every covariate of the dataset. ``kind="constant"`` ignores the data
    and predicts ``value`` for both arms.
    """

    kind: str = "ridge-spline"
    spline_df: int = 4
    ridge_lambda: float = 1e-6
    continuous_covariates: tuple[str, ...] | None = None
    covariates: tuple[str, ...] | None = None
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown learner kind {self.kind!r}; choose from {KINDS}")
        if self.spline_df < 1:
            raise SpecError("spline_df must be >= 1")
        if not self.ridge_lambda >= 0:
            raise SpecError("ridge_lambda must be >= 0")
        for attr in ("continuous_covariates", "covariates"):
            v = getattr(self, attr)
            if v is not None:
                object.__setattr__(self, attr, tuple(v))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "spline_df": self.spline_df, "ridge_lambda": self.ridge_lambda}
        if self.continuous_covariates is not None:
            d["continuous_covariates"] = list(self.continuous_covariates)
        if self.covariates is not None:
            d["covariates"] = list(self.covariates)
        if self.kind == "constant":
            d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "LearnerSpec":
        if not d:
            return cls()
        unknown = set(d) - {"kind", "spline_df", "ridge_lambda", "continuous_covariates", "covariates", "value"}
        if unknown:
            raise SpecError(f"unexpected nuisance key(s) {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class _Recipe:
    """Maps covariate values to the nuisance design matrix."""

    splines: tuple[tuple[str, SplineBasis], ...] = ()
    raw: tuple[str, ...] = ()

    @property
    def width(self) -> int:
        return 1 + sum(b.df for _, b in self.splines) + len(self.raw)

    def covariates(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.splines) + self.raw

    def design(self, cov: Mapping[str, np.ndarray], m: int) -> np.ndarray:
        cols = [np.ones((m, 1))]
        for name, basis in self.splines:
            cols.append(basis(cov[name]))
        for name in self.raw:
            cols.append(np.asarray(cov[name], dtype=float).reshape(-1, 1))
        return np.hstack(cols)


@dataclass(frozen=True)
class OutcomeModel:
    """Fitted per-arm regressions. Immutable; prediction is deterministic."""

    spec: LearnerSpec
    recipe: _Recipe
    coef: Mapping[int, np.ndarray]
    diagnostics: Mapping[str, object] = field(default_factory=dict)

    def predict(self, ds: MrtDataset, a: int) -> np.ndarray:
        """mu(H_t, a) at every (person, t); shape (n, T)."""
        if self.spec.kind == "constant":
            return np.full((ds.n, ds.T), float(self.spec.value))
        cov = {name: ds.covariate(name).ravel() for name in self.recipe.covariates()}
        return (self.recipe.design(cov, ds.n * ds.T) @ self.coef[a]).reshape(ds.n, ds.T)


def _recipe_for(spec: LearnerSpec, ds: MrtDataset, rows: np.ndarray) -> _Recipe:
    if spec.kind in ("mean-only", "constant"):
        return _Recipe()
    names = ds.covariate_names if spec.covariates is None else spec.covariates
    for name in names:
        ds.covariate(name)
    if spec.kind == "linear":
        return _Recipe((), tuple(names))
    if spec.continuous_covariates is None:
        cont = tuple(n for n in names if np.unique(ds.covariate(n)[rows]).size > 2)
    else:
        cont = spec.continuous_covariates
        for name in cont:
            ds.covariate(name)
    splines = tuple((n, SplineBasis.from_data(ds.covariate(n)[rows], spec.spline_df)) for n in cont)
    raw = tuple(n for n in names if n not in cont)
    return _Recipe(splines, raw)


def _ridge(D: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    G = D.T @ D
    if lam > 0:
        pen = np.full(D.shape[1], lam)
        pen[0] = 0.0
        G = G + np.diag(pen)
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or 1.0 / cond < RCOND_MIN:
        raise SingularMatrixError("nuisance normal equations", cond)
    return np.linalg.solve(G, D.T @ y), float(cond)


def fit_outcome_model(
    ds: MrtDataset,
    include=None,
    spec: LearnerSpec | None = None,
) -> OutcomeModel:
    """Fit mu(., 1) and mu(., 0) on the eligible rows of persons ``include``.

    Parameters
    ----------
    ds : MrtDataset
    include : array-like of int or bool, optional
        Person positions (or mask) to train on; defaults to everyone.
    spec : LearnerSpec, optional

    Raises
    ------
    EmptyArmError
        An arm has fewer eligible rows than design columns plus one.
    SingularMatrixError
        Normal equations are singular and ``ridge_lambda`` is zero.
    """
    spec = spec or LearnerSpec()
    person_mask = np.zeros(ds.n, dtype=bool)
    if include is None:
        person_mask[:] = True
    else:
        include = np.asarray(include)
        person_mask[include] = True
    if not person_mask.any():
        raise EmptyArmError("no persons to fit the outcome model on")
    if spec.kind == "constant":
        return OutcomeModel(spec, _Recipe(), {}, {"rows_used": 0})

    rows = (ds.elig == 1) & person_mask[:, None]
    recipe = _recipe_for(spec, ds, rows)
    y_rows = np.broadcast_to(ds.outcome[:, None], ds.elig.shape)
    coef, diag = {}, {"rows_used": {}, "residual_scale": {}, "condition": {}}
    for a in (1, 0):
        sel = rows & (ds.treat == a)
        m = int(sel.sum())
        if m < recipe.width + 1:
            raise EmptyArmError(
                f"arm a={a} has {m} eligible rows; need at least {recipe.width + 1}"
            )
        D = recipe.design({name: ds.covariate(name)[sel] for name in recipe.covariates()}, m)
        y = y_rows[sel]
        c, cond = _ridge(D, y, spec.ridge_lambda if spec.kind == "ridge-spline" else 0.0)
        resid = y - D @ c
        coef[a] = c
        diag["rows_used"][a] = m
        diag["residual_scale"][a] = float(np.sqrt(np.mean(resid**2)))
        diag["condition"][a] = cond
    return OutcomeModel(spec, recipe, coef, diag)


def fit_pooled_mean(ds: MrtDataset, include=None) -> OutcomeModel:
    """Degenerate-fold fallback: per-arm means, or the pooled eligible mean for an empty arm."""
    person_mask = np.zeros(ds.n, dtype=bool)
    person_mask[np.asarray(include) if include is not None else slice(None)] = True
    rows = (ds.elig == 1) & person_mask[:, None]
    y_rows = np.broadcast_to(ds.outcome[:, None], ds.elig.shape)
    pooled = float(y_rows[rows].mean()) if rows.any() else float(ds.outcome[person_mask].mean())
    coef = {}
    for a in (1, 0):
        sel = rows & (ds.treat == a)
        coef[a] = np.array([y_rows[sel].mean() if sel.any() else pooled])
    return OutcomeModel(LearnerSpec("mean-only"), _Recipe(), coef, {"fallback": True})


def predict_mu(model: OutcomeModel, row: DecisionRow, a: int) -> float:
    """mu(H_t, a) for a single decision row."""
    if a not in (0, 1):
        raise ValueError("a must be 0 or 1")
    if model.spec.kind == "constant":
        return float(model.spec.value)
    cov = {}
    for name in model.recipe.covariates():
        if name not in row.covariates:
            raise DataError(f"row is missing covariate {name!r} required by the outcome model")
        cov[name] = np.array([row.covariates[name]], dtype=float)
    D = model.recipe.design(cov, 1)
    return float((D @ model.coef[a])[0])


@dataclass(frozen=True)
class FoldAssignment:
    K: int
    fold_of: Mapping[object, int]
    seed: int

    def folds_for(self, ids: Sequence) -> np.ndarray:
        """Fold index of each id, in the given order."""
        try:
            return np.array([self.fold_of[i] for i in np.asarray(ids).tolist()], dtype=int)
        except KeyError as exc:
            raise DataError(f"person {exc.args[0]!r} has no fold") from None

    def sizes(self) -> list[int]:
        return np.bincount(list(self.fold_of.values()), minlength=self.K).tolist()


def make_folds(ids: Sequence, K: int, seed: int) -> FoldAssignment:
    """Random partition of persons into K folds whose sizes differ by at most one."""
    ids = list(np.asarray(ids).tolist())
    n = len(ids)
    if K < 2 or K > n:
        raise SpecError(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    fold = np.empty(n, dtype=int)
    fold[perm] = np.arange(n) % K
    return FoldAssignment(K, {pid: int(k) for pid, k in zip(ids, fold)}, seed)
