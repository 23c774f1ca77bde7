"""Cubic B-spline bases with quantile knots.

The basis follows the usual ``bs(x, df)`` convention: ``df`` columns, no
intercept column, interior knots at empirical quantiles of the training
values and boundary knots at their range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import SpecError


@dataclass(frozen=True)
class SplineBasis:
    interior_knots: tuple[float, ...]
    boundary: tuple[float, float]
    degree: int

    @property
    def df(self) -> int:
        return len(self.interior_knots) + self.degree

    @classmethod
    def from_data(cls, x, df: int, degree: int = 3) -> "SplineBasis":
        x = np.asarray(x, dtype=float).ravel()
        if df < 1:
            raise SpecError(f"spline df must be >= 1, got {df}")
        if x.size == 0 or not np.all(np.isfinite(x)):
            raise SpecError("spline basis needs finite training values")
        n_distinct = np.unique(x).size
        if n_distinct < df:
            raise SpecError(
                f"spline with df={df} needs at least {df} distinct values, got {n_distinct}"
            )
        lo, hi = float(x.min()), float(x.max())
        if lo == hi:
            raise SpecError("spline basis needs at least two distinct values")
        degree = min(degree, df)
        n_interior = df - degree
        probs = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
        knots = tuple(float(k) for k in np.quantile(x, probs))
        return cls(knots, (lo, hi), degree)

    def knot_vector(self) -> np.ndarray:
        lo, hi = self.boundary
        k = self.degree
        return np.r_[[lo] * (k + 1), self.interior_knots, [hi] * (k + 1)]

    def __call__(self, x) -> np.ndarray:
        """Evaluate the basis; values outside the boundary are clamped to it."""
        x = np.clip(np.asarray(x, dtype=float).ravel(), *self.boundary)
        dm = BSpline.design_matrix(x, self.knot_vector(), self.degree)
        return dm.toarray()[:, 1:]
