"""Estimand specification: feature map f(t, S_t) and time weights w(t).

The feature vocabulary is a closed list of term types so that every column
of the design can be named and audited:

========================  ==============================================
``intercept``             constant 1
``poly``                  (t - center)^k for k = 1..degree
``bspline``               cubic B-spline basis (``df`` columns) in
                          ``floor((t - 1) / period) + 1``
``moderator``             moderator value S_t
``moderator_time``        S_t * (t - center)^k for k = 1..degree
========================  ==============================================
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import MrtDataset
from .errors import SpecError
from .splines import SplineBasis

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class Term:
    type: str
    degree: int = 1
    center: float = 0.0
    df: int = 0
    period: int = 1
    name: str = ""

    def to_dict(self) -> dict:
        keep = {
            "intercept": (),
            "poly": ("degree", "center"),
            "bspline": ("df", "period"),
            "moderator": ("name",),
            "moderator_time": ("name", "degree", "center"),
        }[self.type]
        d = {"type": self.type}
        d.update({k: getattr(self, k) for k in keep})
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Term":
        d = dict(d)
        kind = d.get("type")
        if kind not in ("intercept", "poly", "bspline", "moderator", "moderator_time"):
            raise SpecError(f"unknown feature term type {kind!r}")
        unknown = set(d) - {"type", "degree", "center", "df", "period", "name"}
        if unknown:
            raise SpecError(f"unexpected key(s) {sorted(unknown)} in term {kind!r}")
        term = cls(**d)
        term.check()
        return term

    def check(self) -> None:
        if self.type in ("poly", "moderator_time") and self.degree < 1:
            raise SpecError(f"{self.type} degree must be >= 1")
        if self.type == "bspline" and (self.df < 1 or self.period < 1):
            raise SpecError("bspline needs df >= 1 and period >= 1")
        if self.type in ("moderator", "moderator_time") and not self.name:
            raise SpecError(f"{self.type} term needs a moderator name")

    def width(self) -> int:
        return {"intercept": 1, "bspline": self.df, "moderator": 1}.get(self.type, self.degree)

    def labels(self) -> list[str]:
        c = self.center
        tc = "t" if c == 0 else f"(t-{c:g})"
        if self.type == "intercept":
            return ["(Intercept)"]
        if self.type == "poly":
            return [tc if k == 1 else f"{tc}^{k}" for k in range(1, self.degree + 1)]
        if self.type == "bspline":
            return [f"bs(day{self.period},{self.df})[{k}]" for k in range(1, self.df + 1)]
        if self.type == "moderator":
            return [self.name]
        return [f"{self.name}:{tc}" if k == 1 else f"{self.name}:{tc}^{k}" for k in range(1, self.degree + 1)]


INTERCEPT = Term("intercept")


@dataclass(frozen=True)
class WeightSpec:
    kind: str = "uniform"
    t0: int | None = None
    values: tuple[float, ...] | None = None

    def to_dict(self) -> dict:
        if self.kind == "point":
            return {"kind": "point", "t0": self.t0}
        if self.kind == "explicit":
            return {"kind": "explicit", "values": list(self.values)}
        return {"kind": "uniform"}

    @classmethod
    def from_dict(cls, d: Mapping | str | None) -> "WeightSpec":
        if d is None:
            return cls()
        if isinstance(d, str):
            d = {"kind": d}
        kind = d.get("kind", "uniform")
        if kind == "uniform":
            return cls()
        if kind == "point":
            if "t0" not in d:
                raise SpecError("point-mass weight needs t0")
            return cls("point", t0=int(d["t0"]))
        if kind == "explicit":
            if "values" not in d:
                raise SpecError("explicit weight needs values")
            return cls("explicit", values=tuple(float(v) for v in d["values"]))
        raise SpecError(f"unknown weight kind {kind!r}")


@dataclass(frozen=True)
class EstimandSpec:
    """Defines the projection target: moderators, feature terms and weights."""

    moderators: tuple[str, ...] = ()
    terms: tuple[Term, ...] = (INTERCEPT,)
    weight: WeightSpec = field(default_factory=WeightSpec)

    def __post_init__(self):
        object.__setattr__(self, "moderators", tuple(self.moderators))
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise SpecError("estimand needs at least one feature term")
        for term in self.terms:
            term.check()
            if term.type in ("moderator", "moderator_time") and term.name not in self.moderators:
                raise SpecError(f"term uses {term.name!r}, which is not listed in moderators")

    @property
    def p(self) -> int:
        return sum(t.width() for t in self.terms)

    def labels(self) -> list[str]:
        return [lab for t in self.terms for lab in t.labels()]

    def to_dict(self) -> dict:
        return {
            "moderators": list(self.moderators),
            "terms": [t.to_dict() for t in self.terms],
            "weight": self.weight.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EstimandSpec":
        terms = d.get("terms", [{"type": "intercept"}])
        return cls(
            moderators=tuple(d.get("moderators", ())),
            terms=tuple(Term.from_dict(t) for t in terms),
            weight=WeightSpec.from_dict(d.get("weight")),
        )

    @classmethod
    def from_json(cls, text: str) -> "EstimandSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def marginal(cls, weight: WeightSpec | None = None) -> "EstimandSpec":
        """f = 1 with no moderators."""
        return cls((), (INTERCEPT,), weight or WeightSpec())

    @classmethod
    def moderated(cls, name: str, weight: WeightSpec | None = None) -> "EstimandSpec":
        """f = (1, S_t) for a single moderator."""
        return cls((name,), (INTERCEPT, Term("moderator", name=name)), weight or WeightSpec())


def _time_columns(term: Term, T: int) -> np.ndarray:
    """Columns of a time-only term on the grid t = 1..T, shape (T, width)."""
    t = np.arange(1, T + 1, dtype=float)
    if term.type == "intercept":
        return np.ones((T, 1))
    if term.type in ("poly", "moderator_time"):
        return np.column_stack([(t - term.center) ** k for k in range(1, term.degree + 1)])
    if term.type == "bspline":
        day = np.floor((t - 1) / term.period) + 1
        return SplineBasis.from_data(day, term.df)(day)
    raise AssertionError(term.type)


def build_features(ds: MrtDataset, spec: EstimandSpec) -> np.ndarray:
    """Evaluate f(t, S_t) at every (person, t), ineligible rows included.

    Returns
    -------
    ndarray, shape (n, T, p)
    """
    n, T = ds.n, ds.T
    for name in spec.moderators:
        ds.covariate(name)
    blocks = []
    for term in spec.terms:
        if term.type == "moderator":
            blocks.append(ds.covariate(term.name)[:, :, None])
        elif term.type == "moderator_time":
            s = ds.covariate(term.name)[:, :, None]
            blocks.append(s * _time_columns(term, T)[None, :, :])
        else:
            cols = _time_columns(term, T)
            blocks.append(np.broadcast_to(cols[None, :, :], (n, T, cols.shape[1])))
    return np.concatenate(blocks, axis=2)


def build_weights(T: int, spec: EstimandSpec | WeightSpec) -> np.ndarray:
    """Weight vector w(1..T): nonnegative, summing to one."""
    w = spec.weight if isinstance(spec, EstimandSpec) else spec
    if T < 1:
        raise SpecError("horizon T must be >= 1")
    if w.kind == "uniform":
        return np.full(T, 1.0 / T)
    if w.kind == "point":
        if w.t0 is None or not 1 <= w.t0 <= T:
            raise SpecError(f"point-mass t0={w.t0} outside [1, {T}]")
        out = np.zeros(T)
        out[w.t0 - 1] = 1.0
        return out
    vals = np.asarray(w.values, dtype=float)
    if vals.shape != (T,):
        raise SpecError(f"explicit weights have length {vals.size}, expected T={T}")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise SpecError("explicit weights must be finite and nonnegative")
    if abs(vals.sum() - 1.0) > WEIGHT_TOL:
        raise SpecError(f"explicit weights sum to {vals.sum()!r}, not 1")
    return vals
