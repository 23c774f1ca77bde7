"""MRT data model, long-format CSV I/O and validation.

A dataset holds ``n`` persons observed at the same ``T`` decision points.
Per-decision quantities are stored as ``(n, T)`` arrays; the distal outcome
is one value per person.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataError

DEFAULT_CLIP = 0.005
_NA_TOKENS = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class CsvSchema:
    """Column names of the long-format CSV.

    ``covariates=None`` means every column not named by the other fields.
    """

    id: str = "id"
    t: str = "t"
    elig: str = "elig"
    treat: str = "treat"
    prob: str = "prob"
    outcome: str = "Y"
    covariates: tuple[str, ...] | None = None

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "CsvSchema":
        if not d:
            return cls()
        d = dict(d)
        if d.get("covariates") is not None:
            d["covariates"] = tuple(d["covariates"])
        return cls(**d)

    def required(self) -> tuple[str, ...]:
        return (self.id, self.t, self.elig, self.treat, self.prob, self.outcome)


@dataclass(frozen=True)
class DecisionRow:
    person_id: object
    t: int
    elig: int
    treat: int
    prob: float
    covariates: Mapping[str, float]


@dataclass(frozen=True)
class Trajectory:
    person_id: object
    rows: tuple[DecisionRow, ...]
    outcome: float

    @property
    def T(self) -> int:
        return len(self.rows)


@dataclass(frozen=True, eq=False)
class MrtDataset:
    """Immutable collection of MRT trajectories sharing one horizon ``T``.

    Attributes
    ----------
    ids : ndarray, shape (n,)
        Person identifiers, unique.
    elig, treat : ndarray of int8, shape (n, T)
        Eligibility indicator and treatment indicator.
    prob : ndarray of float, shape (n, T)
        Randomization probability P(A_t = 1 | H_t); NaN where not recorded.
    covariates : dict of str -> ndarray, shape (n, T)
        Time-varying covariates in a fixed column order.
    outcome : ndarray, shape (n,)
        Distal outcome.
    """

    ids: np.ndarray
    elig: np.ndarray
    treat: np.ndarray
    prob: np.ndarray
    covariates: Mapping[str, np.ndarray]
    outcome: np.ndarray

    def __post_init__(self):
        # private copies so freezing never touches the caller's arrays
        ids = np.array(self.ids)
        elig = np.array(self.elig, dtype=np.int8)
        treat = np.array(self.treat, dtype=np.int8)
        prob = np.array(self.prob, dtype=float)
        outcome = np.array(self.outcome, dtype=float)
        if elig.ndim != 2:
            raise DataError("elig must be a 2-d (n, T) array")
        n, T = elig.shape
        if T < 1:
            raise DataError("horizon T must be at least 1")
        for name, arr in (("treat", treat), ("prob", prob)):
            if arr.shape != (n, T):
                raise DataError(f"{name} has shape {arr.shape}, expected {(n, T)}")
        if ids.shape != (n,) or outcome.shape != (n,):
            raise DataError("ids and outcome must have one entry per person")
        if len(set(ids.tolist())) != n:
            raise DataError("person ids are not unique")
        covs = {}
        for name, arr in self.covariates.items():
            arr = np.array(arr, dtype=float)
            if arr.shape != (n, T):
                raise DataError(f"covariate {name!r} has shape {arr.shape}, expected {(n, T)}")
            covs[str(name)] = arr
        for arr in (ids, elig, treat, prob, outcome, *covs.values()):
            arr.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "elig", elig)
        object.__setattr__(self, "treat", treat)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "covariates", covs)

    @property
    def n(self) -> int:
        return self.elig.shape[0]

    @property
    def T(self) -> int:
        return self.elig.shape[1]

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self.covariates)

    def covariate(self, name: str) -> np.ndarray:
        try:
            return self.covariates[name]
        except KeyError:
            raise DataError(f"unknown covariate {name!r}; have {list(self.covariates)}") from None

    def subset(self, idx) -> "MrtDataset":
        """Dataset restricted to persons ``idx`` (positions or boolean mask)."""
        idx = np.asarray(idx)
        return MrtDataset(
            ids=self.ids[idx],
            elig=self.elig[idx],
            treat=self.treat[idx],
            prob=self.prob[idx],
            covariates={k: v[idx] for k, v in self.covariates.items()},
            outcome=self.outcome[idx],
        )

    def with_outcome(self, outcome) -> "MrtDataset":
        return MrtDataset(self.ids, self.elig, self.treat, self.prob, self.covariates, outcome)

    def row(self, i: int, t: int) -> DecisionRow:
        """Decision row of person position ``i`` at decision point ``t`` (1-based)."""
        j = t - 1
        return DecisionRow(
            person_id=self.ids[i].item(),
            t=t,
            elig=int(self.elig[i, j]),
            treat=int(self.treat[i, j]),
            prob=float(self.prob[i, j]),
            covariates={k: float(v[i, j]) for k, v in self.covariates.items()},
        )

    def trajectory(self, i: int) -> Trajectory:
        rows = tuple(self.row(i, t) for t in range(1, self.T + 1))
        return Trajectory(self.ids[i].item(), rows, float(self.outcome[i]))

    def trajectories(self) -> Iterator[Trajectory]:
        for i in range(self.n):
            yield self.trajectory(i)

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "MrtDataset":
        if not trajs:
            raise DataError("no trajectories")
        T = trajs[0].T
        names = tuple(trajs[0].rows[0].covariates) if T else ()
        for tr in trajs:
            if tr.T != T:
                raise DataError(f"person {tr.person_id!r} has {tr.T} rows, expected {T}")
            if [r.t for r in tr.rows] != list(range(1, T + 1)):
                raise DataError(f"person {tr.person_id!r}: t values are not 1..{T}")
        get = lambda attr: np.array([[getattr(r, attr) for r in tr.rows] for tr in trajs])
        covs = {
            c: np.array([[r.covariates[c] for r in tr.rows] for tr in trajs], dtype=float)
            for c in names
        }
        return cls(
            ids=np.array([tr.person_id for tr in trajs]),
            elig=get("elig"),
            treat=get("treat"),
            prob=get("prob").astype(float),
            covariates=covs,
            outcome=np.array([tr.outcome for tr in trajs], dtype=float),
        )

    def to_frame(self, schema: CsvSchema | None = None) -> pd.DataFrame:
        """Long-format frame, one row per (person, t), person-major order."""
        s = schema or CsvSchema()
        n, T = self.n, self.T
        cols = {
            s.id: np.repeat(self.ids, T),
            s.t: np.tile(np.arange(1, T + 1), n),
            s.elig: self.elig.ravel(),
            s.treat: self.treat.ravel(),
            s.prob: self.prob.ravel(),
            s.outcome: np.repeat(self.outcome, T),
        }
        for k, v in self.covariates.items():
            cols[k] = v.ravel()
        return pd.DataFrame(cols)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, schema: CsvSchema | None = None) -> "MrtDataset":
        """Build a dataset from an already-numeric long frame."""
        return _from_columns(
            {c: df[c].to_numpy() for c in df.columns},
            list(df.columns),
            schema or CsvSchema(),
            line_numbers=np.arange(len(df)) + 2,
        )


@dataclass(frozen=True)
class Issue:
    person_id: object
    t: int | None
    rule: str
    message: str

    def __str__(self) -> str:
        where = f"person {self.person_id!r}" + (f", t={self.t}" if self.t is not None else "")
        return f"[{self.rule}] {where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def rules(self) -> set[str]:
        return {i.rule for i in self.issues}


def validate(
    ds: MrtDataset,
    clip: float = DEFAULT_CLIP,
    covariates: Iterable[str] | None = None,
) -> ValidationReport:
    """Check every row against the MRT data invariants.

    Parameters
    ----------
    ds : MrtDataset
    clip : float
        Positivity bound; eligible rows need ``clip < prob < 1 - clip``.
    covariates : iterable of str, optional
        Covariates that must be free of missing values. Defaults to all.

    Returns
    -------
    ValidationReport
        Violations are reported, never repaired.
    """
    issues: list[Issue] = []

    def add(mask, rule, message):
        for i, j in zip(*np.nonzero(mask)):
            issues.append(Issue(ds.ids[i].item(), int(j) + 1, rule, message))

    elig, treat, prob = ds.elig, ds.treat, ds.prob
    add((elig != 0) & (elig != 1), "non-binary", "eligibility is not 0/1")
    add((treat != 0) & (treat != 1), "non-binary", "treatment is not 0/1")
    add((elig == 0) & (treat == 1), "ineligible-treated", "treated at an ineligible decision point")
    on = elig == 1
    add(on & ~np.isfinite(prob), "missing-probability", "no randomization probability at an eligible row")
    with np.errstate(invalid="ignore"):
        bad = on & np.isfinite(prob) & ~((prob > clip) & (prob < 1 - clip))
    add(bad, "positivity", f"probability outside ({clip}, {1 - clip})")
    names = ds.covariate_names if covariates is None else tuple(covariates)
    for name in names:
        if name not in ds.covariates:
            issues.append(Issue(None, None, "unknown-covariate", f"no covariate named {name!r}"))
            continue
        add(~np.isfinite(ds.covariates[name]), "covariate-missing", f"covariate {name!r} is missing")
    for i in np.nonzero(~np.isfinite(ds.outcome))[0]:
        issues.append(Issue(ds.ids[i].item(), None, "outcome-nonfinite", "distal outcome is not finite"))
    return ValidationReport(tuple(issues))


def _parse_numeric(raw: np.ndarray, col: str, lines: np.ndarray, allow_na: bool) -> np.ndarray:
    out = np.empty(raw.shape, dtype=float)
    for k, v in enumerate(raw):
        s = str(v).strip()
        if s.lower() in _NA_TOKENS:
            if not allow_na:
                raise DataError(f"missing value in column {col!r}", int(lines[k]))
            out[k] = np.nan
            continue
        try:
            out[k] = float(s)
        except ValueError:
            raise DataError(f"non-numeric value {s!r} in column {col!r}", int(lines[k])) from None
    return out


def _from_columns(cols: dict, header: list[str], s: CsvSchema, line_numbers: np.ndarray) -> MrtDataset:
    missing = [c for c in s.required() if c not in cols]
    cov_names = (
        tuple(c for c in header if c not in s.required())
        if s.covariates is None
        else s.covariates
    )
    missing += [c for c in cov_names if c not in cols]
    if missing:
        raise DataError(f"missing required column(s): {', '.join(missing)}", 1)
    if len(line_numbers) == 0:
        raise DataError("file has no data rows")

    raw_ids = np.asarray(cols[s.id])
    ids_str = np.array([str(v).strip() for v in raw_ids], dtype=object)
    for k, v in enumerate(ids_str):
        if v.lower() in _NA_TOKENS:
            raise DataError(f"missing person id in column {s.id!r}", int(line_numbers[k]))
    t = _parse_numeric(np.asarray(cols[s.t]), s.t, line_numbers, allow_na=False)
    bad = np.nonzero((t != np.round(t)) | (t < 1))[0]
    if bad.size:
        raise DataError(f"decision point {t[bad[0]]!r} is not a positive integer", int(line_numbers[bad[0]]))
    t = t.astype(np.int64)
    elig = _parse_numeric(np.asarray(cols[s.elig]), s.elig, line_numbers, allow_na=False)
    treat = _parse_numeric(np.asarray(cols[s.treat]), s.treat, line_numbers, allow_na=False)
    for col, arr in ((s.elig, elig), (s.treat, treat)):
        bad = np.nonzero((arr != 0) & (arr != 1))[0]
        if bad.size:
            raise DataError(f"column {col!r} must be 0 or 1, got {arr[bad[0]]!r}", int(line_numbers[bad[0]]))
    prob = _parse_numeric(np.asarray(cols[s.prob]), s.prob, line_numbers, allow_na=True)
    y = _parse_numeric(np.asarray(cols[s.outcome]), s.outcome, line_numbers, allow_na=True)
    covs = {
        c: _parse_numeric(np.asarray(cols[c]), c, line_numbers, allow_na=True) for c in cov_names
    }

    # group persons in order of first appearance, rows sorted by t
    uniq, first, inverse = np.unique(ids_str, return_index=True, return_inverse=True)
    order_of_uniq = np.argsort(first, kind="stable")
    rank = np.empty_like(order_of_uniq)
    rank[order_of_uniq] = np.arange(order_of_uniq.size)
    person = rank[inverse]
    n = uniq.size
    counts = np.bincount(person, minlength=n)
    T = int(counts[0])
    if np.any(counts != T):
        p = int(np.nonzero(counts != T)[0][0])
        pid = uniq[order_of_uniq[p]]
        line = int(line_numbers[np.nonzero(person == p)[0][0]])
        raise DataError(f"person {pid!r} has {counts[p]} rows, expected {T}", line)
    order = np.lexsort((t, person))
    t_sorted = t[order].reshape(n, T)
    expected = np.arange(1, T + 1)
    bad_p = np.nonzero(np.any(t_sorted != expected, axis=1))[0]
    if bad_p.size:
        p = int(bad_p[0])
        pid = uniq[order_of_uniq[p]]
        line = int(line_numbers[order[p * T]])
        raise DataError(f"person {pid!r}: t values are not exactly 1..{T} (gap or duplicate)", line)

    y_mat = y[order].reshape(n, T)
    same = (y_mat == y_mat[:, :1]) | (np.isnan(y_mat) & np.isnan(y_mat[:, :1]))
    bad_p = np.nonzero(~np.all(same, axis=1))[0]
    if bad_p.size:
        p = int(bad_p[0])
        j = int(np.nonzero(~same[p])[0][0])
        pid = uniq[order_of_uniq[p]]
        raise DataError(
            f"inconsistent outcome for person {pid!r}: {y_mat[p, 0]!r} vs {y_mat[p, j]!r}",
            int(line_numbers[order[p * T + j]]),
        )

    ids = _maybe_int_ids(uniq[order_of_uniq])
    return MrtDataset(
        ids=ids,
        elig=elig[order].reshape(n, T),
        treat=treat[order].reshape(n, T),
        prob=prob[order].reshape(n, T),
        covariates={c: v[order].reshape(n, T) for c, v in covs.items()},
        outcome=y_mat[:, 0].copy(),
    )


def _maybe_int_ids(ids: np.ndarray) -> np.ndarray:
    try:
        as_int = np.array([int(v) for v in ids], dtype=np.int64)
    except ValueError:
        return np.array([str(v) for v in ids])
    if all(str(i) == v for i, v in zip(as_int, ids)):
        return as_int
    return np.array([str(v) for v in ids])


def load_csv(path, schema: CsvSchema | Mapping | None = None) -> MrtDataset:
    """Read a long-format MRT file.

    The outcome column is repeated on every row and must be constant within
    person. Errors carry the 1-based file line (header is line 1).
    """
    s = schema if isinstance(schema, CsvSchema) else CsvSchema.from_dict(schema)
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise DataError(f"malformed CSV: {exc}") from None
    except pd.errors.EmptyDataError:
        raise DataError("empty file") from None
    cols = {c.strip(): df[c].to_numpy() for c in df.columns}
    return _from_columns(cols, list(cols), s, line_numbers=np.arange(len(df)) + 2)


def write_csv(ds: MrtDataset, path, schema: CsvSchema | None = None) -> None:
    """Write ``ds`` as a long-format CSV that :func:`load_csv` reads back exactly."""
    df = ds.to_frame(schema)
    df.to_csv(path, index=False, float_format="%.17g", na_rep="")
