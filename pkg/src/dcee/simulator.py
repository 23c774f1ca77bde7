"""Generative models for MRTs with a distal outcome, and Monte-Carlo oracles.

Randomness comes from counter-based Philox streams keyed by
``(seed, dataset key, chunk, variable)``. Persons are simulated in fixed-size
chunks, so person ``i`` always sees the same draws for a given key no matter
how many persons are simulated or in what order chunks run. Passing
``crn=True`` drops the policy from the key, which gives every policy common
random numbers.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping, Protocol

import numpy as np
from scipy.special import expit

from .data import MrtDataset
from .errors import NumericalError, SpecError
from .estimand import EstimandSpec, build_features, build_weights

CHUNK = 1 << 15
_CRN_KEY = (2,)


def beta22_density(u):
    """Beta(2, 2) density 6u(1 - u) on [0, 1], zero elsewhere."""
    u = np.asarray(u, dtype=float)
    out = np.where((u >= 0) & (u <= 1), 6.0 * u * (1.0 - u), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PolicySpec:
    """Treatment policy: the MRT policy, or an excursion from it at one point.

    ``excursion(t0, 1)`` sets A_t0 = I_t0 and ``excursion(t0, 0)`` sets
    A_t0 = 0; every other decision point follows the MRT randomization.
    """

    kind: str = "mrt"
    t0: int | None = None
    a: int | None = None

    def __post_init__(self):
        if self.kind == "mrt":
            return
        if self.kind != "excursion":
            raise SpecError(f"unknown policy kind {self.kind!r}")
        if self.t0 is None or self.t0 < 1 or self.a not in (0, 1):
            raise SpecError(f"excursion needs t0 >= 1 and a in {{0, 1}}, got t0={self.t0}, a={self.a}")

    @classmethod
    def mrt(cls) -> "PolicySpec":
        return cls()

    @classmethod
    def excursion(cls, t0: int, a: int) -> "PolicySpec":
        return cls("excursion", t0, a)

    @classmethod
    def parse(cls, text: str) -> "PolicySpec":
        """``"mrt"`` or ``"excursion:T0:A"``."""
        parts = text.strip().split(":")
        if parts == ["mrt"]:
            return cls()
        if len(parts) == 3 and parts[0] == "excursion":
            try:
                return cls.excursion(int(parts[1]), int(parts[2]))
            except ValueError:
                pass
        raise SpecError(f"cannot parse policy {text!r}; use 'mrt' or 'excursion:T0:A'")

    def forced(self, t: int) -> int | None:
        """Action forced at 1-based point t (applied only if eligible), else None."""
        if self.kind == "excursion" and t == self.t0:
            return self.a
        return None

    def key(self) -> tuple[int, ...]:
        return (0,) if self.kind == "mrt" else (1, self.t0, self.a)

    def check(self, T: int) -> None:
        if self.kind == "excursion" and self.t0 > T:
            raise SpecError(f"excursion point t0={self.t0} beyond horizon T={T}")


class GenerativeModel(Protocol):
    T: int

    @property
    def covariate_names(self) -> tuple[str, ...]: ...

    @property
    def streams(self) -> tuple[str, ...]: ...

    def draw(self, n: int, rngs: Mapping[str, np.random.Generator], policy: PolicySpec) -> dict: ...


def _assign(t: int, policy: PolicySpec, elig: np.ndarray, u: np.ndarray, p: np.ndarray) -> np.ndarray:
    forced = policy.forced(t)
    if forced == 1:
        return elig.copy()
    if forced == 0:
        return np.zeros_like(elig)
    return elig & (u < p)


def _time_major(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.T)


def _linear_ramp(T: int, start: float, span: float) -> tuple[float, ...]:
    if T == 1:
        return (float(start),)
    return tuple(float(start + span * (t - 1) / (T - 1)) for t in range(1, T + 1))


@dataclass(frozen=True)
class SimParams:
    """Parameters of the endogenous-covariate MRT generative model.

    X_t = theta0 + theta1 A_{t-1} + theta2 X_{t-1} + eta_t,
    Z_t ~ Bernoulli(expit(zeta0 + zeta1 A_{t-1} + zeta2 Z_{t-1})),
    I_t ~ Bernoulli(elig_prob),
    P(A_t = 1 | H_t, I_t = 1) = expit((t - T/2)/T + Z_t - 0.5 + X_t/6),
    Y = sum_t xi_t {g(X_t/12 + 0.5) + Z_t}
        + sum_t A_t (alpha_t + nu_t X_t + gamma_t Z_t + lambda_t A_{t-1}) + eps,

    with g the Beta(2, 2) density and eta_t, eps standard normal.
    """

    T: int
    theta: tuple[float, float, float]
    zeta: tuple[float, float, float]
    elig_prob: float
    alpha: tuple[float, ...]
    nu: tuple[float, ...]
    gamma: tuple[float, ...]
    lam: tuple[float, ...]
    xi: tuple[float, ...]

    covariate_names = ("X", "Z")
    streams = ("eta", "z", "elig", "treat", "eps")

    def __post_init__(self):
        if self.T < 1:
            raise SpecError("T must be >= 1")
        if not 0 < self.elig_prob <= 1:
            raise SpecError("elig_prob must be in (0, 1]")
        for name in ("alpha", "nu", "gamma", "lam", "xi"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != self.T:
                raise SpecError(f"{name} has length {len(v)}, expected T={self.T}")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "theta", tuple(float(x) for x in self.theta))
        object.__setattr__(self, "zeta", tuple(float(x) for x in self.zeta))

    def replace(self, **changes) -> "SimParams":
        d = asdict(self)
        d.update(changes)
        return SimParams(**d)

    def null_effect(self) -> "SimParams":
        """Same model with Y independent of every treatment.

        Zeroes the direct effects and also the carry-over of A_{t-1} into
        X_t and Z_t, which would otherwise reach Y through the covariates.
        """
        zero = (0.0,) * self.T
        th0, _, th2 = self.theta
        z0, _, z2 = self.zeta
        return self.replace(
            alpha=zero, nu=zero, gamma=zero, lam=zero, theta=(th0, 0.0, th2), zeta=(z0, 0.0, z2)
        )

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimParams":
        base = default_paper_params(int(d.get("T", 30))).to_dict()
        unknown = set(d) - set(base)
        if unknown:
            raise SpecError(f"unknown simulation parameter(s) {sorted(unknown)}")
        base.update(d)
        return cls(**base)

    def draw(self, n: int, rngs, policy: PolicySpec) -> dict:
        T = self.T
        th0, th1, th2 = self.theta
        z0, z1, z2 = self.zeta
        # draws are (n, T) so a person's stream does not depend on n; loop time-major
        eta = _time_major(rngs["eta"].standard_normal((n, T)))
        uz = _time_major(rngs["z"].random((n, T)))
        ui = _time_major(rngs["elig"].random((n, T)))
        ua = _time_major(rngs["treat"].random((n, T)))
        eps = rngs["eps"].standard_normal(n)

        X = np.empty((T, n))
        Z = np.empty((T, n))
        I = ui < self.elig_prob
        A = np.zeros((T, n), dtype=bool)
        prob = np.full((T, n), np.nan)
        y = eps
        x_prev = np.zeros(n)
        z_prev = np.zeros(n)
        a_prev = np.zeros(n)
        for j in range(T):
            t = j + 1
            x = th0 + th1 * a_prev + th2 * x_prev + eta[j]
            z = (uz[j] < expit(z0 + z1 * a_prev + z2 * z_prev)).astype(float)
            p = expit((t - T / 2) / T + z - 0.5 + x / 6)
            a = _assign(t, policy, I[j], ua[j], p)
            af = a.astype(float)
            y = y + self.xi[j] * (beta22_density(x / 12 + 0.5) + z)
            y = y + af * (self.alpha[j] + self.nu[j] * x + self.gamma[j] * z + self.lam[j] * a_prev)
            X[j], Z[j], A[j] = x, z, a
            prob[j, I[j]] = p[I[j]]
            x_prev, z_prev, a_prev = x, z, af
        I, A, prob, X, Z = (m.T for m in (I, A, prob, X, Z))
        return {"elig": I, "treat": A, "prob": prob, "outcome": y, "covariates": {"X": X, "Z": Z}}


def default_paper_params(T: int = 30) -> SimParams:
    """Published parameter values of the simulation study (T = 30 by default)."""
    return SimParams(
        T=T,
        theta=(-0.5, 0.5, 0.5),
        zeta=(-1.0, 1.0, 1.0),
        elig_prob=0.8,
        alpha=_linear_ramp(T, 1.0, 2.0),
        nu=_linear_ramp(T, 1.0, 1.0),
        gamma=_linear_ramp(T, 1.0, 0.5),
        lam=_linear_ramp(T, -1.0, -1.0),
        xi=_linear_ramp(T, 1.0, 1.0),
    )


@dataclass(frozen=True)
class Example4Params:
    """Two decision points; treatment at t=1 lowers eligibility at t=2.

    I_1 = 1, A_1 ~ Bern(p), I_2 | A_1 ~ Bern(rho0 - rho1 A_1),
    A_2 | I_2 = 1 ~ Bern(p), Y = beta0 + beta1 A_1 + beta2 A_2 - alpha A_1 A_2 + eps.
    """

    p: float
    rho0: float
    rho1: float
    beta0: float = 0.0
    beta1: float = 1.0
    beta2: float = 1.0
    alpha: float = 0.0

    T = 2
    covariate_names = ()
    streams = ("elig", "treat", "eps")

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise SpecError(f"p must be in (0, 1), got {self.p}")
        if not (0 < self.rho0 - self.rho1 < 1 and 0 < self.rho0 <= 1):
            raise SpecError("need 0 < rho0 - rho1 < 1 and 0 < rho0 <= 1")

    def draw(self, n: int, rngs, policy: PolicySpec) -> dict:
        ui = rngs["elig"].random((n, 2))
        ua = rngs["treat"].random((n, 2))
        eps = rngs["eps"].standard_normal(n)
        p = np.full(n, self.p)
        I1 = np.ones(n, dtype=bool)
        A1 = _assign(1, policy, I1, ua[:, 0], p)
        I2 = ui[:, 1] < self.rho0 - self.rho1 * A1
        A2 = _assign(2, policy, I2, ua[:, 1], p)
        a1, a2 = A1.astype(float), A2.astype(float)
        y = self.beta0 + self.beta1 * a1 + self.beta2 * a2 - self.alpha * a1 * a2 + eps
        prob = np.where(np.column_stack([I1, I2]), self.p, np.nan)
        return {
            "elig": np.column_stack([I1, I2]),
            "treat": np.column_stack([A1, A2]),
            "prob": prob,
            "outcome": y,
            "covariates": {},
        }


@dataclass(frozen=True)
class ExogenousParams:
    """Always-eligible model with exogenous covariates and Bern(p) treatments.

    Y = gamma0 + sum_t gamma_t X_t + sum_t A_t (main_t + mod_t X_t)
        - sum_{t<T} burden_t A_t A_{t+1} + eps,

    with X_t ~ N(x_mean_t, 1) independent of everything. If ``mediator`` is
    ``(rho0, rho1)`` then X_t for t >= 2 is instead Bern(rho0 + rho1 A_{t-1}),
    so earlier treatment acts on Y through later covariates.
    """

    T: int
    p: float
    x_mean: tuple[float, ...]
    main: tuple[float, ...]
    mod: tuple[float, ...] = ()
    burden: tuple[float, ...] = ()
    gamma: tuple[float, ...] = ()
    gamma0: float = 0.0
    mediator: tuple[float, float] | None = None

    covariate_names = ("X",)
    streams = ("x", "treat", "eps")

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise SpecError("p must be in (0, 1)")
        for name in ("x_mean", "main", "mod", "burden", "gamma"):
            v = tuple(float(x) for x in getattr(self, name)) or (0.0,) * self.T
            if len(v) != self.T:
                raise SpecError(f"{name} has length {len(v)}, expected T={self.T}")
            object.__setattr__(self, name, v)

    def draw(self, n: int, rngs, policy: PolicySpec) -> dict:
        T = self.T
        gx = rngs["x"].standard_normal((n, T))
        ux = rngs["x"].random((n, T))
        ua = rngs["treat"].random((n, T))
        eps = rngs["eps"].standard_normal(n)
        I = np.ones(n, dtype=bool)
        p = np.full(n, self.p)
        X = np.empty((n, T))
        A = np.zeros((n, T), dtype=bool)
        y = self.gamma0 + eps
        a_prev = np.zeros(n)
        for j in range(T):
            t = j + 1
            if self.mediator is not None and t >= 2:
                x = (ux[:, j] < self.mediator[0] + self.mediator[1] * a_prev).astype(float)
            else:
                x = self.x_mean[j] + gx[:, j]
            a = _assign(t, policy, I, ua[:, j], p)
            af = a.astype(float)
            y = y + self.gamma[j] * x + af * (self.main[j] + self.mod[j] * x)
            if j > 0:
                y = y - self.burden[j - 1] * a_prev * af
            X[:, j], A[:, j] = x, a
            a_prev = af
        return {
            "elig": np.ones((n, T), dtype=bool),
            "treat": A,
            "prob": np.full((n, T), self.p),
            "outcome": y,
            "covariates": {"X": X},
        }


def _rngs(seed: int, key: tuple[int, ...], chunk: int, names) -> dict:
    if seed < 0:
        raise SpecError("seed must be a nonnegative integer")
    return {
        name: np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(*key, chunk, i))))
        for i, name in enumerate(names)
    }


def _chunks(
    model: GenerativeModel, n: int, seed: int, policy: PolicySpec, crn: bool, stream: tuple[int, ...] = ()
) -> Iterator[tuple[int, dict]]:
    policy.check(model.T)
    key = _CRN_KEY if crn else policy.key()
    if stream:
        # leading tag 3 keeps prefixed keys apart from the bare policy keys 0, 1, 2
        key = (3, *stream, *key)
    for c, start in enumerate(range(0, n, CHUNK)):
        m = min(CHUNK, n - start)
        yield start, model.draw(m, _rngs(seed, key, c, model.streams), policy)


def _as_dataset(parts: dict, start: int) -> MrtDataset:
    m = parts["outcome"].shape[0]
    return MrtDataset(
        ids=np.arange(start + 1, start + m + 1),
        elig=parts["elig"],
        treat=parts["treat"],
        prob=parts["prob"],
        covariates=parts["covariates"],
        outcome=parts["outcome"],
    )


def simulate(
    model: GenerativeModel,
    n: int,
    seed: int,
    policy: PolicySpec | None = None,
    *,
    crn: bool = False,
    stream: tuple[int, ...] = (),
) -> MrtDataset:
    """Simulate ``n`` persons from any generative model; ids are 1..n.

    ``stream`` prefixes the random-stream key, giving callers such as the
    benchmark disjoint streams under a single seed.
    """
    if n < 1:
        raise SpecError("n must be >= 1")
    policy = policy or PolicySpec()
    parts = [draw for _, draw in _chunks(model, n, seed, policy, crn, tuple(stream))]
    if len(parts) == 1:
        return _as_dataset(parts[0], 0)
    cat = lambda k: np.concatenate([p[k] for p in parts])
    return _as_dataset(
        {
            "elig": cat("elig"),
            "treat": cat("treat"),
            "prob": cat("prob"),
            "outcome": cat("outcome"),
            "covariates": {c: np.concatenate([p["covariates"][c] for p in parts]) for c in parts[0]["covariates"]},
        },
        0,
    )


def simulate_dataset(
    params: SimParams | None = None,
    n: int = 100,
    seed: int = 0,
    policy: PolicySpec | None = None,
    *,
    crn: bool = False,
    stream: tuple[int, ...] = (),
) -> MrtDataset:
    """Simulate from the endogenous-covariate model (published parameters by default).

    The ``prob`` column holds the MRT randomization probability at every
    eligible row, including an excursion's forced point.
    """
    return simulate(params or default_paper_params(), n, seed, policy, crn=crn, stream=stream)


def simulate_example4(
    p: float,
    rho0: float,
    rho1: float,
    beta0: float,
    beta1: float,
    beta2: float,
    alpha: float,
    n: int,
    seed: int,
    policy: PolicySpec | None = None,
) -> MrtDataset:
    return simulate(Example4Params(p, rho0, rho1, beta0, beta1, beta2, alpha), n, seed, policy)


def closed_form_tau1_example4(p, rho0, rho1, beta1, beta2, alpha) -> float:
    """Excursion effect at t=1 when A_1 lowers eligibility at t=2."""
    return beta1 - p * rho0 * alpha + p * rho1 * alpha - p * rho1 * beta2


def closed_form_tau_exogenous(params: ExogenousParams) -> np.ndarray:
    """tau(1..T) for :class:`ExogenousParams` without a mediator, plus T=2 with one.

    Without a mediator: tau(t) = main_t + mod_t E(X_t) - (burden_{t-1} + burden_t) p.
    With a mediator and T=2: tau(1) = main_1 + mod_1 E(X_1) + (gamma_2 + mod_2 p) rho1.
    """
    T, p = params.T, params.p
    b = np.r_[0.0, params.burden[:-1], 0.0] if T > 1 else np.zeros(2)
    tau = np.array(
        [params.main[j] + params.mod[j] * params.x_mean[j] - (b[j] + b[j + 1]) * p for j in range(T)]
    )
    if params.mediator is not None:
        if T != 2 or any(params.burden):
            raise SpecError("closed form with a mediator covers T=2 without burden only")
        rho0, rho1 = params.mediator
        tau[0] = params.main[0] + params.mod[0] * params.x_mean[0] + (params.gamma[1] + params.mod[1] * p) * rho1
        tau[1] = params.main[1] + params.mod[1] * (rho0 + rho1 * p)
    return tau


@dataclass
class OracleResult:
    beta_star: np.ndarray
    mc_se: np.ndarray
    names: list[str]
    per_t_tau: list[dict]
    mc_size: int
    seed: int
    crn: bool = False
    spec: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "beta_star": self.beta_star.tolist(),
            "mc_se": self.mc_se.tolist(),
            "names": list(self.names),
            "per_t_tau": self.per_t_tau,
            "mc_size": self.mc_size,
            "seed": self.seed,
            "crn": self.crn,
            "estimand": self.spec,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "OracleResult":
        return cls(
            beta_star=np.asarray(d["beta_star"], dtype=float),
            mc_se=np.asarray(d["mc_se"], dtype=float),
            names=list(d["names"]),
            per_t_tau=list(d["per_t_tau"]),
            mc_size=int(d["mc_size"]),
            seed=int(d["seed"]),
            crn=bool(d.get("crn", False)),
            spec=dict(d.get("estimand", {})),
        )


MAX_LEVELS = 64


def _levels(parts: dict, moderators: tuple[str, ...], j: int) -> np.ndarray:
    if not moderators:
        return np.zeros((parts["outcome"].shape[0], 0))
    return np.column_stack([parts["covariates"][m][:, j] for m in moderators])


def _level_keys(levels: np.ndarray) -> tuple[list[tuple], np.ndarray]:
    if levels.shape[1] == 0:
        return [()], np.zeros(levels.shape[0], dtype=int)
    uniq, inv = np.unique(levels, axis=0, return_inverse=True)
    return [tuple(float(v) for v in row) for row in uniq], inv.ravel()


class _GroupStats:
    """Per-level running count, sum and sum of squares of one variable."""

    def __init__(self):
        self.acc: dict[tuple, np.ndarray] = {}

    def add(self, levels: np.ndarray, values: np.ndarray) -> None:
        keys, inv = _level_keys(levels)
        k = len(keys)
        cnt = np.bincount(inv, minlength=k)
        s = np.bincount(inv, weights=values, minlength=k)
        ss = np.bincount(inv, weights=values * values, minlength=k)
        for r, key in enumerate(keys):
            cur = self.acc.setdefault(key, np.zeros(3))
            cur += (cnt[r], s[r], ss[r])
        if len(self.acc) > MAX_LEVELS:
            raise SpecError(f"oracle needs discrete moderators; found more than {MAX_LEVELS} levels")

    def project(self, cols: list[int]) -> "_GroupStats":
        """Pool levels onto a subset of the moderator columns."""
        out = _GroupStats()
        for key, v in self.acc.items():
            sub = tuple(key[c] for c in cols)
            out.acc[sub] = out.acc.get(sub, np.zeros(3)) + v
        return out

    def mean_var(self, key) -> tuple[float, float]:
        """Mean and variance of the mean."""
        c, s, ss = self.acc[key]
        mean = s / c
        var = max(ss / c - mean * mean, 0.0) * c / max(c - 1, 1)
        return mean, var / c


def _excursion_stats(model, moderators, mc_size, seed, crn) -> dict:
    """t -> {"diff": stats} under CRN, else t -> {1: stats, 0: stats}."""
    out = {}
    for t in range(1, model.T + 1):
        j = t - 1
        on, off = PolicySpec.excursion(t, 1), PolicySpec.excursion(t, 0)
        if crn:
            diff = _GroupStats()
            for (_, d1), (_, d0) in zip(_chunks(model, mc_size, seed, on, True), _chunks(model, mc_size, seed, off, True)):
                lv = _levels(d1, moderators, j)
                if not np.array_equal(lv, _levels(d0, moderators, j)):
                    raise NumericalError("moderator values differ across paired excursions")
                diff.add(lv, d1["outcome"] - d0["outcome"])
            out[t] = {"diff": diff}
            continue
        out[t] = {}
        for a, pol in ((1, on), (0, off)):
            g = _GroupStats()
            for _, d in _chunks(model, mc_size, seed, pol, False):
                g.add(_levels(d, moderators, j), d["outcome"])
            out[t][a] = g
    return out


def _tau_table(stats: dict, cols: list[int]) -> dict:
    """t -> {level: (tau, variance of tau)} pooled onto moderator columns ``cols``."""
    table = {}
    for t, groups in stats.items():
        if "diff" in groups:
            diff = groups["diff"].project(cols)
            table[t] = {key: diff.mean_var(key) for key in diff.acc}
            continue
        g1, g0 = groups[1].project(cols), groups[0].project(cols)
        row = {}
        for key in g1.acc:
            if key in g0.acc:
                m1, v1 = g1.mean_var(key)
                m0, v0 = g0.mean_var(key)
                row[key] = (m1 - m0, v1 + v0)
        table[t] = row
    return table


class _Projection:
    """Accumulates the MRT-policy expectations for one estimand."""

    def __init__(self, spec: EstimandSpec, T: int, table: dict):
        self.spec, self.table = spec, table
        self.w = build_weights(T, spec)
        self.G = np.zeros((spec.p, spec.p))
        self.h = np.zeros(spec.p)
        self.grad: dict[tuple, np.ndarray] = {}
        self.total = 0

    def add(self, ds: MrtDataset, parts: dict) -> None:
        F = build_features(ds, self.spec)
        w = self.w
        self.G += np.einsum("t,ntp,ntq->pq", w, F, F)
        self.total += ds.n
        for j in np.nonzero(w)[0]:
            t = int(j) + 1
            keys, inv = _level_keys(_levels(parts, self.spec.moderators, int(j)))
            for r, key in enumerate(keys):
                if key not in self.table[t]:
                    raise NumericalError(
                        f"moderator level {key} at t={t} unseen in excursion data; increase mc_size"
                    )
                sumF = w[j] * F[inv == r, j, :].sum(axis=0)
                self.h += self.table[t][key][0] * sumF
                g = self.grad.setdefault((t, key), np.zeros(self.spec.p))
                g += sumF

    def solve(self) -> tuple[np.ndarray, np.ndarray]:
        G, h = self.G / self.total, self.h / self.total
        sv = np.linalg.svd(G, compute_uv=False)
        if sv[-1] <= 0 or sv[-1] / sv[0] < 1e-12:
            raise NumericalError("oracle projection matrix is singular")
        Ginv = np.linalg.inv(G)
        var = np.zeros(self.spec.p)
        for (t, key), g in self.grad.items():
            d = Ginv @ (g / self.total)
            var += d * d * self.table[t][key][1]
        return Ginv @ h, np.sqrt(var)


def compute_oracle_betas(
    params: GenerativeModel | None,
    specs: list[EstimandSpec],
    mc_size: int,
    seed: int,
    *,
    crn: bool = False,
    min_mc_size: int = 10_000,
) -> list[OracleResult]:
    """True projection coefficients for several estimands from one set of draws.

    For each t, ``mc_size`` persons are simulated under each of the two
    excursion policies at t, and tau(t, s) is the difference of mean
    outcomes within each moderator level s. A further ``mc_size`` persons
    under the MRT policy supply the expectations in

        beta* = [sum_t w(t) E f f']^{-1} sum_t w(t) E[tau(t, S_t) f].

    ``mc_se`` propagates the sampling error of the tau estimates only.
    Moderators must be discrete.
    """
    model = params or default_paper_params()
    if mc_size < min_mc_size:
        raise SpecError(f"mc_size must be >= {min_mc_size}")
    if not specs:
        return []
    union = tuple(dict.fromkeys(m for spec in specs for m in spec.moderators))
    for m in union:
        if m not in model.covariate_names:
            raise SpecError(f"moderator {m!r} is not a covariate of the model {list(model.covariate_names)}")
    for spec in specs:
        build_weights(model.T, spec)
    stats = _excursion_stats(model, union, mc_size, seed, crn)
    projections = []
    for spec in specs:
        cols = [union.index(m) for m in spec.moderators]
        projections.append(_Projection(spec, model.T, _tau_table(stats, cols)))
    for start, parts in _chunks(model, mc_size, seed, PolicySpec.mrt(), crn):
        ds = _as_dataset(parts, start)
        for proj in projections:
            proj.add(ds, parts)
    results = []
    for proj in projections:
        beta, se = proj.solve()
        per_t = [
            {"t": t, "level": dict(zip(proj.spec.moderators, key)), "tau": tau, "se": float(np.sqrt(v))}
            for t in range(1, model.T + 1)
            for key, (tau, v) in sorted(proj.table[t].items())
        ]
        results.append(
            OracleResult(
                beta_star=beta,
                mc_se=se,
                names=proj.spec.labels(),
                per_t_tau=per_t,
                mc_size=mc_size,
                seed=seed,
                crn=crn,
                spec=proj.spec.to_dict(),
            )
        )
    return results


def compute_oracle_beta(
    params: GenerativeModel | None,
    spec: EstimandSpec,
    mc_size: int,
    seed: int,
    *,
    crn: bool = False,
    min_mc_size: int = 10_000,
) -> OracleResult:
    """Monte-Carlo truth of one estimand; see :func:`compute_oracle_betas`."""
    return compute_oracle_betas(params, [spec], mc_size, seed, crn=crn, min_mc_size=min_mc_size)[0]


def eligible_contrast_average(params: GenerativeModel | None, mc_size: int, seed: int) -> tuple[float, float]:
    """(1/T) sum_t P(I_t = 1) {E(Y | I_t = 1, exc. 1) - E(Y | I_t = 1, exc. 0)}.

    Monte-Carlo value of the marginal target written as an
    eligibility-discounted average of eligible-only contrasts. Returns the
    value and its Monte-Carlo standard error.
    """
    model = params or default_paper_params()
    T = model.T
    total, var = 0.0, 0.0
    for t in range(1, T + 1):
        j = t - 1
        stats_ = {}
        n_elig = n_all = 0
        for a in (1, 0):
            g = _GroupStats()
            for _, d in _chunks(model, mc_size, seed, PolicySpec.excursion(t, a), False):
                e = d["elig"][:, j].astype(float)[:, None]
                g.add(e, d["outcome"])
                n_elig += int(e.sum())
                n_all += e.shape[0]
            stats_[a] = g
        pi = n_elig / n_all
        m1, v1 = stats_[1].mean_var((1.0,))
        m0, v0 = stats_[0].mean_var((1.0,))
        total += pi * (m1 - m0) / T
        var += pi * pi * (v1 + v0) / T**2
    return total, float(np.sqrt(var))
