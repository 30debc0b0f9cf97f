"""Cipher-module redundancy: dedicated backups versus a shared pool.

``N1`` O&M endpoints each need one working cipher module. The typical
scheme gives every endpoint its own ``N2`` modules; the pooled scheme puts
all ``N1 * N2`` modules in one pool that stays operational while at least
``N1`` of them survive. Module lifetimes are i.i.d. Weibull.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import mpmath
import numpy as np
from scipy import integrate
from scipy.special import gamma, gammaincc

from .engine import Engine, RngStream
from .errors import NegativeTime, NonConvergence

# fixed chunking keeps Monte Carlo output independent of how chunks are scheduled
CHUNK = 20_000


@dataclass(frozen=True)
class WeibullParams:
    beta: float = 0.6
    eta: float = 10.0

    def __post_init__(self):
        if not (self.beta > 0 and self.eta > 0):
            raise ValueError(f"Weibull parameters must be positive, got beta={self.beta}, eta={self.eta}")

    @property
    def mean(self) -> float:
        return self.eta * gamma(1 + 1 / self.beta)


class Scheme(enum.Enum):
    TYPICAL = "typical"
    POOLED = "pooled"


@dataclass(frozen=True)
class SchemeSpec:
    scheme: Scheme
    N1: int
    N2: int

    def __post_init__(self):
        if self.N1 < 1 or self.N2 < 1:
            raise ValueError(f"N1 and N2 must be >= 1, got N1={self.N1}, N2={self.N2}")

    @property
    def modules(self) -> int:
        return self.N1 * self.N2


@dataclass(frozen=True)
class ReliabilityCurve:
    t: np.ndarray
    R: np.ndarray
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None
    trials: int | None = None


@dataclass(frozen=True)
class MttfResult:
    spec: SchemeSpec
    mttf: float
    method: str
    trials: int | None = None
    ci_low: float | None = None
    ci_high: float | None = None


def survival_prob(params: WeibullParams, t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise NegativeTime(f"negative time in {t!r}")
    out = np.exp(-((t_arr / params.eta) ** params.beta))
    return float(out) if out.ndim == 0 else out


def reliability_typical(t, N1: int, N2: int, params: WeibullParams):
    p = np.asarray(survival_prob(params, t))
    out = (1.0 - (1.0 - p) ** N2) ** N1
    return float(out) if out.ndim == 0 else out


def reliability_pooled(t, N1: int, N2: int, params: WeibullParams):
    """P(at least N1 of N1*N2 modules alive), summed term by term."""
    p = np.asarray(survival_prob(params, t))
    n = N1 * N2
    q = 1.0 - p
    out = np.zeros_like(p)
    for k in range(N1, n + 1):
        out = out + math.comb(n, k) * p**k * q ** (n - k)
    out = np.minimum(out, 1.0)
    return float(out) if out.ndim == 0 else out


def reliability(spec: SchemeSpec, t, params: WeibullParams):
    if spec.scheme is Scheme.TYPICAL:
        return reliability_typical(t, spec.N1, spec.N2, params)
    return reliability_pooled(t, spec.N1, spec.N2, params)


def improvement_curves(t_grid, N1: int, N2: int, params: WeibullParams) -> tuple[np.ndarray, np.ndarray]:
    """Absolute and relative gain of the pooled scheme over the typical one.

    The relative curve is NaN where the typical reliability is below 1e-12.
    """
    t = np.asarray(t_grid, dtype=float)
    typ = np.asarray(reliability_typical(t, N1, N2, params))
    pool = np.asarray(reliability_pooled(t, N1, N2, params))
    absolute = pool - typ
    with np.errstate(divide="ignore", invalid="ignore"):
        relative = np.where(typ > 1e-12, absolute / typ, np.nan)
    return absolute, relative


# ---------------------------------------------------------------------------
# MTTF


def _upper_limit(spec: SchemeSpec, params: WeibullParams) -> float:
    t = params.eta
    while reliability(spec, t, params) >= 1e-12:
        t *= 2
    return t


def _tail_bound(t: float, spec: SchemeSpec, params: WeibullParams) -> float:
    """Analytic bound on the integral of R beyond ``t``.

    Both schemes need N1 live modules, so R <= C * p**N1 with C = N2**N1
    (typical) or comb(N1*N2, N1) (pooled); the integral of p**k from t to
    infinity is an upper incomplete gamma function.
    """
    k = spec.N1
    coef = spec.N2**k if spec.scheme is Scheme.TYPICAL else math.comb(spec.modules, k)
    a = 1.0 / params.beta
    x = k * (t / params.eta) ** params.beta
    return coef * params.eta * a * k ** (-a) * gamma(a) * gammaincc(a, x)


def mttf_quadrature(spec: SchemeSpec, params: WeibullParams, rtol: float = 1e-6) -> MttfResult:
    upper = _upper_limit(spec, params)
    f = lambda s: reliability(spec, s, params)  # noqa: E731
    # R has a steep shoulder near 0 for beta < 1; split the range at decades
    edges = [0.0] + [e for e in params.eta * np.logspace(-6, 0, 7) if e < upper] + [upper]
    total, err = 0.0, 0.0
    for a, b in zip(edges, edges[1:]):
        val, e = integrate.quad(f, a, b, epsrel=rtol / 10, epsabs=0.0, limit=500)
        total += val
        err += e
    tail = _tail_bound(upper, spec, params)
    if err > rtol * total or tail > rtol * total:
        raise NonConvergence(f"quadrature error {err:.3g} (tail {tail:.3g}) exceeds rtol {rtol} of {total:.6g}")
    return MttfResult(spec, total, "ClosedForm")


def _poly_mul(a: list[int], b: list[int]) -> list[int]:
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return out


def _poly_pow(a: list[int], n: int) -> list[int]:
    out = [1]
    for _ in range(n):
        out = _poly_mul(out, a)
    return out


def reliability_polynomial(spec: SchemeSpec) -> list[int]:
    """Integer coefficients c_m with R = sum_m c_m * p**m (p = module survival)."""
    N1, N2 = spec.N1, spec.N2
    if spec.scheme is Scheme.TYPICAL:
        one_minus_q = [0] + [-c for c in _poly_pow([1, -1], N2)[1:]]  # 1 - (1-p)^N2
        return _poly_pow(one_minus_q, N1)
    n = spec.modules
    coeffs = [0] * (n + 1)
    for k in range(N1, n + 1):
        term = _poly_mul([0] * k + [1], _poly_pow([1, -1], n - k))
        for m, c in enumerate(term):
            coeffs[m] += math.comb(n, k) * c
    return coeffs


def mttf_gamma_expansion(spec: SchemeSpec, params: WeibullParams, digits: int = 40) -> float:
    """Analytic MTTF: integral of p(t)**m is eta * m**(-1/beta) * Gamma(1 + 1/beta)."""
    coeffs = reliability_polynomial(spec)
    if coeffs[0] != 0:
        raise ValueError("reliability polynomial has a constant term; R(inf) != 0")
    with mpmath.workdps(digits):
        beta = mpmath.mpf(params.beta)
        g = mpmath.gamma(1 + 1 / beta)
        total = mpmath.fsum(c * mpmath.power(m, -1 / beta) for m, c in enumerate(coeffs) if m and c)
        return float(params.eta * g * total)


def sample_failure_times(spec: SchemeSpec, params: WeibullParams, trials: int, master_seed: int,
                         stream: int = 0) -> np.ndarray:
    """System failure time of each trial by inverse-transform Weibull sampling."""
    out = np.empty(trials)
    for c, start in enumerate(range(0, trials, CHUNK)):
        size = min(CHUNK, trials - start)
        lifetimes = sample_lifetimes(spec.N1, spec.N2, params, size, RngStream(master_seed, (stream, c)))
        out[start:start + size] = system_failure_times(spec, lifetimes)
    return out


def coupled_failure_times(N1: int, N2: int, params: WeibullParams, trials: int, master_seed: int,
                          stream: int = 0) -> dict[Scheme, np.ndarray]:
    """Failure times of both schemes computed from the same sampled lifetimes."""
    out = {s: np.empty(trials) for s in Scheme}
    for c, start in enumerate(range(0, trials, CHUNK)):
        size = min(CHUNK, trials - start)
        lifetimes = sample_lifetimes(N1, N2, params, size, RngStream(master_seed, (stream, c)))
        for s in Scheme:
            out[s][start:start + size] = system_failure_times(SchemeSpec(s, N1, N2), lifetimes)
    return out


def empirical_survival(fail: np.ndarray, t_grid) -> ReliabilityCurve:
    """Fraction of trials still alive at each grid time, with a normal 95% band."""
    t = np.asarray(t_grid, dtype=float)
    trials = len(fail)
    alive = trials - np.searchsorted(np.sort(fail), t, side="right")
    R = alive / trials
    half = 1.96 * np.sqrt(R * (1 - R) / trials)
    return ReliabilityCurve(t, R, np.clip(R - half, 0, 1), np.clip(R + half, 0, 1), trials)


def sample_lifetimes(N1: int, N2: int, params: WeibullParams, size: int, rng: RngStream) -> np.ndarray:
    u = rng.generator.random((size, N1, N2))
    return params.eta * (-np.log1p(-u)) ** (1.0 / params.beta)


def system_failure_times(spec: SchemeSpec, lifetimes: np.ndarray) -> np.ndarray:
    """Failure instant per trial for lifetimes shaped ``(trials, N1, N2)``."""
    if spec.scheme is Scheme.TYPICAL:
        return lifetimes.max(axis=2).min(axis=1)
    flat = np.sort(lifetimes.reshape(len(lifetimes), -1), axis=1)
    # pool dies when fewer than N1 modules remain: the (n - N1 + 1)-th smallest lifetime
    return flat[:, spec.modules - spec.N1]


def monte_carlo_reliability(spec: SchemeSpec, params: WeibullParams, t_grid: Sequence[float], trials: int,
                            master_seed: int, stream: int = 0) -> ReliabilityCurve:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return empirical_survival(sample_failure_times(spec, params, trials, master_seed, stream), t_grid)


def mttf_monte_carlo(spec: SchemeSpec, params: WeibullParams, trials: int, master_seed: int,
                     stream: int = 0) -> MttfResult:
    fail = sample_failure_times(spec, params, trials, master_seed, stream)
    mean = float(fail.mean())
    half = 1.96 * float(fail.std(ddof=1)) / math.sqrt(trials) if trials > 1 else math.inf
    return MttfResult(spec, mean, "MonteCarlo", trials, mean - half, mean + half)


def mttf(spec: SchemeSpec, params: WeibullParams, method: str = "ClosedForm", trials: int = 100_000,
         master_seed: int = 0) -> MttfResult:
    if method == "ClosedForm":
        return mttf_quadrature(spec, params)
    if method == "MonteCarlo":
        return mttf_monte_carlo(spec, params, trials, master_seed)
    raise ValueError(f"unknown MTTF method {method!r}")


# ---------------------------------------------------------------------------
# Coupling to the mode manager


@dataclass(frozen=True)
class CipherPool:
    spec: SchemeSpec
    lifetimes: np.ndarray  # shape (N1, N2)

    @classmethod
    def sample(cls, spec: SchemeSpec, params: WeibullParams, rng: RngStream) -> CipherPool:
        return cls(spec, sample_lifetimes(spec.N1, spec.N2, params, 1, rng)[0])

    @property
    def failure_time(self) -> float:
        return float(system_failure_times(self.spec, self.lifetimes[None])[0])


def inject_cipher_failure(engine: Engine, satellite, pool: CipherPool, horizon: float,
                          time_scale: float = 1.0) -> int | None:
    """Schedule the satellite's switch to abnormal ciphered mode at the pool's failure instant.

    ``time_scale`` converts lifetime units (years) to engine seconds.
    Returns the event ticket, or None when the pool outlives the horizon.
    """
    t = pool.failure_time * time_scale
    if t > horizon:
        return None
    return engine.schedule(max(t, engine.now), "cipher-failure", target="SAT", action=satellite.fail_cipher)
