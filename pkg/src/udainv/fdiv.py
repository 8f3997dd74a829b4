"""f-divergences, Fenchel conjugates, Gaussian oracles, and the variational
lower-bound estimator.

Each divergence is a convex function ``phi`` with ``phi(1) = 0``, its
derivative, and a closed-form Fenchel conjugate ``phi*``. The signed
variational bound ``E_P[T] - E_Q[phi*(T)]`` underlies both the estimator
tests here and the trainable domain discrepancy.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import autodiff as ad

Array = np.ndarray

LOG2 = math.log(2.0)


class DivergenceDomainError(ValueError):
    """Argument outside a divergence's (or its conjugate's) domain."""


@dataclass(frozen=True)
class Interval:
    """Interval of valid conjugate arguments; bounds may be open."""

    lo: float
    hi: float
    lo_open: bool = False
    hi_open: bool = False

    def contains(self, t) -> Array:
        t = np.asarray(t, dtype=np.float64)
        above = t > self.lo if self.lo_open else t >= self.lo
        below = t < self.hi if self.hi_open else t <= self.hi
        return above & below


@dataclass(frozen=True)
class FDivergence:
    """A named convex function with derivative and Fenchel conjugate.

    ``conjugate_at_zero`` decides eligibility for the trainable domain
    discrepancy: the zero-point identity (distance 0 between identical
    feature stacks gives discrepancy exactly 0) needs ``phi*(0) = 0``.
    """

    name: str
    phi: Callable[[Array], Array]
    phi_prime: Callable[[Array], Array]
    conjugate: Callable[[Array], Array]
    conjugate_domain: Interval
    conjugate_tensor: Callable[[ad.Tensor], ad.Tensor]
    conjugate_at_zero: float


@dataclass(frozen=True)
class GaussianSpec:
    """1-d Gaussian used as an oracle distribution in estimator tests."""

    mean: float
    stddev: float

    def __post_init__(self) -> None:
        if not self.stddev > 0:
            raise ValueError(f"stddev must be positive, got {self.stddev}")

    def pdf(self, x) -> Array:
        x = np.asarray(x, dtype=np.float64)
        z = (x - self.mean) / self.stddev
        return np.exp(-0.5 * z * z) / (self.stddev * math.sqrt(2.0 * math.pi))

    def sample(self, n: int, rng: np.random.Generator) -> Array:
        return self.mean + self.stddev * rng.standard_normal(n)


def _check_nonnegative(x: Array, name: str) -> Array:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise DivergenceDomainError(f"{name}: phi is defined on x >= 0, got {float(np.min(x))}")
    return x


def _xlogx(x: Array) -> Array:
    # x log x with the limit value 0 at x = 0.
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
    return out


def _phi_kl(x):
    return _xlogx(_check_nonnegative(x, "KL"))


def _phi_prime_kl(x):
    return np.log(np.asarray(x, dtype=np.float64)) + 1.0


def _conj_kl(t):
    return np.exp(np.asarray(t, dtype=np.float64) - 1.0)


def _phi_js(x):
    x = _check_nonnegative(x, "JS")
    return -(x + 1.0) * np.log((1.0 + x) / 2.0) + _xlogx(x)


def _phi_prime_js(x):
    x = np.asarray(x, dtype=np.float64)
    return np.log(2.0 * x / (1.0 + x))


def _conj_js(t):
    return -np.log(2.0 - np.exp(np.asarray(t, dtype=np.float64)))


def _phi_pearson(x):
    x = _check_nonnegative(x, "PearsonChi2")
    return (x - 1.0) ** 2


def _phi_prime_pearson(x):
    return 2.0 * (np.asarray(x, dtype=np.float64) - 1.0)


def _conj_pearson(t):
    # sup over x >= 0: below t = -2 the maximizer pins to x = 0, value -phi(0) = -1.
    t = np.asarray(t, dtype=np.float64)
    return np.where(t >= -2.0, t + 0.25 * t * t, -1.0)


def _phi_tv(x):
    x = _check_nonnegative(x, "TotalVariation")
    return 0.5 * np.abs(x - 1.0)


def _phi_prime_tv(x):
    # Subgradient 0 at x = 1.
    return 0.5 * np.sign(np.asarray(x, dtype=np.float64) - 1.0)


def _conj_tv(t):
    return np.asarray(t, dtype=np.float64)


DIVERGENCES: dict[str, FDivergence] = {
    "KL": FDivergence(
        name="KL", phi=_phi_kl, phi_prime=_phi_prime_kl, conjugate=_conj_kl,
        conjugate_domain=Interval(-np.inf, np.inf),
        conjugate_tensor=lambda t: ad.exp(ad.sub(t, 1.0)),
        conjugate_at_zero=math.exp(-1.0)),
    "JS": FDivergence(
        name="JS", phi=_phi_js, phi_prime=_phi_prime_js, conjugate=_conj_js,
        conjugate_domain=Interval(-np.inf, LOG2, hi_open=True),
        conjugate_tensor=lambda t: ad.mul(ad.log(ad.sub(2.0, ad.exp(t))), -1.0),
        conjugate_at_zero=0.0),
    "PearsonChi2": FDivergence(
        name="PearsonChi2", phi=_phi_pearson, phi_prime=_phi_prime_pearson,
        conjugate=_conj_pearson,
        conjugate_domain=Interval(-np.inf, np.inf),
        # Valid for t >= -2; the training path only ever evaluates t >= 0.
        conjugate_tensor=lambda t: ad.add(t, ad.mul(ad.square(t), 0.25)),
        conjugate_at_zero=0.0),
    "TotalVariation": FDivergence(
        name="TotalVariation", phi=_phi_tv, phi_prime=_phi_prime_tv, conjugate=_conj_tv,
        conjugate_domain=Interval(-0.5, 0.5),
        conjugate_tensor=lambda t: t,
        conjugate_at_zero=0.0),
}


def get_divergence(name: str) -> FDivergence:
    try:
        return DIVERGENCES[name]
    except KeyError:
        raise KeyError(f"unknown divergence {name!r}; registered: {sorted(DIVERGENCES)}") from None


def phi_eval(div: FDivergence, x) -> float:
    return float(div.phi(x))


def conjugate_eval(div: FDivergence, t) -> float:
    t_arr = np.asarray(t, dtype=np.float64)
    if not np.all(div.conjugate_domain.contains(t_arr)):
        dom = div.conjugate_domain
        raise DivergenceDomainError(
            f"{div.name}: conjugate argument {float(np.max(t_arr))} outside "
            f"domain [{dom.lo}, {dom.hi}{')' if dom.hi_open else ']'}")
    return float(div.conjugate(t_arr))


@dataclass(frozen=True)
class GridSupResult:
    """Brute-force conjugate value; ``clipped`` marks an argmax on the grid edge."""

    value: float
    argmax_x: float
    clipped: bool

    def __float__(self) -> float:
        return self.value


def conjugate_numeric_oracle(div: FDivergence, t: float, x_lo: float, x_hi: float,
                             resolution: int = 100_000) -> GridSupResult:
    """Grid supremum of ``x*t - phi(x)``; test oracle for ``conjugate_eval``."""
    if resolution < 10_000:
        raise ValueError("resolution must be at least 1e4 points")
    grid = np.linspace(x_lo, x_hi, resolution)
    objective = grid * t - div.phi(grid)
    k = int(np.argmax(objective))
    return GridSupResult(value=float(objective[k]), argmax_x=float(grid[k]),
                         clipped=k == 0 or k == resolution - 1)


def closed_form_gaussian_divergence(div: FDivergence, p: GaussianSpec,
                                    q: GaussianSpec) -> float:
    """Divergence between two 1-d Gaussians.

    KL and equal-variance Pearson chi^2 use closed forms; every other case
    falls back to adaptive quadrature of the defining integral.
    """
    if div.name == "KL":
        var_ratio = (p.stddev ** 2 + (p.mean - q.mean) ** 2) / (2.0 * q.stddev ** 2)
        return math.log(q.stddev / p.stddev) + var_ratio - 0.5
    if div.name == "PearsonChi2" and p.stddev == q.stddev:
        delta = (p.mean - q.mean) / p.stddev
        return math.exp(delta * delta) - 1.0

    def integrand(x: float) -> float:
        qx = float(q.pdf(x))
        if qx == 0.0:
            return 0.0
        return qx * float(div.phi(float(p.pdf(x)) / qx))

    value, _abserr = integrate.quad(integrand, -np.inf, np.inf, limit=400)
    return float(value)


def nwj_estimate(div: FDivergence, samples_p: Array, samples_q: Array,
                 witness: Callable[[Array], Array]) -> float:
    """Signed variational lower bound ``mean T(P) - mean phi*(T(Q))``."""
    value, _stderr = nwj_estimate_stats(div, samples_p, samples_q, witness)
    return value


def nwj_estimate_stats(div: FDivergence, samples_p: Array, samples_q: Array,
                       witness: Callable[[Array], Array]) -> tuple[float, float]:
    """Estimate plus its Monte-Carlo standard error."""
    samples_p = np.asarray(samples_p, dtype=np.float64)
    samples_q = np.asarray(samples_q, dtype=np.float64)
    if samples_p.size == 0 or samples_q.size == 0:
        raise ValueError("nwj_estimate: sample sets must be nonempty")
    tp = np.asarray(witness(samples_p), dtype=np.float64)
    tq = np.asarray(witness(samples_q), dtype=np.float64)
    ok = div.conjugate_domain.contains(tq)
    if not np.all(ok):
        i = int(np.argmin(ok))
        raise DivergenceDomainError(
            f"{div.name}: witness value {tq[i]} at Q-sample index {i} "
            f"(x={samples_q[i]}) outside the conjugate domain")
    conj = div.conjugate(tq)
    estimate = float(np.mean(tp) - np.mean(conj))
    stderr = math.sqrt(np.var(tp, ddof=1) / tp.size + np.var(conj, ddof=1) / conj.size)
    return estimate, stderr


def optimal_witness_eval(div: FDivergence, p: GaussianSpec, q: GaussianSpec, x) -> Array:
    """Witness achieving equality in the bound: ``phi'(p(x)/q(x))``."""
    qx = q.pdf(x)
    if np.any(qx == 0.0):
        raise DivergenceDomainError("optimal witness undefined where q has zero density")
    return div.phi_prime(p.pdf(x) / qx)


def make_optimal_witness(div: FDivergence, p: GaussianSpec,
                         q: GaussianSpec) -> Callable[[Array], Array]:
    return lambda x: optimal_witness_eval(div, p, q, x)
