"""Gaussian-smoothed empirical measures.

A sample ``s_1..s_N`` plus independent N(0, tau) noise has the exact density

    f(u) = (1/N) sum_i phi_tau(u - s_i),

a Gaussian mixture.  Everything here (density, score, Fisher information,
truncated moments) is evaluated from that closed form, in log-sum-exp form so
that far-tail scores stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from .quadrature import (
    QuadratureError,
    QuadratureSpec,
    integrate,
    merge_intervals,
    two_sided_tail_second_moment,
)

DEFAULT_TAU = 1.0
LOG_2PI = float(np.log(2.0 * np.pi))
_CHUNK = 2_000_000


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def compress(values, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Merge repeated values, summing their weights (normalized to 1)."""
    values = np.asarray(values, dtype=float).ravel()
    if weights is None:
        centers, counts = np.unique(values, return_counts=True)
        return centers, counts / counts.sum()
    weights = np.asarray(weights, dtype=float).ravel()
    centers, inv = np.unique(values, return_inverse=True)
    w = np.bincount(inv, weights=weights, minlength=len(centers))
    keep = w > 0
    return centers[keep], w[keep] / w[keep].sum()


@dataclass(frozen=True)
class SmoothedDensity:
    """Law of ``U + Z`` with ``U`` an empirical measure and ``Z ~ N(0, tau)``.

    Centers are stored de-duplicated; ``weights`` are the empirical
    frequencies, so a sample of size ``n`` with uniform weights 1/n is
    represented exactly.
    """

    centers: np.ndarray
    weights: np.ndarray
    tau: float
    n: int = 0
    mean: float = field(init=False)
    center_variance: float = field(init=False)

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"bandwidth tau must be positive, got {self.tau}")
        c = _frozen(self.centers)
        w = _frozen(self.weights)
        if c.ndim != 1 or c.shape != w.shape or c.size == 0:
            raise ValueError("need at least one center with matching weights")
        if not np.all(np.isfinite(c)):
            raise ValueError("centers must be finite")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "tau", float(self.tau))
        if not self.n:
            object.__setattr__(self, "n", int(c.size))
        m = float(np.dot(w, c))
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "center_variance", float(np.dot(w, (c - m) ** 2)))

    @classmethod
    def from_values(cls, values, tau: float, weights=None) -> "SmoothedDensity":
        values = np.asarray(values, dtype=float).ravel()
        centers, w = compress(values, weights)
        return cls(centers, w, tau, n=values.size)

    @property
    def variance(self) -> float:
        """Exact mixture variance: center variance plus bandwidth."""
        return self.center_variance + self.tau

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    # -- pointwise evaluation -------------------------------------------------

    def _chunks(self, u: np.ndarray):
        step = max(1, _CHUNK // self.centers.size)
        for start in range(0, u.size, step):
            yield slice(start, start + step)

    def _evaluate(self, u):
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise ValueError("evaluation points must be finite")
        flat = u.ravel()
        logf = np.empty_like(flat)
        score = np.empty_like(flat)
        lw = self.log_weights
        norm = -0.5 * (LOG_2PI + np.log(self.tau))
        for sl in self._chunks(flat):
            d = flat[sl, None] - self.centers[None, :]
            expo = lw - 0.5 * d * d / self.tau
            lse = logsumexp(expo, axis=1)
            resp = np.exp(expo - lse[:, None])
            logf[sl] = lse + norm
            score[sl] = -(resp * d).sum(axis=1) / self.tau
        return logf.reshape(u.shape), score.reshape(u.shape)

    def logpdf(self, u):
        return self._evaluate(u)[0]

    def pdf(self, u):
        return np.exp(self.logpdf(u))

    def score(self, u):
        """rho(u) = f'(u) / f(u)."""
        return self._evaluate(u)[1]

    def evaluate(self, u):
        """Return ``(f, f', rho)`` at ``u``."""
        logf, rho = self._evaluate(u)
        f = np.exp(logf)
        return f, f * rho, rho

    # -- integration support --------------------------------------------------

    def windows(self, half_width: float, include_standard: bool = False):
        """Union of [s_i - h sqrt(tau), s_i + h sqrt(tau)] (optionally with [-h, h])."""
        r = half_width * np.sqrt(self.tau)
        lo, hi = self.centers - r, self.centers + r
        if include_standard:
            lo = np.append(lo, -half_width)
            hi = np.append(hi, half_width)
        return merge_intervals(lo, hi)

    def integrate(self, g, quad: QuadratureSpec, include_standard: bool = False):
        """Quadrature of ``g`` over the component windows; see ``integrate``."""
        return integrate(
            g,
            self.windows(quad.half_width, include_standard),
            quad,
            max_width=np.sqrt(self.tau),
        )


def smooth(samples, tau: float = DEFAULT_TAU) -> SmoothedDensity:
    """Build the smoothed law of a SampleSet (or any 1-D array of draws)."""
    draws = getattr(samples, "draws", samples)
    draws = np.asarray(draws, dtype=float).ravel()
    if draws.size < 1:
        raise ValueError("need at least one sample")
    return SmoothedDensity.from_values(draws, tau)


def evaluate(model: SmoothedDensity, u):
    return model.evaluate(u)


def rescale(model: SmoothedDensity, c: float) -> SmoothedDensity:
    """Law of ``c (U + Z)``: centers times c, bandwidth times c^2."""
    if c == 0 or not np.isfinite(c):
        raise ValueError("scale factor must be finite and non-zero")
    centers = model.centers * c
    weights = model.weights
    if c < 0:
        centers, weights = centers[::-1], weights[::-1]
    return SmoothedDensity(centers, weights, model.tau * c * c, n=model.n)


def standardize(model: SmoothedDensity) -> SmoothedDensity:
    """Shift and scale to mean 0, variance 1 using exact mixture moments."""
    c = 1.0 / np.sqrt(model.variance)
    shifted = SmoothedDensity(model.centers - model.mean, model.weights, model.tau, n=model.n)
    return rescale(shifted, c)


@dataclass(frozen=True)
class FisherResult:
    J: float
    J_st: float
    error: float
    sigma2: float
    n: int

    def as_dict(self):
        return {"J": self.J, "J_st": self.J_st, "error": self.error,
                "sigma2": self.sigma2, "N": self.n}


def fisher_tail_bound(model: SmoothedDensity, half_width: float) -> float:
    # f rho^2 <= sum_i w_i phi_tau(u - s_i) (u - s_i)^2 / tau^2 (Jensen),
    # so the region outside every component window contributes at most this.
    return float(two_sided_tail_second_moment(half_width) / model.tau)


def fisher(model: SmoothedDensity, quad: QuadratureSpec | None = None) -> FisherResult:
    """Fisher information J = int f rho^2 and J_st = sigma^2 J - 1."""
    quad = quad or QuadratureSpec()

    def integrand(u):
        logf, rho = model._evaluate(u)
        return np.exp(logf) * rho * rho

    res = model.integrate(integrand, quad)
    tail = fisher_tail_bound(model, quad.half_width)
    err = res.error + tail
    if not res.converged:
        raise QuadratureError(f"Fisher quadrature did not converge (error {res.error:.3g})")
    J = res.value
    sigma2 = model.variance
    J_st = sigma2 * J - 1.0
    slack = err + quad.tol
    if J > 1.0 / model.tau + slack * (1 + 1.0 / model.tau):
        raise QuadratureError(f"J = {J!r} exceeds 1/tau = {1 / model.tau!r}")
    if J_st < -sigma2 * slack - 1e-12:
        raise QuadratureError(f"J_st = {J_st!r} is negative beyond tolerance")
    return FisherResult(J, J_st, err, sigma2, model.n)


# -- tail profile --------------------------------------------------------------

def _upper_partial(m, s, a):
    """E[X^2; X >= a] for X ~ N(m, s^2)."""
    alpha = (a - m) / s
    q = ndtr(-alpha)
    pdf = np.exp(-0.5 * alpha * alpha) / np.sqrt(2 * np.pi)
    return m * m * q + 2 * m * s * pdf + s * s * (alpha * pdf + q)


def _lower_partial(m, s, a):
    """E[X^2; X <= -a] for X ~ N(m, s^2)."""
    return _upper_partial(-m, s, a)


@dataclass(frozen=True)
class TailProfile:
    R: np.ndarray
    profile: np.ndarray
    envelope_exponent: float

    def as_dict(self):
        return {"R": self.R.tolist(), "profile": self.profile.tolist(),
                "envelope_exponent": self.envelope_exponent}


def truncated_second_moment(model: SmoothedDensity, a) -> np.ndarray:
    """E[X^2 I(|X| >= a)] with X the mixture variable centered at its mean."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    m = (model.centers - model.mean)[None, :]
    s = np.sqrt(model.tau)
    aa = a[:, None]
    per = _upper_partial(m, s, aa) + _lower_partial(m, s, aa)
    return per @ model.weights


def tail_profile(model: SmoothedDensity, R) -> TailProfile:
    """Normalized truncated second moments E X^2 I(|X| >= R sigma) / sigma^2.

    The envelope exponent ``gamma`` is the least-squares slope of
    ``log profile`` against ``-R^2 / 2`` for R >= 1; a Gaussian gives about 1.
    """
    R = np.asarray(R, dtype=float).ravel()
    if np.any(R < 0):
        raise ValueError("R grid must be nonnegative")
    sigma = np.sqrt(model.variance)
    prof = truncated_second_moment(model, R * sigma) / model.variance
    prof = np.minimum(prof, 1.0)
    sel = (R >= 1.0) & (prof > 1e-300)
    gamma = float("nan")
    if sel.sum() >= 2:
        x = -0.5 * R[sel] ** 2
        y = np.log(prof[sel])
        gamma = float(np.polyfit(x, y, 1)[0])
    return TailProfile(R, prof, gamma)
