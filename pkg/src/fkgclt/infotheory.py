"""Distances from the standard normal for smoothed empirical laws.

Relative entropy is computed two ways: directly, as ``int f log(f / phi)``,
and through the de Bruijn identity

    D(W || phi) = 1/2 int_{tau0}^inf J_st(U + Z^(s)) / (1 + s) ds,

which holds for ``W`` the standardized law of ``U + Z^(tau0)`` when ``U``
has unit variance.  The two routes share nothing but the mixture evaluator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quadrature import (
    QuadratureError,
    QuadratureSpec,
    two_sided_tail_mass,
    two_sided_tail_second_moment,
)
from .smoothing import LOG_2PI, SmoothedDensity, fisher

SHIMIZU_TV = 4.0 * math.sqrt(3.0)
SHIMIZU_SUP = 1.0 + math.sqrt(6.0 / math.pi)
STANDARD_ATOL = 1e-9


class NotStandardizedError(ValueError):
    def __init__(self, mean: float, variance: float):
        super().__init__(f"model must have mean 0 and variance 1; got mean={mean!r}, "
                         f"variance={variance!r}")
        self.mean = mean
        self.variance = variance


def _require_standard(model: SmoothedDensity):
    if abs(model.mean) > STANDARD_ATOL or abs(model.variance - 1.0) > STANDARD_ATOL:
        raise NotStandardizedError(model.mean, model.variance)


def _log_phi(u):
    return -0.5 * u * u - 0.5 * LOG_2PI


def _outside_moment_bound(model: SmoothedDensity, half_width: float, c: float) -> float:
    # int over the complement of the windows of f(u) (u^2/2 + c)
    a = half_width
    mass = float(two_sided_tail_mass(a))
    z2 = float(two_sided_tail_second_moment(a)) * model.tau
    s2 = float(np.dot(model.weights, model.centers ** 2))
    return 0.5 * (s2 * mass + z2) + c * mass


@dataclass(frozen=True)
class EntropyResult:
    D: float
    error: float

    def as_dict(self):
        return {"D": self.D, "error": self.error}


def relative_entropy_direct(model: SmoothedDensity, quad: QuadratureSpec | None = None) -> EntropyResult:
    """D(f || phi) by quadrature of f (log f - log phi), in log space."""
    quad = quad or QuadratureSpec()
    _require_standard(model)

    def integrand(u):
        logf = model.logpdf(u)
        return np.exp(logf) * (logf - _log_phi(u))

    res = model.integrate(integrand, quad, include_standard=True)
    if not res.converged:
        raise QuadratureError(f"entropy quadrature did not converge (error {res.error:.3g})")
    # outside the windows: f - phi <= f log(f/phi) <= f (u^2/2 - log(tau)/2)
    upper = _outside_moment_bound(model, quad.half_width, 0.5 * abs(math.log(model.tau)))
    lower = float(two_sided_tail_mass(quad.half_width))
    err = res.error + max(upper, lower)
    if res.value < -err - quad.tol:
        raise QuadratureError(f"negative relative entropy {res.value!r}")
    return EntropyResult(max(res.value, 0.0), err)


@dataclass(frozen=True)
class DistanceResult:
    TV: float
    sup: float
    J_st: float
    tv_bound: float
    sup_bound: float
    error: float
    J_error: float = 0.0

    def _bound_with_error(self, const):
        return const * math.sqrt(max(self.J_st, 0.0) + self.J_error) + self.error

    @property
    def tv_holds(self) -> bool:
        return self.TV <= self._bound_with_error(SHIMIZU_TV)

    @property
    def sup_holds(self) -> bool:
        return self.sup <= self._bound_with_error(SHIMIZU_SUP)

    @property
    def tv_slack(self) -> float:
        return self.tv_bound - self.TV

    @property
    def sup_slack(self) -> float:
        return self.sup_bound - self.sup

    def as_dict(self):
        return {"TV": self.TV, "sup": self.sup, "J_st": self.J_st,
                "tv_bound": self.tv_bound, "sup_bound": self.sup_bound,
                "tv_holds": self.tv_holds, "sup_holds": self.sup_holds, "error": self.error}


def gaussian_distances(model: SmoothedDensity, quad: QuadratureSpec | None = None) -> DistanceResult:
    """L1 and sup distances to the standard normal, with Shimizu's bounds.

    ``TV`` here is the L1 norm int |f - phi| (at most 2).  The sup distance is
    maximised over the adaptive quadrature nodes and then polished locally.
    """
    quad = quad or QuadratureSpec()
    _require_standard(model)

    def diff(u):
        return model.pdf(u) - np.exp(_log_phi(u))

    res = model.integrate(lambda u: np.abs(diff(u)), quad, include_standard=True)
    if not res.converged:
        raise QuadratureError(f"TV quadrature did not converge (error {res.error:.3g})")
    tail = 2.0 * float(two_sided_tail_mass(quad.half_width))
    nodes = res.nodes
    vals = np.abs(diff(nodes))
    k = int(np.argmax(vals))
    lo = nodes[max(k - 1, 0)]
    hi = nodes[min(k + 1, nodes.size - 1)]
    fine = np.linspace(lo, hi, 201)
    sup = float(max(vals[k], np.abs(diff(fine)).max()))
    fr = fisher(model, quad)
    js = max(fr.J_st, 0.0)
    return DistanceResult(
        TV=res.value, sup=sup, J_st=fr.J_st,
        tv_bound=SHIMIZU_TV * math.sqrt(js), sup_bound=SHIMIZU_SUP * math.sqrt(js),
        # 1e-14 covers cancellation in f - phi when f is (nearly) phi itself
        error=res.error + tail + 1e-14, J_error=fr.error * fr.sigma2,
    )


# -- de Bruijn route ------------------------------------------------------------------

@dataclass(frozen=True)
class DeBruijnResult:
    """Relative entropy of the standardized ``U + Z^(tau_min)`` via de Bruijn.

    ``interval`` brackets that value: the integrand is nonnegative, so the
    truncated tail only adds.  ``lower_bound_for_U`` is a valid lower bound
    on D of the unsmoothed ``U`` itself (infinite when ``U`` is atomic).
    """

    D: float
    tail_certificate: float
    discretization_error: float
    quadrature_error: float
    tau_min: float
    t_max: float
    taus: np.ndarray
    J_st: np.ndarray

    @property
    def combined_error(self) -> float:
        return self.discretization_error + self.quadrature_error + self.tail_certificate

    @property
    def interval(self) -> tuple[float, float]:
        lo = self.D - self.discretization_error - self.quadrature_error
        hi = self.D + self.discretization_error + self.quadrature_error + self.tail_certificate
        return max(lo, 0.0), hi

    @property
    def lower_bound_for_U(self) -> float:
        return self.interval[0]

    def as_dict(self):
        lo, hi = self.interval
        return {"D": self.D, "D_lo": lo, "D_hi": hi,
                "tail_certificate": self.tail_certificate,
                "discretization_error": self.discretization_error,
                "quadrature_error": self.quadrature_error,
                "tau_min": self.tau_min, "T_max": self.t_max,
                "taus": self.taus.tolist(), "J_st": self.J_st.tolist()}


def debruijn_tail_certificate(t_max: float, sigma2: float = 1.0) -> float:
    """Upper bound on 1/2 int_{T}^inf J_st/(1+s) ds using J <= 1/s."""
    return 0.5 * sigma2 * math.log1p(1.0 / t_max)


def _simpson(y, h):
    """Composite Simpson on a uniform grid; an even point count ends with the 3/8 rule."""
    n = y.size
    if n < 3:
        return float(0.5 * h * (y[0] + y[-1])) if n == 2 else 0.0
    if n % 2 == 1:
        return float(h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum()))
    # even count: Simpson on the first n-3 intervals, 3/8 rule on the last three
    head = y[: n - 3]
    s = h / 3 * (head[0] + head[-1] + 4 * head[1:-1:2].sum() + 2 * head[2:-1:2].sum()) if head.size >= 3 else 0.0
    tail = y[n - 4:]
    s += 3 * h / 8 * (tail[0] + 3 * tail[1] + 3 * tail[2] + tail[3])
    return float(s)


def relative_entropy_debruijn(samples, tau_grid=None, t_max: float = 1e3, tau_min: float = 1e-4,
                              n_grid: int = 200, quad: QuadratureSpec | None = None,
                              tol: float | None = None) -> DeBruijnResult:
    """de Bruijn integral of J_st(U + Z^(s)) / (2 (1 + s)) over [tau_min, t_max].

    ``samples`` must have (population) mean 0 and variance 1.  The integral is
    taken in the variable log s with composite Simpson on ``n_grid``
    log-spaced points; the discretization error is the Richardson estimate
    from the half-resolution rule.  The part beyond ``t_max`` is certified by
    J <= 1/s.  Raises if the certificate exceeds ``tol``.
    """
    quad = quad or QuadratureSpec()
    draws = np.asarray(getattr(samples, "draws", samples), dtype=float).ravel()
    base = SmoothedDensity.from_values(draws, 1.0)
    if abs(base.mean) > 1e-9 or abs(base.center_variance - 1.0) > 1e-9:
        raise NotStandardizedError(base.mean, base.center_variance)
    if tau_grid is None:
        if not 0 < tau_min < t_max:
            raise ValueError("need 0 < tau_min < t_max")
        taus = np.geomspace(tau_min, t_max, n_grid)
    else:
        taus = np.asarray(tau_grid, dtype=float)
        if taus.size < 3 or np.any(np.diff(np.log(taus)) <= 0):
            raise ValueError("tau grid must be increasing with at least 3 points")
        ratios = np.diff(np.log(taus))
        if not np.allclose(ratios, ratios[0], rtol=1e-9):
            raise ValueError("tau grid must be log-spaced")
        tau_min, t_max = float(taus[0]), float(taus[-1])
    cert = debruijn_tail_certificate(t_max)
    if tol is not None and cert > tol:
        raise ValueError(f"T_max={t_max} gives tail certificate {cert:.3g} > tol {tol:.3g}")

    js = np.empty(taus.size)
    qerr = np.empty(taus.size)
    for i, s in enumerate(taus):
        fr = fisher(SmoothedDensity(base.centers, base.weights, s, n=base.n), quad)
        js[i] = fr.J_st
        qerr[i] = fr.error * fr.sigma2
    # integrate in x = log s:  ds / (1 + s) = s / (1 + s) dx
    g = 0.5 * js * taus / (1.0 + taus)
    h = float(np.log(taus[1] / taus[0]))
    full = _simpson(g, h)
    if taus.size % 2 == 1:
        coarse = _simpson(g[::2], 2 * h)
    else:
        coarse = _simpson(g[:-1][::2], 2 * h) + 0.5 * h * (g[-2] + g[-1])
    # unscaled difference to the half-resolution rule: conservative
    disc = abs(full - coarse)
    q_total = float(np.sum(0.5 * qerr * taus / (1.0 + taus)) * h)
    return DeBruijnResult(full, cert, disc, q_total, float(tau_min), float(t_max), taus, js)


@dataclass(frozen=True)
class InfoFunctionals:
    """Entropy and distance summary of one standardized smoothed model."""

    D_direct: float
    D_direct_error: float
    debruijn: DeBruijnResult | None
    distances: DistanceResult

    @property
    def pinsker_holds(self) -> bool:
        slack = 2 * self.D_direct_error + 2 * self.distances.TV * self.distances.error
        return 2.0 * self.D_direct + slack >= self.distances.TV ** 2

    def as_dict(self):
        out = {"D_direct": self.D_direct, "D_direct_error": self.D_direct_error,
               "distances": self.distances.as_dict(), "pinsker_holds": self.pinsker_holds}
        if self.debruijn is not None:
            out["debruijn"] = self.debruijn.as_dict()
        return out


def info_functionals(draws, tau: float, quad: QuadratureSpec | None = None,
                     route: str = "both", t_max: float = 1e3, n_grid: int = 200) -> InfoFunctionals:
    """All distances for the standardized law of ``draws + Z^(tau)``."""
    from .smoothing import smooth, standardize

    quad = quad or QuadratureSpec()
    u = standardized_draws(draws)
    # U/sd + Z^(tau/sd^2) has the same standardized law as U + Z^(tau)
    d = np.asarray(getattr(draws, "draws", draws), dtype=float).ravel()
    scale2 = float(np.mean((d - d.mean()) ** 2))
    tau0 = tau / scale2
    model = standardize(smooth(u, tau0))
    direct = relative_entropy_direct(model, quad) if route in ("direct", "both") else None
    db = None
    if route in ("debruijn", "both"):
        db = relative_entropy_debruijn(u, tau_min=tau0, t_max=max(t_max, 10 * tau0),
                                       n_grid=n_grid, quad=quad)
    dist = gaussian_distances(model, quad)
    return InfoFunctionals(
        D_direct=direct.D if direct else float("nan"),
        D_direct_error=direct.error if direct else float("nan"),
        debruijn=db, distances=dist)


def standardized_draws(draws) -> np.ndarray:
    d = np.asarray(getattr(draws, "draws", draws), dtype=float).ravel()
    c = d - d.mean()
    sd = math.sqrt(float(np.mean(c * c)))
    if sd == 0:
        raise ValueError("samples are degenerate")
    return c / sd
