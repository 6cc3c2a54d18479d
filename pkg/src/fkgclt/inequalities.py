"""Bivariate score calculus for smoothed pairs and audits of the FKG bounds.

For paired samples ``(s_i, t_i)`` and bandwidth ``tau`` the smoothed pair
``(X, Y) = (S + Z_S, T + Z_T)`` has density

    p(x, y) = sum_i w_i phi_tau(x - s_i) phi_tau(y - t_i),

and for any ``beta`` the combination ``sqrt(beta) X + sqrt(1 - beta) Y`` is
again a mixture with bandwidth ``tau``.  All scores below come from these
closed forms; integrals over the plane use a tensor Gauss-Legendre rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .lattice import hoeffding_integrals
from .quadrature import (
    PANEL_ORDER,
    QuadratureSpec,
    fixed_rule,
    split_panels,
    two_sided_tail_mass,
    two_sided_tail_second_moment,
)
from .smoothing import LOG_2PI, SmoothedDensity, compress, fisher

E = math.e
COV_FLOOR = 1e-12
DEFAULT_EPS = 0.05
_CHUNK = 2_000_000


# -- joint model -----------------------------------------------------------------

@dataclass(frozen=True)
class JointSmoothedDensity:
    s: np.ndarray
    t: np.ndarray
    weights: np.ndarray
    tau: float
    n: int = 0
    marginal_x: SmoothedDensity = field(init=False, repr=False)
    marginal_y: SmoothedDensity = field(init=False, repr=False)
    cov: float = field(init=False)

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"bandwidth tau must be positive, got {self.tau}")
        s = np.array(self.s, dtype=float).ravel()
        t = np.array(self.t, dtype=float).ravel()
        w = np.array(self.weights, dtype=float).ravel()
        if s.size == 0 or s.shape != t.shape or s.shape != w.shape:
            raise ValueError("need at least one pair with matching weights")
        w = w / w.sum()
        for a in (s, t, w):
            a.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "tau", float(self.tau))
        if not self.n:
            object.__setattr__(self, "n", int(s.size))
        mx = SmoothedDensity(*compress(s, w), self.tau, n=self.n)
        my = SmoothedDensity(*compress(t, w), self.tau, n=self.n)
        object.__setattr__(self, "marginal_x", mx)
        object.__setattr__(self, "marginal_y", my)
        cov = float(np.dot(w, (s - mx.mean) * (t - my.mean)))
        object.__setattr__(self, "cov", cov)

    @classmethod
    def product(cls, mx: SmoothedDensity, my: SmoothedDensity) -> "JointSmoothedDensity":
        """Independent coupling of two marginals with the same bandwidth."""
        if mx.tau != my.tau:
            raise ValueError("marginals must share the bandwidth")
        S, T = np.meshgrid(mx.centers, my.centers, indexing="ij")
        W = np.outer(mx.weights, my.weights)
        return cls(S.ravel(), T.ravel(), W.ravel(), mx.tau)

    @property
    def n_components(self) -> int:
        return self.s.size

    @property
    def max_variance(self) -> float:
        return max(self.marginal_x.center_variance, self.marginal_y.center_variance)

    def sum_model(self, beta: float) -> SmoothedDensity:
        """Law of sqrt(beta) X + sqrt(1 - beta) Y (bandwidth stays tau)."""
        _check_beta(beta)
        if beta == 1.0:
            return self.marginal_x
        if beta == 0.0:
            return self.marginal_y
        c = math.sqrt(beta) * self.s + math.sqrt(1.0 - beta) * self.t
        return SmoothedDensity(*compress(c, self.weights), self.tau, n=self.n)

    def _components(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("evaluation points must be finite")
        return x, y

    def evaluate(self, x, y):
        """Return ``(log p, rho1, rho2)`` at points (x, y)."""
        x, y = self._components(x, y)
        fx, fy = x.ravel(), y.ravel()
        logp = np.empty(fx.size)
        r1 = np.empty(fx.size)
        r2 = np.empty(fx.size)
        with np.errstate(divide="ignore"):
            lw = np.log(self.weights)
        step = max(1, _CHUNK // self.n_components)
        for a in range(0, fx.size, step):
            sl = slice(a, a + step)
            dx = fx[sl, None] - self.s[None, :]
            dy = fy[sl, None] - self.t[None, :]
            expo = lw - 0.5 * (dx * dx + dy * dy) / self.tau
            lse = logsumexp(expo, axis=1)
            resp = np.exp(expo - lse[:, None])
            logp[sl] = lse - LOG_2PI - math.log(self.tau)
            r1[sl] = -(resp * dx).sum(axis=1) / self.tau
            r2[sl] = -(resp * dy).sum(axis=1) / self.tau
        shape = x.shape
        return logp.reshape(shape), r1.reshape(shape), r2.reshape(shape)

    def pdf(self, x, y):
        return np.exp(self.evaluate(x, y)[0])

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((2, n)) * math.sqrt(self.tau)
        return self.s[idx] + z[0], self.t[idx] + z[1]


def _check_beta(beta):
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")


def joint_smooth(pairs, tau: float = 1.0) -> JointSmoothedDensity:
    """Smoothed joint law of paired samples (rows of ``pairs`` are (s, t))."""
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 1:
        raise ValueError("pairs must be an (N, 2) array with N >= 1")
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    return JointSmoothedDensity(uniq[:, 0], uniq[:, 1], counts / counts.sum(), tau,
                                n=pairs.shape[0])


def joint_scores(joint: JointSmoothedDensity, x, y):
    """(rho1, rho2): partial derivatives of log p in x and y."""
    _, r1, r2 = joint.evaluate(x, y)
    return r1, r2


def m_function(joint: JointSmoothedDensity, a: float, b: float, x, y):
    """M_{a,b}(x, y) = a (rho1 - rho_X(x)) + b (rho2 - rho_Y(y))."""
    _, r1, r2 = joint.evaluate(x, y)
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    return a * (r1 - joint.marginal_x.score(x)) + b * (r2 - joint.marginal_y.score(y))


def m_function_rearranged(joint: JointSmoothedDensity, a: float, b: float, x, y):
    """Same M from density differences:

    a (p1 - p'_X p_Y)/p + b (p2 - p_X p'_Y)/p + (a rho_X + b rho_Y)(p_X p_Y - p)/p
    """
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    logp, r1, r2 = joint.evaluate(x, y)
    p = np.exp(logp)
    fx, dfx, rx = joint.marginal_x.evaluate(x)
    fy, dfy, ry = joint.marginal_y.evaluate(y)
    p1 = p * r1
    p2 = p * r2
    prod = fx * fy
    return (a * (p1 - dfx * fy) + b * (p2 - fx * dfy) + (a * rx + b * ry) * (prod - p)) / p


# -- score of a sum -----------------------------------------------------------------

def score_of_sum_check(joint: JointSmoothedDensity, beta: float, grid, n_line: int = 96,
                       half_width: float = 12.0) -> float:
    """Max |rho_sum(z) - E[rho1(X, Y) / sqrt(beta) | W = z]| over ``grid``.

    The left side is the direct mixture score of W = sqrt(beta) X +
    sqrt(1 - beta) Y; the right side integrates the joint score along the
    line W = z with Gauss-Legendre (for beta = 0 the second coordinate is
    used instead).
    """
    _check_beta(beta)
    z = np.atleast_1d(np.asarray(grid, dtype=float))
    direct = joint.sum_model(beta).score(z)
    sb, sc = math.sqrt(beta), math.sqrt(1.0 - beta)
    # (x, y) = z (sb, sc) + v (sc, -sb); rotation, so dx dy = dz dv
    vc = sc * joint.s - sb * joint.t
    r = half_width * math.sqrt(joint.tau)
    panels = split_panels([(vc.min() - r, vc.max() + r)], math.sqrt(joint.tau) / 2,
                          min_panels=max(1, n_line // PANEL_ORDER))
    v, wv = fixed_rule(panels)
    X = z[:, None] * sb + v[None, :] * sc
    Y = z[:, None] * sc - v[None, :] * sb
    logp, r1, r2 = joint.evaluate(X, Y)
    shift = logp.max(axis=1, keepdims=True)
    pw = np.exp(logp - shift) * wv[None, :]
    if beta > 0:
        cond = (pw * r1).sum(axis=1) / pw.sum(axis=1) / sb
    else:
        cond = (pw * r2).sum(axis=1) / pw.sum(axis=1) / sc
    return float(np.max(np.abs(direct - cond)))


# -- planar quadrature ----------------------------------------------------------------

@dataclass(frozen=True)
class Quad2DSpec:
    """Tensor Gauss-Legendre over [center range +- half_width sqrt(tau)]^2.

    Panels are at most ``panel_scale * sqrt(tau)`` wide with 16 nodes each;
    ``nodes`` is the minimum per axis.  Joints with more than
    ``mc_threshold`` components fall back to Monte Carlo.
    """

    nodes: int = 256
    half_width: float = 10.0
    panel_scale: float = 1.0
    mc_threshold: int = 1000
    mc_draws: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if self.nodes < 16 or self.half_width < 6:
            raise ValueError("2-D quadrature needs >= 16 nodes per axis and half-width >= 6")


@dataclass
class PlanarTerms:
    """Integrals against p(x, y) of the score products in the decomposition."""

    beta: float
    J_X: float
    J_Y: float
    J_sum: float
    cross: float          # E rho_X rho_Y
    m_term: float         # E M_{sqrt b, sqrt(1-b)} rho_sum
    delta: float
    mass: float
    error: float
    method: str
    se: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        b = self.beta
        lhs = (b * self.J_X + (1 - b) * self.J_Y - self.J_sum
               + 2 * math.sqrt(b * (1 - b)) * self.cross + 2 * self.m_term)
        return abs(lhs - self.delta)

    @property
    def gap(self) -> float:
        """beta J(X) + (1 - beta) J(Y) - J(sum)."""
        return self.beta * self.J_X + (1 - self.beta) * self.J_Y - self.J_sum


def _axis_rule(lo, hi, tau, spec: Quad2DSpec, order=PANEL_ORDER):
    panels = split_panels([(lo, hi)], spec.panel_scale * math.sqrt(tau),
                          min_panels=max(1, -(-spec.nodes // PANEL_ORDER)))
    return fixed_rule(panels, order)


def _tensor_fields(joint: JointSmoothedDensity, gx, gy):
    """p, rho1, rho2 on the tensor grid via stabilized matrix products."""
    tau = joint.tau
    with np.errstate(divide="ignore"):
        lw = np.log(joint.weights)
    dx = gx[None, :] - joint.s[:, None]            # N x nx
    dy = gy[None, :] - joint.t[:, None]            # N x ny
    la = lw[:, None] - 0.5 * dx * dx / tau
    lb = -0.5 * dy * dy / tau
    ax = la.max(axis=0)
    ay = lb.max(axis=0)
    A = np.exp(la - ax)
    B = np.exp(lb - ay)
    P = A.T @ B
    P1 = (A * (-dx / tau)).T @ B
    P2 = A.T @ (B * (-dy / tau))
    ok = P > 1e-280
    safe = np.where(ok, P, 1.0)
    rho1 = np.where(ok, P1 / safe, 0.0)
    rho2 = np.where(ok, P2 / safe, 0.0)
    with np.errstate(under="ignore"):
        scale = np.exp(ax[:, None] + ay[None, :] - LOG_2PI - math.log(tau))
    p = np.where(ok, P * scale, 0.0)
    return p, rho1, rho2


def _planar_integrals(joint, beta, gx, wx, gy, wy):
    a, b = math.sqrt(beta), math.sqrt(1.0 - beta)
    p, r1, r2 = _tensor_fields(joint, gx, gy)
    rx = joint.marginal_x.score(gx)[:, None]
    ry = joint.marginal_y.score(gy)[None, :]
    W = a * gx[:, None] + b * gy[None, :]
    rs = joint.sum_model(beta).score(W)
    m = a * (r1 - rx) + b * (r2 - ry)
    h = a * rx + b * ry - rs
    wt = p * wx[:, None] * wy[None, :]
    return {
        "J_X": float((wt * rx * rx).sum()),
        "J_Y": float((wt * ry * ry).sum()),
        "J_sum": float((wt * rs * rs).sum()),
        "cross": float((wt * rx * ry).sum()),
        "m_term": float((wt * m * rs).sum()),
        "delta": float((wt * h * h).sum()),
        "mass": float(wt.sum()),
    }


def _planar_tail_bound(joint: JointSmoothedDensity, beta: float, half_width: float) -> float:
    # Outside the window at least one coordinate is > half_width sqrt(tau)
    # from its center.  Every score is bounded by (distance to a center +
    # center spread) / tau, giving a Gaussian partial-moment bound.
    tau = joint.tau
    spread = max(np.ptp(joint.s), np.ptp(joint.t))
    spread = max(spread, np.ptp(math.sqrt(beta) * joint.s + math.sqrt(1 - beta) * joint.t))
    mass = float(two_sided_tail_mass(half_width))
    mom = float(two_sided_tail_second_moment(half_width))
    per_score_sq = 2 * (2 * (mom * tau + mass * tau) + 2 * mass * spread ** 2) / tau ** 2
    return 9.0 * per_score_sq


def planar_terms(joint: JointSmoothedDensity, beta: float, quad2d: Quad2DSpec | None = None,
                 region: tuple | None = None) -> PlanarTerms:
    """All decomposition terms at ``beta``, optionally restricted to a box.

    ``region`` = ((x0, x1), (y0, y1)) integrates only over that rectangle.
    The error estimate is the disagreement with an 8-node-per-panel rule on
    the same panels plus a certified bound for the region outside the window.
    """
    _check_beta(beta)
    q = quad2d or Quad2DSpec()
    if region is None and joint.n_components > q.mc_threshold:
        return _planar_terms_mc(joint, beta, q)
    r = q.half_width * math.sqrt(joint.tau)
    if region is None:
        (x0, x1), (y0, y1) = (joint.s.min() - r, joint.s.max() + r), (joint.t.min() - r, joint.t.max() + r)
    else:
        (x0, x1), (y0, y1) = region
    gx, wx = _axis_rule(x0, x1, joint.tau, q)
    gy, wy = _axis_rule(y0, y1, joint.tau, q)
    fine = _planar_integrals(joint, beta, gx, wx, gy, wy)
    cx, cwx = _axis_rule(x0, x1, joint.tau, q, order=PANEL_ORDER // 2)
    cy, cwy = _axis_rule(y0, y1, joint.tau, q, order=PANEL_ORDER // 2)
    coarse = _planar_integrals(joint, beta, cx, cwx, cy, cwy)
    err = max(abs(fine[k] - coarse[k]) for k in fine)
    if region is None:
        err += _planar_tail_bound(joint, beta, q.half_width)
    return PlanarTerms(beta=beta, error=err, method="tensor", **fine)


def _planar_terms_mc(joint, beta, q: Quad2DSpec) -> PlanarTerms:
    rng = np.random.default_rng([q.seed, 7])
    a, b = math.sqrt(beta), math.sqrt(1 - beta)
    sums = {k: [] for k in ("J_X", "J_Y", "J_sum", "cross", "m_term", "delta")}
    ws = joint.sum_model(beta)
    step = 100_000
    for start in range(0, q.mc_draws, step):
        k = min(step, q.mc_draws - start)
        x, y = joint.sample(k, rng)
        _, r1, r2 = joint.evaluate(x, y)
        rx = joint.marginal_x.score(x)
        ry = joint.marginal_y.score(y)
        rs = ws.score(a * x + b * y)
        m = a * (r1 - rx) + b * (r2 - ry)
        h = a * rx + b * ry - rs
        for key, val in (("J_X", rx * rx), ("J_Y", ry * ry), ("J_sum", rs * rs),
                         ("cross", rx * ry), ("m_term", m * rs), ("delta", h * h)):
            sums[key].append(val)
    vals = {k: np.concatenate(v) for k, v in sums.items()}
    means = {k: float(v.mean()) for k, v in vals.items()}
    se = {k: float(v.std(ddof=1) / math.sqrt(v.size)) for k, v in vals.items()}
    return PlanarTerms(beta=beta, mass=1.0, error=3 * max(se.values()), method="monte-carlo",
                       se=se, **means)


def delta(joint: JointSmoothedDensity, beta: float, quad2d: Quad2DSpec | None = None) -> float:
    """Delta(X, Y, beta) = E (sqrt(b) rho_X + sqrt(1-b) rho_Y - rho_sum)^2."""
    if beta in (0.0, 1.0):
        _check_beta(beta)
        return 0.0
    return planar_terms(joint, beta, quad2d).delta


def fishdecomp_residual(joint: JointSmoothedDensity, beta: float,
                        quad2d: Quad2DSpec | None = None) -> float:
    """|LHS - RHS| of the Fisher-information decomposition identity

        b J(X) + (1-b) J(Y) - J(W) + 2 sqrt(b(1-b)) E rho_X rho_Y
            + 2 E M_{sqrt b, sqrt(1-b)}(X, Y) rho_W(W)  =  Delta(X, Y, b),

    all terms sharing one planar rule.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie strictly between 0 and 1")
    return planar_terms(joint, beta, quad2d).residual


# -- explicit constants ----------------------------------------------------------------

def c_tau_k(tau: float, k: float) -> float:
    """sqrt(2) (2k / (tau e))^(k/2): sup of (u/tau)^k phi_tau(u) / phi_2tau(u)."""
    return math.sqrt(2.0) * (2.0 * k / (tau * E)) ** (k / 2.0)


def score_moment_bound(tau: float, k: float) -> float:
    """Bound on (E |rho|^k)^(1/k) for any tau-smoothed variable."""
    return math.sqrt(2.0 ** (1.0 / k) * 2.0 * k / (tau * E))


def f1(tau: float, K: float) -> float:
    """int_{-B sqrt tau}^{B sqrt tau} rho^2 <= f1 B^3 for variance <= K."""
    return 8.0 / (math.sqrt(tau) * E) * (3.0 + 2.0 * K / tau)


def f2(tau: float, K: float) -> float:
    """E M_{a,b} rho_sum I(L_B) <= f2 (a+b) B^4 Cov(S, T), B >= 1.

    Explicit chain: p|M| <= c (sqrt(tau) e (a|rho_X| + b|rho_Y|) + e^{3/2}(a+b))
    with c = Cov / (2 pi tau^{5/2} e^2), the e^{3/2} coming from the sharp
    derivative bound in ``density_difference_bounds``.  Cauchy-Schwarz
    against rho_sum on L_B using int_{L_B} rho_X^2 <= 2 B^4 sqrt(tau) f1(K) and
    int_{L_B} rho_sum^2 <= 16 B^4 sqrt(tau) f1(2K); B^3 <= B^4.
    """
    g = f1(tau, K)
    gs = f1(tau, 2.0 * K)
    pref = 1.0 / (2.0 * math.pi * tau ** 2.5 * E ** 2)
    return pref * (4.0 * math.sqrt(2.0) * E * tau * math.sqrt(g * gs) + 8.0 * E ** 1.5 * tau ** 0.75 * math.sqrt(gs))


def _holder_pair(eps: float):
    p = 2.0 / (2.0 - eps)
    q = p / (p - 1.0)
    return p, q


def f3(tau: float, K: float, eps: float = DEFAULT_EPS) -> float:
    """|E M_{a,b} rho_sum I(off L_B)| <= (a+b) f3 / B^(2-eps).

    Holder with p = 2/(2-eps); score moments of order 2q from the tail
    lemma; P(off L_B) <= 2 (K + tau) / (B^2 tau) by Chebyshev.
    """
    p, q = _holder_pair(eps)
    m = score_moment_bound(tau, 2.0 * q)
    return 2.0 * m * m * (2.0 * (K + tau) / tau) ** (1.0 / p)


def f4(tau: float, K: float) -> float:
    """Coefficient of B^4 Cov(S, T) in the product-term bound."""
    return f1(tau, K) / (math.pi * E * tau ** 1.5)


def f5(tau: float, K: float, eps: float = DEFAULT_EPS) -> float:
    """Coefficient of B^-(2-eps) in the product-term bound."""
    return f3(tau, K, eps)


def density_difference_bounds(tau: float, cov: float) -> tuple[float, float]:
    """(|p - p_X p_Y| bound, |p1 - p'_X p_Y| bound) for FKG pairs.

    Both are sup|phi'| sup|g'| Cov with phi the N(0, tau) density:
    sup|phi'|^2 = 1/(2 pi e tau^2) and sup|phi''| sup|phi'| = 1/(2 pi sqrt(e) tau^{5/2}),
    the second supremum being attained at the origin.
    """
    return cov / (2.0 * math.pi * tau ** 2 * E), cov / (2.0 * math.pi * math.sqrt(E) * tau ** 2.5)


def stated_derivative_bound(tau: float, cov: float) -> float:
    """Cov / (pi tau^{5/2} e^2): the derivative bound using the local extremum
    of phi'' at u = sqrt(3 tau) instead of its maximum at 0.  Smaller than the
    sharp value by 2 e^{-3/2}; kept for reporting only."""
    return cov / (math.pi * tau ** 2.5 * E ** 2)


# -- theorem-level report ------------------------------------------------------------------

@dataclass
class DecompositionReport:
    beta: float
    tau: float
    K: float
    eps: float
    exponent: float
    exponent_mode: str
    cov: float
    J_X: float
    J_Y: float
    J_sum: float
    cross: float
    m_term: float
    delta: float
    identity_residual: float
    quadrature_error: float
    B: float | None
    B_valid: bool
    c_tau_k: dict
    f_values: dict
    min_C: float | None
    assembled_C: float | None
    subadditive: bool | None = None

    @property
    def gap(self) -> float:
        return self.beta * self.J_X + (1 - self.beta) * self.J_Y - self.J_sum

    def slack(self, C: float) -> float:
        corr = C * self.cov ** self.exponent if self.cov > COV_FLOOR else 0.0
        return self.gap + corr - self.delta

    def as_dict(self):
        out = {k: v for k, v in self.__dict__.items()}
        out["gap"] = self.gap
        out["c_tau_k"] = {str(k): v for k, v in self.c_tau_k.items()}
        return out


def theorem_gap(joint: JointSmoothedDensity, beta: float, eps: float = DEFAULT_EPS,
                K: float | None = None, mode: str = "third", moment_delta: float | None = None,
                k_list=(2, 4), quad2d: Quad2DSpec | None = None,
                strict: bool = True) -> DecompositionReport:
    """Sub-additivity gap with its covariance correction.

    ``min_C`` is the smallest C with
    ``beta J(X) + (1-beta) J(Y) - J(W) + C Cov^e >= Delta`` where ``e`` is
    1/3 - eps, or (2+delta)/(6+delta) - eps in ``mode="moment"``.
    ``assembled_C`` evaluates the explicit constant chain at
    B = (K / Cov)^(1/6).  A negative covariance raises unless ``strict`` is
    off, in which case it is reported like a zero one (no constant).
    """
    if not 0.0 < eps < 1.0 / 3.0:
        raise ValueError("eps must lie in (0, 1/3)")
    if K is None:
        K = joint.max_variance
    if K < joint.max_variance - 1e-12:
        raise ValueError(f"K={K} is below the marginal variance {joint.max_variance}")
    if mode == "third":
        exponent = 1.0 / 3.0 - eps
    elif mode == "moment":
        if moment_delta is None or moment_delta <= 0:
            raise ValueError("moment mode needs a positive moment_delta")
        exponent = (2.0 + moment_delta) / (6.0 + moment_delta) - eps
    else:
        raise ValueError(f"unknown exponent mode {mode!r}")
    cov = joint.cov
    if strict and cov < -COV_FLOOR:
        raise ValueError(f"Cov(S,T) = {cov} < 0 is outside the FKG setting")
    terms = planar_terms(joint, beta, quad2d)
    tau = joint.tau
    fv = {"f1": f1(tau, K), "f2": f2(tau, K), "f3": f3(tau, K, eps),
          "f4": f4(tau, K), "f5": f5(tau, K, eps)}
    ck = {k: c_tau_k(tau, k) for k in k_list}
    need = terms.delta - terms.gap
    if cov <= COV_FLOOR:
        return DecompositionReport(
            beta, tau, K, eps, exponent, mode, cov, terms.J_X, terms.J_Y, terms.J_sum,
            terms.cross, terms.m_term, terms.delta, terms.residual, terms.error,
            None, False, ck, fv, None, None,
            subadditive=bool(need <= terms.error + 1e-10))
    B = (K / cov) ** (1.0 / 6.0)
    a, b = math.sqrt(beta), math.sqrt(1.0 - beta)
    decay = B ** -(2.0 - eps)
    bound = (2 * a * b * (fv["f4"] * B ** 4 * cov + fv["f5"] * decay)
             + 2 * (a + b) * (fv["f2"] * B ** 4 * cov + fv["f3"] * decay))
    return DecompositionReport(
        beta, tau, K, eps, exponent, mode, cov, terms.J_X, terms.J_Y, terms.J_sum,
        terms.cross, terms.m_term, terms.delta, terms.residual, terms.error,
        B, B > 1.0, ck, fv, max(0.0, need) / cov ** exponent, bound / cov ** exponent,
        subadditive=bool(need <= terms.error + 1e-10))


# -- Theta seminorm --------------------------------------------------------------------------

@dataclass(frozen=True)
class ThetaSeminorm:
    variance: float        # tau / 2
    second_moment: float   # E f(Z)^2
    a: float
    b: float
    residual: float        # ||f||_Theta^2


def theta_seminorm(score, tau: float, n_nodes: int = 120) -> ThetaSeminorm:
    """inf_{a,b} E (f(Z) - a Z - b)^2 for Z ~ N(0, tau/2) by Gauss-Hermite.

    ``score`` is a callable or a SmoothedDensity (its score is used).
    """
    v = tau / 2.0
    if not v > 0:
        raise ValueError("reference bandwidth tau/2 must be positive")
    f = score.score if hasattr(score, "score") else score
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / math.sqrt(2.0 * math.pi)
    z = math.sqrt(v) * x
    fz = np.asarray(f(z), dtype=float)
    b = float(np.dot(w, fz))
    a = float(np.dot(w, fz * z)) / v
    resid = float(np.dot(w, (fz - a * z - b) ** 2))
    return ThetaSeminorm(v, float(np.dot(w, fz * fz)), a, b, resid)


# -- audits ----------------------------------------------------------------------------------

def _lb_grid(tau, B, n):
    r = B * math.sqrt(tau)
    g = np.linspace(-r, r, n)
    return g


@dataclass
class FactorizationAudit:
    B: float
    cov: float
    density_ratio: float        # max |p - p_X p_Y| / bound
    deriv1_ratio: float
    deriv2_ratio: float
    stated_deriv_ratio: float   # max derivative difference / stated_derivative_bound
    noise_allowance: float      # 2 int H^- / Cov; bounds hold exactly within 1 + this
    m_term: float               # E M rho_sum I(L_B)
    m_bound: float              # f2 (a+b) B^4 int|H|
    xi_min: float               # min p / (phi_{tau/2} phi_{tau/2}) over L_B grid
    hoeffding_exact: bool
    max_differences: tuple = ()  # the three grid maxima themselves

    @property
    def worst_ratio(self) -> float:
        return max(self.density_ratio, self.deriv1_ratio, self.deriv2_ratio)

    @property
    def holds(self) -> bool:
        return (self.worst_ratio <= 1.0 + self.noise_allowance + 1e-9
                and self.m_term <= self.m_bound)

    def as_dict(self):
        d = dict(self.__dict__)
        d["worst_ratio"] = self.worst_ratio
        d["holds"] = self.holds
        return d


def factorization_bounds(joint: JointSmoothedDensity, B: float, beta: float = 0.5,
                         n_grid: int = 200, K: float | None = None,
                         quad2d: Quad2DSpec | None = None) -> FactorizationAudit:
    """Audit the density-difference bounds for FKG pairs on L_B.

    Ratios compare grid maxima of |p - p_X p_Y|, |p1 - p'_X p_Y| and
    |p2 - p_X p'_Y| with Cov/(2 pi tau^2 e) and Cov/(2 pi sqrt(e) tau^{5/2}).  For
    an empirical law these bounds hold exactly up to the factor
    ``1 + 2 int H^- / Cov``, reported as ``noise_allowance``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    tau = joint.tau
    cov = joint.cov
    if cov < -COV_FLOOR:
        raise ValueError("pairs have negative covariance")
    K = joint.max_variance if K is None else K
    g = _lb_grid(tau, B, n_grid)
    X, Y = np.meshgrid(g, g, indexing="ij")
    logp, r1, r2 = joint.evaluate(X, Y)
    p = np.exp(logp)
    fx, dfx, _ = joint.marginal_x.evaluate(g)
    fy, dfy, _ = joint.marginal_y.evaluate(g)
    # an exactly independent joint has Cov = 0; ratios then use the floor
    cov_safe = max(cov, COV_FLOOR)
    b0, b1 = density_difference_bounds(tau, cov_safe)
    d0 = np.abs(p - np.outer(fx, fy)).max()
    d1 = np.abs(p * r1 - np.outer(dfx, fy)).max()
    d2 = np.abs(p * r2 - np.outer(fx, dfy)).max()
    try:
        _, hneg = hoeffding_integrals(joint.s, joint.t, joint.weights)
        exact = True
    except ValueError:
        hneg, exact = float("nan"), False
    allowance = 2.0 * hneg / cov_safe if exact else 0.0
    r = B * math.sqrt(tau)
    terms = planar_terms(joint, beta, quad2d, region=((-r, r), (-r, r)))
    a, b = math.sqrt(beta), math.sqrt(1 - beta)
    lv = 0.5 * tau
    log_ref = -0.5 * (X * X + Y * Y) / lv - LOG_2PI - math.log(lv)
    return FactorizationAudit(
        B=B, cov=cov, density_ratio=float(d0 / b0), deriv1_ratio=float(d1 / b1),
        deriv2_ratio=float(d2 / b1),
        stated_deriv_ratio=float(max(d1, d2) / stated_derivative_bound(tau, cov_safe)),
        max_differences=(float(d0), float(d1), float(d2)),
        noise_allowance=allowance, m_term=terms.m_term,
        m_bound=f2(tau, K) * (a + b) * B ** 4 * cov_safe * (1.0 + allowance),
        xi_min=float(np.exp((logp - log_ref).min())), hoeffding_exact=exact)


@dataclass
class MomentAudit:
    tau: float
    K: float
    pointwise_ratio: dict       # k -> max of p |rho|^k / (c_{tau,k} p^{2tau})
    moment: dict                # k -> ((E|rho|^k)^{1/k}, bound)
    body: dict                  # B -> (int rho^2 over [-B sqrt tau, B sqrt tau], bound)
    off_region: dict            # B -> (E rho^2 I(|X| > B sqrt tau), Chebyshev bound)
    off_exponent: float         # fitted decay exponent of the off-region term

    @property
    def holds(self) -> bool:
        return (all(r <= 1.0 + 1e-9 for r in self.pointwise_ratio.values())
                and all(v <= bd * (1 + 1e-9) for v, bd in self.moment.values())
                and all(v <= bd for v, bd in self.body.values())
                and all(v <= bd for v, bd in self.off_region.values()))

    def as_dict(self):
        return {"tau": self.tau, "K": self.K,
                "pointwise_ratio": {str(k): v for k, v in self.pointwise_ratio.items()},
                "moment": {str(k): list(v) for k, v in self.moment.items()},
                "body": {str(k): list(v) for k, v in self.body.items()},
                "off_region": {str(k): list(v) for k, v in self.off_region.items()},
                "off_exponent": self.off_exponent, "holds": self.holds}


def _interval_integral(fn, lo, hi, scale, panels_per_scale=4):
    panels = split_panels([(lo, hi)], scale / panels_per_scale)
    x, w = fixed_rule(panels)
    return float(np.dot(w, fn(x)))


def moment_bound_audit(model, k_list=(2, 4), B_list=(1.5, 2.0, 4.0), K: float | None = None,
                       n_grid: int = 1000, quad: QuadratureSpec | None = None) -> MomentAudit:
    """Check the score tail/moment lemmas on one smoothed model.

    ``model`` is a SmoothedDensity or a JointSmoothedDensity; for a joint the
    pointwise bound is checked for both partial scores on an n x n grid
    (n = sqrt(n_grid) rounded) and the remaining checks use the first marginal.
    """
    quad = quad or QuadratureSpec()
    joint = model if isinstance(model, JointSmoothedDensity) else None
    m = joint.marginal_x if joint is not None else model
    tau = m.tau
    K = (joint.max_variance if joint is not None else m.center_variance) if K is None else K
    ratios = {}
    for k in k_list:
        if k < 2 or k % 2:
            raise ValueError("k must be an even integer >= 2")
        logc = math.log(c_tau_k(tau, k))
        if joint is None:
            r = 10.0 * math.sqrt(2 * tau)
            u = np.linspace(m.centers.min() - r, m.centers.max() + r, n_grid)
            logf, rho = m._evaluate(u)
            wide = SmoothedDensity(m.centers, m.weights, 2 * tau, n=m.n)
            with np.errstate(divide="ignore"):
                lhs = logf + k * np.log(np.abs(rho))
            ratios[k] = float(np.exp((lhs - logc - wide.logpdf(u)).max()))
        else:
            side = max(10, int(round(math.sqrt(n_grid))))
            r = 10.0 * math.sqrt(2 * tau)
            gx = np.linspace(joint.s.min() - r, joint.s.max() + r, side)
            gy = np.linspace(joint.t.min() - r, joint.t.max() + r, side)
            X, Y = np.meshgrid(gx, gy, indexing="ij")
            logp, r1, r2 = joint.evaluate(X, Y)
            wide = JointSmoothedDensity(joint.s, joint.t, joint.weights, 2 * tau)
            lw = wide.evaluate(X, Y)[0]
            with np.errstate(divide="ignore"):
                worst = max((logp + k * np.log(np.abs(r1)) - logc - lw).max(),
                            (logp + k * np.log(np.abs(r2)) - logc - lw).max())
            ratios[k] = float(np.exp(worst))
    moments = {}
    for k in k_list:
        res = m.integrate(lambda u, k=k: (lambda lf, rh: np.exp(lf) * np.abs(rh) ** k)(*m._evaluate(u)), quad)
        moments[k] = (res.value ** (1.0 / k), score_moment_bound(tau, k))
    body = {}
    st = math.sqrt(tau)
    for B in B_list:
        if B <= 1:
            raise ValueError("the body bound needs B > 1")
        val = _interval_integral(lambda u: m.score(u) ** 2, -B * st, B * st, st)
        body[B] = (val, f1(tau, K) * B ** 3)
    off = {}
    for B in B_list:
        inside = _interval_integral(
            lambda u: (lambda lf, rh: np.exp(lf) * rh * rh)(*m._evaluate(u)), -B * st, B * st, st)
        total = fisher(m, quad).J
        off[B] = (max(total - inside, 0.0), c_tau_k(tau, 2) * (K + 2 * tau) / (B * B * tau))
    Bs = np.array(sorted(off))
    vals = np.array([off[B][0] for B in Bs])
    exponent = float("nan")
    if Bs.size >= 2 and np.all(vals > 0):
        exponent = float(-np.polyfit(np.log(Bs), np.log(vals), 1)[0])
    return MomentAudit(tau, K, ratios, moments, body, off, exponent)


@dataclass
class ProductAudit:
    B: float
    cross: float
    bound: float
    f4: float
    f5: float
    eps: float

    @property
    def slack(self) -> float:
        return self.bound - self.cross

    @property
    def holds(self) -> bool:
        return self.cross <= self.bound


def product_term_audit(joint: JointSmoothedDensity, B: float, eps: float = DEFAULT_EPS,
                       K: float | None = None, quad2d: Quad2DSpec | None = None) -> ProductAudit:
    """E rho_X(X) rho_Y(Y) against f4 B^4 Cov + f5 / B^(2-eps)."""
    if B < 1:
        raise ValueError("B must be at least 1")
    K = joint.max_variance if K is None else K
    terms = planar_terms(joint, 0.5, quad2d)
    a4, a5 = f4(joint.tau, K), f5(joint.tau, K, eps)
    bound = a4 * B ** 4 * max(joint.cov, 0.0) + a5 * B ** -(2.0 - eps)
    return ProductAudit(B, terms.cross, bound, a4, a5, eps)


# -- sub-additivity with sampling error ---------------------------------------------------------

@dataclass(frozen=True)
class SubadditivityResult:
    beta: float
    J_X: float
    J_Y: float
    J_sum: float
    gap: float
    se: float
    delta: float


def subadditivity_gap(joint: JointSmoothedDensity, beta: float, n_boot: int = 40, seed: int = 0,
                      quad: QuadratureSpec | None = None,
                      quad2d: Quad2DSpec | None = None) -> SubadditivityResult:
    """beta J(X) + (1-beta) J(Y) - J(W) with a bootstrap standard error.

    Each replicate resamples the pairs (multinomially on the component
    weights) and recomputes the three 1-D Fisher informations.
    """
    quad = quad or QuadratureSpec(tol=1e-9)

    def gap_of(w):
        jj = JointSmoothedDensity(joint.s, joint.t, w, joint.tau, n=joint.n)
        jx = fisher(jj.marginal_x, quad).J
        jy = fisher(jj.marginal_y, quad).J
        js = fisher(jj.sum_model(beta), quad).J
        return jx, jy, js

    jx, jy, js = gap_of(joint.weights)
    gap = beta * jx + (1 - beta) * jy - js
    rng = np.random.default_rng([seed, 11])
    reps = []
    for _ in range(n_boot):
        w = rng.multinomial(joint.n, joint.weights).astype(float)
        if w.sum() == 0:
            continue
        a, b_, c = gap_of(w)
        reps.append(beta * a + (1 - beta) * b_ - c)
    se = float(np.std(reps, ddof=1)) if len(reps) > 1 else float("nan")
    d = delta(joint, beta, quad2d) if joint.n_components <= (quad2d or Quad2DSpec()).mc_threshold else float("nan")
    return SubadditivityResult(beta, jx, jy, js, gap, se, d)
