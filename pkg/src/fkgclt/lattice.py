"""Samplers for FKG lattice systems and box-sum statistics.

Three models are supported: independent sites with a finite site law, and the
ferromagnetic Ising model in one and two dimensions.  A configuration has
Boltzmann weight ``exp(J sum_<ij> x_i x_j + h sum_i x_i)`` with ``J >= 0``.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

KINDS = ("independent", "ising1d", "ising2d")
BOUNDARIES = ("periodic", "free")
MAX_SITES = 1 << 28
CHAIN_SIZE = 1024
GIBBS_REPLICAS = 64


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "independent"
    values: tuple = (-1.0, 1.0)
    probs: tuple = (0.5, 0.5)
    J: float = 0.0
    h: float = 0.0
    boundary: str = "periodic"
    burn_in: int = 1000
    thin: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if not self.J >= 0:
            raise ValueError(f"coupling J={self.J} < 0 violates the FKG inequalities")
        if not math.isfinite(self.J) or not math.isfinite(self.h):
            raise ValueError("J and h must be finite")
        if self.burn_in < 0 or self.thin < 1:
            raise ValueError("burn_in must be >= 0 and thin >= 1")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if self.kind == "independent":
            p = np.asarray(self.probs)
            if len(self.values) != len(self.probs) or len(p) == 0:
                raise ValueError("site values and probabilities must match")
            if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ValueError("site probabilities must be nonnegative and sum to 1")

    @property
    def dimension(self) -> int:
        return 2 if self.kind == "ising2d" else 1

    @property
    def exact(self) -> bool:
        """True when configurations are drawn exactly rather than by MCMC."""
        return self.kind == "independent" or (self.kind == "ising1d" and self.h == 0)

    def model_mean(self) -> float | None:
        """Known site mean, or None when it must be estimated."""
        if self.kind == "independent":
            return float(np.dot(self.values, self.probs))
        if self.h == 0:
            return 0.0
        return None

    def as_dict(self):
        return {
            "kind": self.kind, "values": list(self.values), "probs": list(self.probs),
            "J": self.J, "h": self.h, "boundary": self.boundary,
            "burn_in": self.burn_in, "thin": self.thin,
        }


@dataclass(frozen=True)
class LatticeSample:
    """One configuration; ``values`` are centered (raw minus model mean)."""

    extents: tuple
    raw: np.ndarray
    center: float
    spec: ModelSpec
    seed: int
    chain: int

    @property
    def dimension(self) -> int:
        return len(self.extents)

    @property
    def values(self) -> np.ndarray:
        return self.raw.astype(float) - self.center


class LatticeEnsemble(Sequence):
    """Immutable batch of configurations stored as one ``(n, *extents)`` array.

    Indexing yields :class:`LatticeSample` views; estimators use ``raw`` and
    ``center`` directly.
    """

    def __init__(self, raw: np.ndarray, spec: ModelSpec, seed: int, chains: np.ndarray,
                 center: float | None = None):
        raw = np.asarray(raw)
        raw.setflags(write=False)
        self.raw = raw
        self.spec = spec
        self.seed = seed
        self.chains = np.asarray(chains)
        self.extents = tuple(int(e) for e in raw.shape[1:])
        if center is None:
            center = spec.model_mean()
            if center is None:
                center = float(raw.mean(dtype=np.float64))
        self.center = float(center)

    def __len__(self):
        return self.raw.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return LatticeEnsemble(self.raw[i], self.spec, self.seed, self.chains[i], self.center)
        return LatticeSample(self.extents, self.raw[i], self.center, self.spec, self.seed,
                             int(self.chains[i]))

    @property
    def values(self) -> np.ndarray:
        return self.raw.astype(float) - self.center

    @property
    def dimension(self) -> int:
        return len(self.extents)


# -- samplers -----------------------------------------------------------------

def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(chain)])


def _check_extents(spec: ModelSpec, extents) -> tuple:
    if isinstance(extents, (int, np.integer)):
        extents = (int(extents),)
    extents = tuple(int(e) for e in extents)
    if spec.kind == "independent":
        if len(extents) not in (1, 2):
            raise ValueError(f"lattices are 1-D or 2-D, got extents {extents}")
    elif len(extents) != spec.dimension:
        raise ValueError(f"{spec.kind} needs {spec.dimension} extents, got {extents}")
    if any(e < 1 for e in extents):
        raise ValueError("extents must be positive")
    if math.prod(extents) > MAX_SITES:
        raise ValueError(f"lattice of {math.prod(extents)} sites exceeds {MAX_SITES}")
    return extents


def _independent_batch(spec, extents, n, rng):
    vals = np.asarray(spec.values)
    idx = rng.choice(len(vals), size=(n, *extents), p=np.asarray(spec.probs))
    if np.all(vals == np.round(vals)) and np.all(np.abs(vals) < 127):
        return vals.astype(np.int8)[idx]
    return vals[idx]


def _ising1d_exact_batch(spec, length, n, rng):
    # bonds b_i = x_i x_{i+1} are iid with P(b = +1) = e^J / (e^J + e^-J);
    # on a ring they are conditioned on an even number of broken bonds
    p_same = math.exp(spec.J) / (math.exp(spec.J) + math.exp(-spec.J))
    first = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    if length == 1:
        return first[:, None]
    periodic = spec.boundary == "periodic" and length > 2
    n_bonds = length if periodic else length - 1
    bonds = np.where(rng.random((n, n_bonds)) < p_same, 1, -1).astype(np.int8)
    if periodic:
        bad = np.prod(bonds, axis=1, dtype=np.int64) < 0
        while bad.any():
            k = int(bad.sum())
            bonds[bad] = np.where(rng.random((k, n_bonds)) < p_same, 1, -1)
            bad = np.prod(bonds, axis=1, dtype=np.int64) < 0
        bonds = bonds[:, :-1]
    out = np.empty((n, length), dtype=np.int8)
    out[:, 0] = first
    out[:, 1:] = first[:, None] * np.cumprod(bonds, axis=1, dtype=np.int8)
    return out


def _color_classes(extents, periodic):
    """Partition sites so no two neighbours share a class (heat-bath sweeps)."""
    cols = []
    for L in extents:
        c = np.arange(L) % 2
        if periodic and L % 2 == 1 and L > 1:
            c[-1] = 2
        cols.append(c)
    grid = np.zeros(extents, dtype=int)
    for axis, c in enumerate(cols):
        shape = [1] * len(extents)
        shape[axis] = -1
        grid = grid * 3 + c.reshape(shape)
    return [grid == k for k in np.unique(grid)]


def _neighbour_sum(x, periodic):
    # x has shape (R, *extents); sum over nearest neighbours on each axis
    s = np.zeros(x.shape, dtype=np.int16)
    for axis in range(1, x.ndim):
        L = x.shape[axis]
        if L == 1:
            continue
        if periodic:
            if L == 2:
                s += np.roll(x, 1, axis=axis)
            else:
                s += np.roll(x, 1, axis=axis)
                s += np.roll(x, -1, axis=axis)
        else:
            fwd = [slice(None)] * x.ndim
            bwd = [slice(None)] * x.ndim
            fwd[axis] = slice(1, None)
            bwd[axis] = slice(None, -1)
            s[tuple(fwd)] += x[tuple(bwd)]
            s[tuple(bwd)] += x[tuple(fwd)]
    return s


def _heat_bath_batch(spec, extents, n, rng):
    periodic = spec.boundary == "periodic"
    classes = _color_classes(extents, periodic)
    replicas = min(GIBBS_REPLICAS, n)
    per_replica = -(-n // replicas)
    x = np.where(rng.random((replicas, *extents)) < 0.5, 1, -1).astype(np.int8)

    def sweep():
        for mask in classes:
            field_ = spec.J * _neighbour_sum(x, periodic) + spec.h
            p_up = 1.0 / (1.0 + np.exp(-2.0 * field_))
            new = np.where(rng.random(x.shape) < p_up, 1, -1).astype(np.int8)
            x[:, mask] = new[:, mask]

    for _ in range(spec.burn_in):
        sweep()
    out = np.empty((per_replica, replicas, *extents), dtype=np.int8)
    for k in range(per_replica):
        for _ in range(spec.thin):
            sweep()
        out[k] = x
    # replica-major order keeps each replica's draws contiguous
    return np.swapaxes(out, 0, 1).reshape(-1, *extents)[:n]


def sample_system(spec: ModelSpec, extents, n_samples: int, seed: int = 0) -> LatticeEnsemble:
    """Draw ``n_samples`` configurations.

    Configurations are generated in chains of up to ``CHAIN_SIZE``; chain ``c``
    uses a generator seeded by ``(seed, c)``.  The 1-D zero-field Ising chain
    is sampled exactly through its bond variables; other Ising cases use
    heat-bath sweeps (``spec.burn_in`` sweeps, then ``spec.thin`` sweeps
    between retained configurations on each of up to 64 replicas).
    """
    extents = _check_extents(spec, extents)
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if n_samples * math.prod(extents) > MAX_SITES * 4:
        raise ValueError("requested ensemble is too large")
    batches, chains = [], []
    for c, start in enumerate(range(0, n_samples, CHAIN_SIZE)):
        k = min(CHAIN_SIZE, n_samples - start)
        rng = chain_rng(seed, c)
        if spec.kind == "independent":
            b = _independent_batch(spec, extents, k, rng)
        elif spec.exact:
            b = _ising1d_exact_batch(spec, extents[0], k, rng)
        else:
            b = _heat_bath_batch(spec, extents, k, rng)
        batches.append(b)
        chains.append(np.full(k, c, dtype=np.int64))
    return LatticeEnsemble(np.concatenate(batches), spec, seed, np.concatenate(chains))


# -- boxes and sums -------------------------------------------------------------

@dataclass(frozen=True)
class BoxSpec:
    """Box of ``corner[i]`` sites along axis i, starting at ``offset``."""

    corner: tuple
    offset: tuple | None = None

    def __post_init__(self):
        corner = (self.corner,) if isinstance(self.corner, (int, np.integer)) else self.corner
        corner = tuple(int(c) for c in corner)
        if any(c < 1 for c in corner):
            raise ValueError("box sides must be positive integers")
        offset = self.offset
        if offset is None:
            offset = (0,) * len(corner)
        elif isinstance(offset, (int, np.integer)):
            offset = (int(offset),)
        offset = tuple(int(o) for o in offset)
        if len(offset) != len(corner) or any(o < 0 for o in offset):
            raise ValueError("offset must be nonnegative with one entry per axis")
        object.__setattr__(self, "corner", corner)
        object.__setattr__(self, "offset", offset)

    @property
    def volume(self) -> int:
        return math.prod(self.corner)

    def slices(self):
        return tuple(slice(o, o + c) for o, c in zip(self.offset, self.corner))

    def fits(self, extents) -> bool:
        return len(extents) == len(self.corner) and all(
            o + c <= e for o, c, e in zip(self.offset, self.corner, extents))


@dataclass(frozen=True)
class SampleSet:
    """Normalized box sums U_x, one per configuration."""

    draws: np.ndarray
    volume: int
    mean: float = field(init=False)
    variance: float = field(init=False)

    def __post_init__(self):
        d = np.array(self.draws, dtype=float).ravel()
        if d.size < 2:
            raise ValueError("a SampleSet needs at least two draws")
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)
        object.__setattr__(self, "mean", float(d.mean()))
        object.__setattr__(self, "variance", float(d.var(ddof=1)))

    @property
    def v(self) -> float:
        """Estimate of v(x) = Var(sum of X_u over the box).

        ``v / volume`` is exactly ``variance`` since U_x = sum / sqrt(|x|).
        """
        return self.variance * self.volume

    def __len__(self):
        return self.draws.size


def raw_box_sums(samples: LatticeEnsemble, box: BoxSpec) -> np.ndarray:
    """Unnormalized centered sums over ``box`` for every configuration."""
    if not box.fits(samples.extents):
        raise ValueError(f"box {box} does not fit inside lattice {samples.extents}")
    block = samples.raw[(slice(None),) + box.slices()]
    axes = tuple(range(1, block.ndim))
    if np.issubdtype(block.dtype, np.integer):
        s = block.sum(axis=axes, dtype=np.int64).astype(float)
    else:
        s = block.sum(axis=axes, dtype=float)
    return s - box.volume * samples.center


def box_sums(samples: LatticeEnsemble, box: BoxSpec) -> SampleSet:
    """U_x = (sum of centered sites in the box) / sqrt(|x|)."""
    return SampleSet(raw_box_sums(samples, box) / math.sqrt(box.volume), box.volume)


# -- covariance profile -----------------------------------------------------------

@dataclass(frozen=True)
class CovarianceProfile:
    offsets: np.ndarray          # (M, d) integer offsets
    cov: np.ndarray
    se: np.ndarray
    radii: np.ndarray
    K: np.ndarray                # K(R) for R in radii
    K_se: np.ndarray
    susceptibility: float
    susceptibility_se: float
    truncation_radius: int
    slow_variation: dict         # lambda -> array of K(lambda R)/K(R)

    def cov_at(self, offset) -> tuple[float, float]:
        offset = np.atleast_1d(offset)
        hit = np.all(self.offsets == offset, axis=1)
        i = int(np.flatnonzero(hit)[0])
        return float(self.cov[i]), float(self.se[i])


def _cov_and_se(a, b):
    n = a.shape[0]
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    prod = da * db
    cov = prod.sum(axis=0) / (n - 1)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n)
    return cov, se


def covariance_profile(samples: LatticeEnsemble, max_radius: int,
                       spatial: bool = False) -> CovarianceProfile:
    """Cov(X_0, X_u) across configurations for all offsets with |u|_inf <= R.

    The reference site is the origin under periodic boundaries and the
    lattice midpoint otherwise.  ``spatial=True`` (periodic only) averages
    the estimator over every reference site; standard errors then ignore the
    spatial correlation and are optimistic.
    """
    n = len(samples)
    if n < 2:
        raise ValueError("need at least two configurations")
    ext = samples.extents
    d = len(ext)
    periodic = samples.spec.boundary == "periodic"
    R = int(max_radius)
    if R < 0:
        raise ValueError("max_radius must be nonnegative")
    if periodic:
        if any(2 * R + 1 > e for e in ext):
            raise ValueError(f"radius {R} too large for periodic lattice {ext}")
        ref = (0,) * d
    else:
        ref = tuple(e // 2 for e in ext)
        if any(r - R < 0 or r + R >= e for r, e in zip(ref, ext)):
            raise ValueError(f"radius {R} too large for lattice {ext}")
    if spatial and not periodic:
        raise ValueError("spatial averaging requires periodic boundaries")

    grids = np.meshgrid(*[np.arange(-R, R + 1)] * d, indexing="ij")
    offsets = np.stack([g.ravel() for g in grids], axis=1)
    x = samples.raw.astype(float)
    if spatial:
        cov = np.empty(len(offsets))
        se = np.empty(len(offsets))
        xc = x - x.mean(axis=0)
        for k, off in enumerate(offsets):
            shifted = np.roll(xc, shift=tuple(-off), axis=tuple(range(1, d + 1)))
            prod = (xc * shifted).reshape(n, -1).mean(axis=1)
            cov[k] = prod.sum() / (n - 1)
            se[k] = prod.std(ddof=1) / math.sqrt(n)
    else:
        x0 = x[(slice(None),) + ref][:, None]
        idx = [(np.asarray(ref)[None, :] + offsets) % np.asarray(ext)[None, :]]
        cols = x[(slice(None),) + tuple(idx[0].T)]
        cov, se = _cov_and_se(np.broadcast_to(x0, cols.shape), cols)

    radius_of = np.abs(offsets).max(axis=1)
    radii = np.arange(R + 1)
    K = np.array([cov[radius_of <= r].sum() for r in radii])
    # SE of K(R) from the per-configuration statistic (x0 - m0)(S_R - m_R)
    if spatial:
        K_se = np.array([math.sqrt((se[radius_of <= r] ** 2).sum()) for r in radii])
    else:
        xr = x[(slice(None),) + ref]
        K_se = np.empty(R + 1)
        for r in radii:
            cols_r = cols[:, radius_of <= r].sum(axis=1)
            _, s = _cov_and_se(xr, cols_r)
            K_se[r] = s
    ratios = {}
    for lam in (2, 4):
        rs = radii[(radii >= 1) & (lam * radii <= R)]
        ratios[lam] = K[lam * rs] / K[rs] if rs.size else np.empty(0)
    return CovarianceProfile(offsets, cov, se, radii, K, K_se, float(K[-1]), float(K_se[-1]),
                             R, ratios)


# -- positive quadrant dependence ---------------------------------------------------

@dataclass(frozen=True)
class CovarianceCheck:
    name: str
    cov: float
    se: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.cov <= self.bound + 3 * self.se


@dataclass(frozen=True)
class QuadrantDependence:
    min_H: float
    min_se: float
    location: tuple
    s_grid: np.ndarray
    t_grid: np.ndarray
    H: np.ndarray
    se: np.ndarray
    cov: float
    checks: list
    reliable: np.ndarray | None = None

    @property
    def min_z(self) -> float:
        """Smallest H / SE over grid points where the normal approximation is usable.

        A point counts when all four quadrant cells hold at least 5
        observations; with fewer the plug-in SE is unreliable.
        """
        ok = self.se > 0
        if self.reliable is not None:
            ok &= self.reliable
        return float((self.H[ok] / self.se[ok]).min()) if ok.any() else 0.0


def default_test_functions():
    """Increasing smooth test functions ``f(x, c)`` with sup |f'| = ``lip(c)``."""
    return [
        ("tanh", lambda x, c: np.tanh(x / c), lambda c: 1.0 / c),
        ("arctan", lambda x, c: np.arctan(x / c), lambda c: 1.0 / c),
        ("logistic", lambda x, c: 1.0 / (1.0 + np.exp(-x / c)), lambda c: 0.25 / c),
        ("identity", lambda x, c: x, lambda c: 1.0),
    ]


def quadrant_dependence(pairs, grid=None, n_grid: int = 25, test_functions=None,
                        quantile_range=(0.01, 0.99)) -> QuadrantDependence:
    """Empirical H(s, t) = P(S>=s, T>=t) - P(S>=s) P(T>=t) on a grid.

    Standard errors come from the influence function of H at each grid
    point.  The default grid is the ``n_grid`` empirical quantiles of each
    coordinate over ``quantile_range``.
    """
    pairs = np.asarray(pairs, dtype=float)
    S, T = pairs[:, 0], pairs[:, 1]
    n = S.size
    if n < 100:
        raise ValueError(f"need at least 100 pairs, got {n}")
    if grid is None:
        q = np.linspace(*quantile_range, n_grid)
        s_grid = np.unique(np.quantile(S, q))
        t_grid = np.unique(np.quantile(T, q))
    else:
        s_grid, t_grid = (np.asarray(g, dtype=float) for g in grid)
    A = (S[:, None] >= s_grid[None, :]).astype(float)     # n x ns
    B = (T[:, None] >= t_grid[None, :]).astype(float)     # n x nt
    pa = A.mean(axis=0)
    pb = B.mean(axis=0)
    pab = A.T @ B / n
    H = pab - np.outer(pa, pb)
    # influence function of H: psi = 1_A 1_B - pb 1_A - pa 1_B, centered
    PA, PB = np.meshgrid(pa, pb, indexing="ij")
    second = pab * (1 - PA - PB) ** 2 + (PA - pab) * PB ** 2 + (PB - pab) * PA ** 2
    var = np.maximum(second - (pab - 2 * PA * PB) ** 2, 0.0)
    se = np.sqrt(var / n)
    k = np.unravel_index(np.argmin(H), H.shape)
    cov = float(np.cov(S, T)[0, 1])

    checks = []
    sd_s, sd_t = S.std() or 1.0, T.std() or 1.0
    for name, fn, lip in (test_functions or default_test_functions()):
        fs, gt = fn(S, sd_s), fn(T, sd_t)
        prod = (fs - fs.mean()) * (gt - gt.mean())
        c = float(prod.sum() / (n - 1))
        checks.append(CovarianceCheck(name, c, float(prod.std(ddof=1) / math.sqrt(n)),
                                      lip(sd_s) * lip(sd_t) * cov))
    cells = np.minimum.reduce([pab, PA - pab, PB - pab, 1 - PA - PB + pab])
    return QuadrantDependence(float(H[k]), float(se[k]), (float(s_grid[k[0]]), float(t_grid[k[1]])),
                              s_grid, t_grid, H, se, cov, checks, reliable=cells * n >= 5)


def hoeffding_integrals(s, t, weights=None, max_levels: int = 4000):
    """Exact integrals of the empirical H over the plane.

    Returns ``(int H, int max(-H, 0))``.  The first equals the empirical
    covariance (Hoeffding's identity); the second measures how far the
    empirical law is from positive quadrant dependence.  H is piecewise
    constant on the grid of distinct values, so both are finite sums.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    w = np.full(s.size, 1.0 / s.size) if weights is None else np.asarray(weights, float) / np.sum(weights)
    su, si = np.unique(s, return_inverse=True)
    tu, ti = np.unique(t, return_inverse=True)
    if su.size > max_levels or tu.size > max_levels:
        raise ValueError("too many distinct values for the exact Hoeffding integral")
    joint = np.zeros((su.size, tu.size))
    np.add.at(joint, (si, ti), w)
    # P(S >= s_j, T >= t_k)
    tail = joint[::-1, ::-1].cumsum(axis=0).cumsum(axis=1)[::-1, ::-1]
    ps = tail[:, 0]
    pt = tail[0, :]
    H = tail - np.outer(ps, pt)
    ds = np.diff(su)
    dt = np.diff(tu)
    cell = H[1:, 1:] * np.outer(ds, dt)
    return float(cell.sum()), float(np.maximum(-cell, 0).sum())
