"""Convergence sweeps over growing boxes and the sub-additive recursion audit.

Configs are flat ``key = value`` text files (``#`` starts a comment) with
namespaced keys such as ``model.kind`` or ``sweep.sizes``; see
``CONFIG_KEYS`` for the full list.  Outputs are CSV and JSON with every float
written to 17 significant digits, so identical configs give identical files.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .inequalities import DEFAULT_EPS, JointSmoothedDensity, Quad2DSpec, theorem_gap
from .infotheory import _simpson, info_functionals
from .lattice import (
    BoxSpec,
    LatticeEnsemble,
    ModelSpec,
    box_sums,
    covariance_profile,
    raw_box_sums,
    sample_system,
)
from .quadrature import QuadratureSpec
from .smoothing import SmoothedDensity, compress, fisher, smooth, tail_profile

OUTPUT_ENV = "FKGCLT_OUTPUT_DIR"
DEFAULT_OUTPUT = "results"
DEFAULT_SIZES = tuple(2 ** k for k in range(11))
TAIL_R = (0.0, 1.0, 2.0, 3.0, 4.0)


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT)


# -- config --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=lambda: ModelSpec("ising1d", J=0.5))
    tau: float = 1.0
    sizes: tuple = DEFAULT_SIZES
    n_samples: int = 10_000
    seed: int = 0
    extents: tuple | None = None
    n_boot: int = 40
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    t_max: float = 1e3
    n_grid: int = 200
    kappa_taus: tuple = tuple(float(x) for x in np.geomspace(1e-2, 1e3, 31))
    covariance_radius: int = 32
    audit_pairs: tuple = ((64, 64),)
    audit_eps: float = DEFAULT_EPS
    audit_mc_threshold: int = 100_000
    output_dir: str = field(default_factory=default_output_dir)
    timing: bool = False
    dump_samples: bool = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or sizes[0] < 1 or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("box-size schedule must be positive and strictly increasing")
        object.__setattr__(self, "sizes", sizes)
        if self.n_samples < 1000:
            raise ValueError("sweeps need at least 1000 samples per size")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_boot < 2:
            raise ValueError("need at least two bootstrap replicates")
        pairs = tuple((int(m), int(n)) for m, n in self.audit_pairs)
        for m, n in pairs:
            if n < 1 or m < n:
                raise ValueError(f"audit pair ({m}, {n}) must satisfy m >= n >= 1")
        object.__setattr__(self, "audit_pairs", pairs)
        taus = np.asarray(self.kappa_taus, dtype=float)
        if taus.size < 2 or np.any(taus <= 0) or not np.allclose(np.diff(np.log(taus)),
                                                                 np.log(taus[1] / taus[0])):
            raise ValueError("kappa taus must be at least two positive, log-spaced values")
        object.__setattr__(self, "kappa_taus", tuple(float(x) for x in taus))
        if self.extents is not None:
            object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))

    def lattice_extents(self, need: int | None = None) -> tuple:
        if self.extents is not None:
            return self.extents
        need = need or self.sizes[-1]
        if self.model.dimension == 1:
            return (need,)
        side = math.isqrt(need - 1) + 1
        return (side, side)

    def as_dict(self):
        return {
            "model": self.model.as_dict(), "tau": self.tau, "sizes": list(self.sizes),
            "n_samples": self.n_samples, "seed": self.seed,
            "extents": list(self.extents) if self.extents else None,
            "n_boot": self.n_boot,
            "quad": {"rule": self.quad.rule, "nodes": self.quad.nodes,
                     "half_width": self.quad.half_width, "tol": self.quad.tol},
            "t_max": self.t_max, "n_grid": self.n_grid, "kappa_taus": list(self.kappa_taus),
            "covariance_radius": self.covariance_radius,
            "audit_pairs": [list(p) for p in self.audit_pairs], "audit_eps": self.audit_eps,
            "audit_mc_threshold": self.audit_mc_threshold,
        }


def _floats(v):
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v):
    return tuple(int(x) for x in v.split(",") if x.strip())


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _pairs(v):
    out = []
    for item in v.split(","):
        item = item.strip()
        if item:
            m, n = item.lower().split("x")
            out.append((int(m), int(n)))
    return tuple(out)


# key -> (section, field, parser)
CONFIG_KEYS = {
    "model.kind": ("model", "kind", str.strip),
    "model.J": ("model", "J", float),
    "model.h": ("model", "h", float),
    "model.boundary": ("model", "boundary", str.strip),
    "model.values": ("model", "values", _floats),
    "model.probs": ("model", "probs", _floats),
    "model.burn_in": ("model", "burn_in", int),
    "model.thin": ("model", "thin", int),
    "sweep.tau": ("top", "tau", float),
    "sweep.sizes": ("top", "sizes", _ints),
    "sweep.samples": ("top", "n_samples", int),
    "sweep.seed": ("top", "seed", int),
    "sweep.extents": ("top", "extents", _ints),
    "sweep.bootstrap": ("top", "n_boot", int),
    "sweep.covariance_radius": ("top", "covariance_radius", int),
    "quad.rule": ("quad", "rule", str.strip),
    "quad.nodes": ("quad", "nodes", int),
    "quad.half_width": ("quad", "half_width", float),
    "quad.tol": ("quad", "tol", float),
    "debruijn.t_max": ("top", "t_max", float),
    "debruijn.n_grid": ("top", "n_grid", int),
    "kappa.taus": ("top", "kappa_taus", _floats),
    "audit.pairs": ("top", "audit_pairs", _pairs),
    "audit.eps": ("top", "audit_eps", float),
    "audit.mc_threshold": ("top", "audit_mc_threshold", int),
    "output.dir": ("top", "output_dir", str.strip),
    "output.timing": ("top", "timing", _bool),
    "output.dump_samples": ("top", "dump_samples", _bool),
}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a dict of raw strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in CONFIG_KEYS:
            raise ValueError(f"line {lineno}: unknown config key {k!r}")
        out[k] = v
    return out


def build_config(entries: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply raw ``key -> string`` entries on top of ``base``."""
    base = base or ExperimentConfig()
    groups = {"model": {}, "quad": {}, "top": {}}
    for k, v in entries.items():
        if k not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {k!r}")
        section, name, parse = CONFIG_KEYS[k]
        groups[section][name] = parse(v)
    model = replace(base.model, **groups["model"]) if groups["model"] else base.model
    quad = replace(base.quad, **groups["quad"]) if groups["quad"] else base.quad
    return replace(base, model=model, quad=quad, **groups["top"])


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Config from an optional file plus ``key=value`` override strings."""
    entries = {}
    if path is not None:
        entries.update(parse_config_text(Path(path).read_text()))
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        k, v = (s.strip() for s in item.split("=", 1))
        entries[k] = v
    return build_config(entries)


# -- output ----------------------------------------------------------------------------

def fmt(x) -> str:
    """17-significant-digit float text (round-trips exactly)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_text(obj, indent=0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_text(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_json_text(v, indent + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _json_text(v, indent + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return format(x, ".17g")
    return json.dumps(str(obj))


def dumps_json(obj) -> str:
    """JSON with floats at 17 significant digits (NaN/Infinity as in Python's json)."""
    return _json_text(obj) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj))


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    Path(path).write_text(buf.getvalue())


# -- statistics helpers ------------------------------------------------------------------

def _bootstrap_jst(draw_sets, tau, quad, n_boot, rng):
    """Jointly resample configurations; return (n_boot, k) J_st replicates."""
    n = draw_sets[0].size
    comp = []
    for d in draw_sets:
        centers, inv = np.unique(d, return_inverse=True)
        comp.append((centers, inv))
    out = np.empty((n_boot, len(draw_sets)))
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        for j, (centers, inv) in enumerate(comp):
            w = np.bincount(inv[idx], minlength=centers.size).astype(float)
            keep = w > 0
            model = SmoothedDensity(centers[keep], w[keep] / n, tau, n=n)
            out[b, j] = fisher(model, quad).J_st
    return out


def _shapes(n, extents):
    """Box shapes of volume n that fit the lattice (all factorizations in 2-D)."""
    if len(extents) == 1:
        return [(n,)] if n <= extents[0] else []
    return [(a, n // a) for a in range(1, n + 1)
            if n % a == 0 and a <= extents[0] and n // a <= extents[1]]


def _trend_ok(values, ses, k=2.0) -> bool:
    v = np.asarray(values, dtype=float)
    s = np.asarray(ses, dtype=float)
    return bool(np.all(v[1:] <= v[:-1] + k * np.sqrt(s[1:] ** 2 + s[:-1] ** 2)))


def _log_simpson(taus, vals):
    """int vals dtau over a log-uniform grid."""
    h = float(np.log(taus[1] / taus[0]))
    return _simpson(np.asarray(vals) * taus, h)


# -- sweep -----------------------------------------------------------------------------

@dataclass
class SizeRecord:
    n: int
    shape: tuple
    J_st: float
    J_st_se: float
    J_st_error: float
    variance: float
    D_direct: float
    D_lo: float
    D_hi: float
    TV: float
    sup: float
    tv_bound: float
    sup_bound: float
    tail: dict
    kappa_row: list
    runtime_ms: float

    def as_dict(self):
        return dict(self.__dict__, shape=list(self.shape))


@dataclass
class SweepReport:
    config: dict
    records: list
    kappa_taus: list
    kappa: list                 # kappa[i][j] = max_{m >= n_i} J_st(V_m + Z^{tau_j})
    kappa_integral: list        # partial int kappa/(1+tau) over the kappa grid
    kappa_integral_tail: list
    susceptibility: float
    susceptibility_se: float
    verdicts: dict

    @property
    def sizes(self):
        return [r.n for r in self.records]

    def csv_rows(self):
        return [(r.n, r.J_st, r.J_st_se, r.D_lo, r.D_hi, r.TV, r.runtime_ms) for r in self.records]

    def as_dict(self):
        return {"config": self.config, "records": [r.as_dict() for r in self.records],
                "kappa_taus": self.kappa_taus, "kappa": self.kappa,
                "kappa_integral": self.kappa_integral,
                "kappa_integral_tail": self.kappa_integral_tail,
                "susceptibility": self.susceptibility,
                "susceptibility_se": self.susceptibility_se, "verdicts": self.verdicts}


SWEEP_HEADER = ("n", "Jst", "Jst_se", "D_lo", "D_hi", "TV", "runtime_ms")


def sweep_ensemble(config: ExperimentConfig) -> LatticeEnsemble:
    ext = config.lattice_extents()
    return sample_system(config.model, ext, config.n_samples, config.seed)


def run_sweep(config: ExperimentConfig, write: bool = True, ensemble=None) -> SweepReport:
    """J_st, relative entropy, distances and kappa along the box schedule.

    All sizes are read from one ensemble (nested boxes anchored at the
    origin).  In 2-D every factorization n = a b fitting the lattice is
    evaluated and the largest J_st is kept.
    """
    ens = ensemble if ensemble is not None else sweep_ensemble(config)
    ext = ens.extents
    for n in config.sizes:
        if not _shapes(n, ext):
            raise ValueError(f"box size {n} does not fit lattice {ext}")
    rng = np.random.default_rng([config.seed, 2])
    quad = config.quad
    tau = config.tau
    records = []
    raw_rows = []
    for n in config.sizes:
        t0 = time.perf_counter()
        best = None
        for shape in _shapes(n, ext):
            ss = box_sums(ens, BoxSpec(shape))
            fr = fisher(smooth(ss, tau), quad)
            if best is None or fr.J_st > best[1].J_st:
                best = (shape, fr, ss)
        shape, fr, ss = best
        draws = ss.draws
        se = float(np.std(_bootstrap_jst([draws], tau, quad, config.n_boot, rng)[:, 0], ddof=1))
        info = info_functionals(draws, tau, quad, route="both", t_max=config.t_max,
                                n_grid=config.n_grid)
        lo, hi = info.debruijn.interval
        tp = tail_profile(smooth(draws, tau), TAIL_R)
        row = [fisher(SmoothedDensity(*compress(draws), s, n=draws.size), quad).J_st
               for s in config.kappa_taus]
        raw_rows.append(row)
        elapsed = (time.perf_counter() - t0) * 1e3 if config.timing else float("nan")
        dist = info.distances
        records.append(SizeRecord(
            n=n, shape=tuple(shape), J_st=fr.J_st, J_st_se=se, J_st_error=fr.error * fr.sigma2,
            variance=float(np.mean((draws - draws.mean()) ** 2)),
            D_direct=info.D_direct, D_lo=lo, D_hi=hi, TV=dist.TV, sup=dist.sup,
            tv_bound=dist.tv_bound, sup_bound=dist.sup_bound,
            tail={"R": list(TAIL_R), "profile": tp.profile.tolist(),
                  "envelope_exponent": tp.envelope_exponent},
            kappa_row=row, runtime_ms=elapsed))
        if config.dump_samples and write:
            out = Path(config.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_csv(out / f"samples_n{n}.csv", ("U",), [(float(x),) for x in draws])

    taus = np.asarray(config.kappa_taus, dtype=float)
    raw = np.asarray(raw_rows)
    kappa = np.maximum.accumulate(raw[::-1], axis=0)[::-1]
    var = np.asarray([r.variance for r in records])
    var_sup = np.maximum.accumulate(var[::-1])[::-1]
    kint = [_log_simpson(taus, k / (1.0 + taus)) for k in kappa]
    kint_tail = [float(v * math.log1p(1.0 / taus[-1])) for v in var_sup]

    jst = [r.J_st for r in records]
    jse = [r.J_st_se for r in records]
    # kappa rows at the base tau share the same noise scale as J_st
    scale = np.asarray(jse)[:, None] * np.ones_like(raw)
    verdicts = {
        "jst_nonincreasing": _trend_ok(jst, jse),
        "D_nonincreasing": bool(all(b.D_lo <= a.D_hi for a, b in zip(records, records[1:]))),
        "kappa_raw_nonincreasing": bool(np.all(
            raw[1:] <= raw[:-1] + 2 * np.sqrt(scale[1:] ** 2 + scale[:-1] ** 2))),
        "kappa_integral_finite_decreasing": bool(np.all(np.isfinite(kint))
                                             and np.all(np.diff(kint) <= 1e-12)),
        "shimizu_holds": bool(all(r.TV <= r.tv_bound and r.sup <= r.sup_bound for r in records)),
        "final_Jst": jst[-1],
    }
    chi, chi_se = _susceptibility(ens, config)
    report = SweepReport(config.as_dict(), records, taus.tolist(), kappa.tolist(), kint,
                         kint_tail, chi, chi_se, verdicts)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "sweep.csv", SWEEP_HEADER, report.csv_rows())
        write_json(out / "sweep.json", report.as_dict())
    return report


def _susceptibility(ens, config):
    ext = ens.extents
    periodic = ens.spec.boundary == "periodic"
    lim = min((e - 1) // 2 for e in ext) if periodic else min(e // 2 - 1 for e in ext)
    R = max(0, min(config.covariance_radius, lim))
    # a few thousand configurations are plenty for the profile
    sub = ens[: min(len(ens), 20_000)]
    prof = covariance_profile(sub, R)
    return prof.susceptibility, prof.susceptibility_se


# -- recursion audit ----------------------------------------------------------------------

@dataclass
class AuditRecord:
    m: int
    n: int
    beta: float
    J_st_sum: float
    J_st_m: float
    J_st_n: float
    recursion_rhs: float
    d_emp: float
    d_se: float
    c_mn: float
    c_mn_se: float
    delta: float
    subadditivity_gap: float
    min_C: float | None
    exponent: float
    identity_residual: float

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class AuditSweepReport:
    config: dict
    records: list
    d_of_m: dict
    ladder: list
    verdicts: dict

    def as_dict(self):
        return {"config": self.config, "records": [r.as_dict() for r in self.records],
                "d_of_m": {str(k): v for k, v in self.d_of_m.items()},
                "ladder": self.ladder, "verdicts": self.verdicts}


AUDIT_HEADER = ("m", "n", "beta", "Jst_sum", "Jst_m", "Jst_n", "rhs", "d", "d_se",
                "c_mn", "c_mn_se", "delta", "min_C")


def _split_boxes(m, n, ext):
    """Adjacent disjoint boxes of volumes m and n, cut along the last axis."""
    if len(ext) == 1:
        if m + n > ext[0]:
            raise ValueError(f"boxes {m} + {n} do not fit lattice {ext}")
        return BoxSpec((m,)), BoxSpec((n,), (m,))
    # 2-D: a common first side a with a | m, a | n
    for a in range(min(ext[0], m), 0, -1):
        if m % a == 0 and n % a == 0 and (m + n) // a <= ext[1]:
            return BoxSpec((a, m // a)), BoxSpec((a, n // a), (0, m // a))
    raise ValueError(f"cannot split a box of volume {m + n} into {m} and {n} on {ext}")


def run_audit(config: ExperimentConfig, pairs=None, write: bool = True, ensemble=None,
              ladder: bool = True) -> AuditSweepReport:
    """Both sides of the box recursion for each (m, n) plus a (2^k, 2^k) ladder."""
    pairs = tuple(pairs) if pairs is not None else config.audit_pairs
    for m, n in pairs:
        if m < n:
            raise ValueError(f"audit pair ({m}, {n}) needs m >= n")
    ladder_pairs = []
    if ladder:
        ladder_pairs = [(k, k) for k in config.sizes
                        if k & (k - 1) == 0 and 2 * k <= (config.sizes[-1])]
    need = max([m + n for m, n in list(pairs) + ladder_pairs] + [2])
    if ensemble is None:
        ext = config.extents or ((need,) if config.model.dimension == 1
                                 else config.lattice_extents(need))
        ensemble = sample_system(config.model, ext, config.n_samples, config.seed)
    ens = ensemble
    rng = np.random.default_rng([config.seed, 3])
    q2 = Quad2DSpec(mc_threshold=config.audit_mc_threshold, seed=config.seed)

    def one(m, n):
        by, bz = _split_boxes(m, n, ens.extents)
        sy = raw_box_sums(ens, by)
        sz = raw_box_sums(ens, bz)
        uy, uz = sy / math.sqrt(m), sz / math.sqrt(n)
        ux = (sy + sz) / math.sqrt(m + n)
        beta = m / (m + n)
        boot = _bootstrap_jst([ux, uy, uz], config.tau, config.quad, config.n_boot, rng)
        js = [fisher(smooth(u, config.tau), config.quad).J_st for u in (ux, uy, uz)]
        rhs = beta * js[1] + (1 - beta) * js[2]
        d_rep = boot[:, 0] - beta * boot[:, 1] - (1 - beta) * boot[:, 2]
        dy, dz = uy - uy.mean(), uz - uz.mean()
        c = float(np.dot(dy, dz) / (uy.size - 1))
        c_se = float(np.std(dy * dz, ddof=1) / math.sqrt(uy.size))
        uniq, counts = np.unique(np.column_stack([uy, uz]), axis=0, return_counts=True)
        joint = JointSmoothedDensity(uniq[:, 0], uniq[:, 1], counts / counts.sum(),
                                     config.tau, n=uy.size)
        # weakly coupled far boxes can show a negative covariance from noise alone
        rep = theorem_gap(joint, beta, eps=config.audit_eps, quad2d=q2, strict=False)
        return AuditRecord(m, n, beta, js[0], js[1], js[2], rhs, js[0] - rhs,
                           float(np.std(d_rep, ddof=1)), c, c_se, rep.delta, rep.gap,
                           rep.min_C, rep.exponent, rep.identity_residual)

    records = [one(m, n) for m, n in pairs]
    d_of_m = {}
    for r in records:
        cur = d_of_m.get(r.m)
        if cur is None or r.d_emp > cur[0]:
            d_of_m[r.m] = (r.d_emp, r.d_se)
    ms = sorted(d_of_m)
    ladder_out = []
    for m, n in ladder_pairs:
        r = one(m, n)
        ladder_out.append({"k": int(math.log2(m)), "m": m, "J_st_2m": r.J_st_sum,
                           "J_st_m": r.J_st_m, "gap": r.J_st_m - r.J_st_sum,
                           "delta": r.delta, "c_mn": r.c_mn})
    verdicts = {
        # only the positive part of d matters for the recursion
        "d_decreasing": _trend_ok([max(d_of_m[m][0], 0.0) for m in ms], [d_of_m[m][1] for m in ms])
        if len(ms) > 1 else True,
        "d_within_noise": bool(all(r.d_emp <= 2 * r.d_se for r in records)),
        "delta_nonnegative": bool(all(r.delta >= -1e-10 for r in records)),
        "covariance_positive": bool(all(r.c_mn >= -3 * r.c_mn_se for r in records)),
    }
    report = AuditSweepReport(config.as_dict(), records,
                              {m: list(d_of_m[m]) for m in ms}, ladder_out, verdicts)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = [(r.m, r.n, r.beta, r.J_st_sum, r.J_st_m, r.J_st_n, r.recursion_rhs, r.d_emp,
                 r.d_se, r.c_mn, r.c_mn_se, r.delta,
                 float("nan") if r.min_C is None else r.min_C) for r in records]
        write_csv(out / "audit.csv", AUDIT_HEADER, rows)
        write_json(out / "audit.json", report.as_dict())
    return report
