"""Command-line entry point: ``fkgclt <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .inequalities import (
    DEFAULT_EPS,
    factorization_bounds,
    joint_smooth,
    moment_bound_audit,
    product_term_audit,
    score_of_sum_check,
    theorem_gap,
)
from .infotheory import info_functionals
from .lattice import ModelSpec, sample_system
from .quadrature import QuadratureSpec
from .smoothing import fisher, smooth

EXIT_AUDIT_FAILED = 2
IDENTITY_TOL = 1e-5


def _csv_list(kind):
    def parse(text):
        return tuple(kind(x) for x in text.split(",") if x.strip())
    return parse


def read_columns(path) -> np.ndarray:
    """Numeric CSV (optional header row) as a 2-D float array."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path} is empty")
    try:
        [float(x) for x in rows[0]]
        header = None
    except ValueError:
        header, rows = rows[0], rows[1:]
    data = np.array([[float(x) for x in r] for r in rows], dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError(f"{path} holds no numeric rows")
    return data, header


def _quad_args(p):
    p.add_argument("--rule", choices=("adaptive", "fixed"), default="adaptive")
    p.add_argument("--nodes", type=int, default=64)
    p.add_argument("--half-width", type=float, default=12.0)
    p.add_argument("--tol", type=float, default=1e-10)


def _quad(args) -> QuadratureSpec:
    return QuadratureSpec(rule=args.rule, nodes=args.nodes, half_width=args.half_width, tol=args.tol)


def _emit(obj, out):
    text = ex.dumps_json(obj)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands --------------------------------------------------------------------

def cmd_sample(args):
    spec = ModelSpec(kind=args.kind, J=args.J, h=args.h, boundary=args.boundary,
                     values=args.values, probs=args.probs, burn_in=args.burn_in, thin=args.thin)
    ens = sample_system(spec, args.extents, args.count, args.seed)
    vals = ens.values.reshape(len(ens), -1)
    out = Path(args.out)
    ex.write_csv(out, [f"x{i}" for i in range(vals.shape[1])],
                 ([float(v) for v in row] for row in vals))
    side = {"model": spec.as_dict(), "seed": args.seed, "extents": list(ens.extents),
            "count": args.count, "center": ens.center}
    ex.write_json(out.with_suffix(out.suffix + ".json"), side)
    return 0


def _scalar_column(path, column):
    data, header = read_columns(path)
    if header is not None and column in header:
        return data[:, header.index(column)]
    return data[:, int(column) if str(column).isdigit() else 0]


def cmd_fisher(args):
    draws = _scalar_column(args.input, args.column)
    res = fisher(smooth(draws, args.tau), _quad(args))
    _emit(res.as_dict(), args.out)
    return 0


def cmd_entropy(args):
    draws = _scalar_column(args.input, args.column)
    info = info_functionals(draws, args.tau, _quad(args), route=args.route,
                            t_max=args.t_max, n_grid=args.n_grid)
    d = info.as_dict()
    d["tau"] = args.tau
    d["shimizu"] = {"tv_holds": info.distances.tv_holds, "sup_holds": info.distances.sup_holds}
    _emit(d, args.out)
    return 0


AUDITS = ("decomposition", "score-sum", "factorization", "moment", "product")


def cmd_verify(args):
    data, header = read_columns(args.input)
    if header is not None and "s" in header and "t" in header:
        pairs = data[:, [header.index("s"), header.index("t")]]
    else:
        pairs = data[:, :2]
    joint = joint_smooth(pairs, args.tau)
    selected = args.audits or AUDITS
    out = {"tau": args.tau, "beta": args.beta, "N": int(pairs.shape[0]),
           "components": joint.n_components, "cov": joint.cov}
    ok = True
    if "decomposition" in selected:
        rep = theorem_gap(joint, args.beta, eps=args.eps, k_list=args.k)
        out["decomposition"] = rep.as_dict()
        ok &= rep.identity_residual <= IDENTITY_TOL and rep.delta >= -1e-10
    if "score-sum" in selected:
        z = np.linspace(joint.s.min() - 3, joint.s.max() + 3, 41)
        r = score_of_sum_check(joint, args.beta, z)
        out["score_of_sum_residual"] = r
        ok &= r <= 1e-8
    if "factorization" in selected:
        fa = factorization_bounds(joint, args.B, beta=args.beta)
        out["factorization"] = fa.as_dict()
        ok &= fa.holds
    if "moment" in selected:
        ma = moment_bound_audit(joint.marginal_x, k_list=args.k, B_list=(args.B,) if args.B > 1 else (1.5,))
        out["moment"] = ma.as_dict()
        ok &= ma.holds
    if "product" in selected:
        pa = product_term_audit(joint, args.B, eps=args.eps)
        out["product"] = {"B": pa.B, "cross": pa.cross, "bound": pa.bound, "f4": pa.f4,
                          "f5": pa.f5, "slack": pa.slack, "holds": pa.holds}
        ok &= pa.holds
    out["all_hold"] = bool(ok)
    _emit(out, args.out)
    return 0 if ok else EXIT_AUDIT_FAILED


def _experiment_config(args):
    overrides = list(args.set or ())
    if args.output_dir:
        overrides.append(f"output.dir={args.output_dir}")
    if args.seed is not None:
        overrides.append(f"sweep.seed={args.seed}")
    return ex.load_config(args.config, overrides)


def cmd_sweep(args):
    cfg = _experiment_config(args)
    rep = ex.run_sweep(cfg)
    print(ex.dumps_json({"output_dir": cfg.output_dir, "verdicts": rep.verdicts}), end="")
    return 0


def cmd_audit(args):
    cfg = _experiment_config(args)
    rep = ex.run_audit(cfg)
    print(ex.dumps_json({"output_dir": cfg.output_dir, "verdicts": rep.verdicts}), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fkgclt", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw lattice configurations to CSV")
    p.add_argument("--kind", choices=("independent", "ising1d", "ising2d"), default="ising1d")
    p.add_argument("--J", type=float, default=0.0)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--boundary", choices=("periodic", "free"), default="periodic")
    p.add_argument("--values", type=_csv_list(float), default=(-1.0, 1.0))
    p.add_argument("--probs", type=_csv_list(float), default=(0.5, 0.5))
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--extents", type=_csv_list(int), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fisher", help="Fisher information of smoothed scalar samples")
    p.add_argument("--input", required=True)
    p.add_argument("--column", default="0")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--out")
    _quad_args(p)
    p.set_defaults(func=cmd_fisher)

    p = sub.add_parser("entropy", help="relative entropy and distances to the standard normal")
    p.add_argument("--input", required=True)
    p.add_argument("--column", default="0")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--t-max", type=float, default=1e3)
    p.add_argument("--n-grid", type=int, default=200)
    p.add_argument("--route", choices=("direct", "debruijn", "both"), default="both")
    p.add_argument("--out")
    _quad_args(p)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("verify", help="decomposition identity and FKG bound audits on pairs")
    p.add_argument("--input", required=True)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--k", type=_csv_list(int), default=(2, 4))
    p.add_argument("--B", type=float, default=2.0)
    p.add_argument("--audits", type=_csv_list(str), default=None,
                   help=f"comma list from {','.join(AUDITS)}")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    for name, fn in (("sweep", cmd_sweep), ("audit", cmd_audit)):
        p = sub.add_parser(name, help=f"run the {name} experiment from a config file")
        p.add_argument("--config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.add_argument("--output-dir")
        p.add_argument("--seed", type=int)
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "audits", None):
        bad = set(args.audits) - set(AUDITS)
        if bad:
            print(f"unknown audits: {sorted(bad)}", file=sys.stderr)
            return 1
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
