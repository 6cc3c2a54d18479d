#!/usr/bin/env python3
"""Audit the box recursion J(m+n) <= beta J(m) + (1-beta) J(n) + d(m).

    python3 scripts/run_audit.py scripts/ising_sweep.cfg
"""
import argparse
import sys

from fkgclt.experiments import load_config, run_audit


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config", nargs="?")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--no-ladder", action="store_true", help="skip the (2^k, 2^k) ladder")
    args = ap.parse_args(argv)
    cfg = load_config(args.config, args.set)
    rep = run_audit(cfg, ladder=not args.no_ladder)
    print(f"{'m':>5} {'n':>5} {'J(m+n)':>9} {'rhs':>9} {'d':>9} {'d_se':>8} {'c(m,n)':>8} {'Delta':>10} {'min_C':>9}")
    for r in rep.records:
        mc = "-" if r.min_C is None else f"{r.min_C:.4g}"
        print(f"{r.m:>5} {r.n:>5} {r.J_st_sum:>9.5f} {r.recursion_rhs:>9.5f} {r.d_emp:>9.5f} "
              f"{r.d_se:>8.5f} {r.c_mn:>8.4f} {r.delta:>10.3e} {mc:>9}")
    if rep.ladder:
        print("ladder (m, J_st(m), J_st(2m)):")
        for e in rep.ladder:
            print(f"  {e['m']:>5} {e['J_st_m']:.5f} {e['J_st_2m']:.5f}")
    for k, v in rep.verdicts.items():
        print(f"{k}: {v}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
