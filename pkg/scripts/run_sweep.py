#!/usr/bin/env python3
"""Run a convergence sweep and print a per-size table.

    python3 scripts/run_sweep.py scripts/ising_sweep.cfg --set sweep.samples=20000
"""
import argparse
import sys

from fkgclt.experiments import load_config, run_sweep


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config", nargs="?")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args(argv)
    cfg = load_config(args.config, args.set)
    rep = run_sweep(cfg)
    print(f"{'n':>6} {'J_st':>10} {'SE':>9} {'D_lo':>10} {'D_hi':>10} {'TV':>9}")
    for r in rep.records:
        print(f"{r.n:>6} {r.J_st:>10.5f} {r.J_st_se:>9.5f} {r.D_lo:>10.6f} {r.D_hi:>10.6f} {r.TV:>9.5f}")
    print(f"susceptibility {rep.susceptibility:.4f} +- {rep.susceptibility_se:.4f}")
    for k, v in rep.verdicts.items():
        print(f"{k}: {v}")
    print(f"outputs in {cfg.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
