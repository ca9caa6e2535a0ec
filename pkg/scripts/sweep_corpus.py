#!/usr/bin/env python3
"""Sweep the built-in corpus: group invariants, X_k / J_e, and monitor
status for every registered instance.

Usage:
    python scripts/sweep_corpus.py [--k K] [--names name1,name2,...]
"""

import argparse
import sys
import time

from oliverpg import (
    SemidirectContext,
    compute_Je,
    compute_Xk,
    corpus,
    monitors_fired,
    nilpotence_class,
    run_monitors,
    verify_chain,
)


def sweep(names, k):
    header = f"{'instance':<18} {'|G|':>8} {'class':>5} {'|X_k|':>8} {'chain':>5} {'J_e':>12} {'monitors':>9} {'secs':>6}"
    print(header)
    print("-" * len(header))
    exit_code = 0
    for spec in corpus.CORPUS:
        if names and spec.name not in names:
            continue
        t0 = time.monotonic()
        obj = spec.construct(verify=True)
        g = corpus._group_of(obj)
        ctx = obj if isinstance(obj, SemidirectContext) else SemidirectContext(g)
        kk = min(k, g.p)
        xk, chain = compute_Xk(g, kk)
        chain_ok = bool(verify_chain(g, chain))
        if isinstance(obj, SemidirectContext):
            red = compute_Je(obj)
            je_txt = "<= V" if red.le_V else f"{len(red.offenders)} off."
        else:
            je_txt = str(compute_Je(g).order)
        outs = run_monitors(ctx, k=kk)
        fired = monitors_fired(outs)
        if fired or not chain_ok:
            exit_code = 2
        print(
            f"{spec.name:<18} {g.order:>8} {nilpotence_class(g):>5} {xk.order:>8} "
            f"{'ok' if chain_ok else 'BAD':>5} {je_txt:>12} "
            f"{'FIRED' if fired else 'quiet':>9} {time.monotonic() - t0:>6.1f}"
        )
    return exit_code


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", type=int, default=3, help="characteristic-subgroup index (clamped to p)")
    ap.add_argument("--names", default="", help="comma-separated instance names (default: all)")
    args = ap.parse_args()
    names = {n for n in args.names.split(",") if n}
    return sweep(names, args.k)


if __name__ == "__main__":
    sys.exit(main())
