#!/usr/bin/env python3
"""Census of offenders on the module instances of the corpus: counts,
quadratic / 2-subnormal breakdown, and the distinguished 2-subnormal
quadratic offender where one exists.

Usage:
    python scripts/offender_census.py [--names name1,name2,...]
"""

import argparse
import sys

from oliverpg import (
    NoProductMaximal,
    SemidirectContext,
    corpus,
    find_offenders,
    ps_degree,
)
from oliverpg.replacement import two_subnormal_offender


def census(names):
    for spec in corpus.CORPUS:
        if names and spec.name not in names:
            continue
        obj = spec.construct(verify=False)
        if not isinstance(obj, SemidirectContext):
            continue
        ctx = obj
        offs = find_offenders(ctx)
        quad = sum(1 for o in offs if o.quadratic)
        twos = sum(1 for o in offs if o.two_subnormal)
        print(f"{spec.name}: |G|={ctx.G.order}, dim V={ctx.n}, p={ctx.p}, "
              f"PS degree {ps_degree(ctx)}")
        print(f"  offenders: {len(offs)} total, {quad} quadratic, {twos} 2-subnormal")
        if offs:
            try:
                best = two_subnormal_offender(ctx)
                print(f"  distinguished offender: |E|={best.E.order}, "
                      f"|C_V(E)|={best.fixed.size}, defect={best.defect}")
            except NoProductMaximal:
                print("  distinguished offender: none (V is the unique maximum)")
        print()
    return 0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--names", default="", help="comma-separated instance names (default: all)")
    args = ap.parse_args()
    return census({n for n in args.names.split(",") if n})


if __name__ == "__main__":
    sys.exit(main())
