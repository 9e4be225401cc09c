"""Compare sampled multilevel profiles against the breakpoint profile on random fields.

For every CP of every field, counts sampled radii whose value differs from
the breakpoint profile and profiles with more than n-1 value changes, then
prints the worst offender in detail.

    python scripts/multilevel_consistency_survey.py --fields 100 --levels 50
"""
import argparse

import numpy as np

from mlrobust.multilevel import FrameContext
from mlrobust.synth import random_product_field


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fields", type=int, default=100)
    ap.add_argument("--levels", type=int, default=50)
    ap.add_argument("--seed", type=int, default=2000)
    args = ap.parse_args()

    n_cps = mismatched = over = 0
    worst = None
    for s in range(args.seed, args.seed + args.fields):
        rng = np.random.default_rng(s)
        n = int(rng.integers(4, 9))
        ctx = FrameContext.of(random_product_field(rng, n), 0)
        for cp in ctx.cps:
            n_cps += 1
            sampled, exact = ctx.profile(cp.id, args.levels), ctx.oracle(cp.id)
            bad = [(r, v, exact.value_at(r)) for r, v in zip(sampled.radii, sampled.values) if v != exact.value_at(r)]
            mismatched += len(bad)
            over += exact.n_changes() > n - 1
            if bad and (worst is None or len(bad) > len(worst[2])):
                worst = (s, cp.id, bad, exact)
    print(f"{n_cps} CPs, {mismatched}/{n_cps * args.levels} sampled values differ, {over} profiles exceed n-1 changes")
    if worst:
        s, cp, bad, exact = worst
        print(f"\nworst: seed {s} cp {cp}")
        print("  breakpoint profile:", ", ".join(f"[{r:.4f}: {v:.5g}]" for r, v in exact.levels))
        for r, v, e in bad[:10]:
            print(f"  radius {r:.4f}: sampled {v:.5g}, breakpoint profile {e:.5g}")


if __name__ == "__main__":
    main()
