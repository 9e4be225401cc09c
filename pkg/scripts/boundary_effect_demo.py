"""Multilevel vs full-domain robustness on the boundary fixture, with and without the weak saddles.

    python scripts/boundary_effect_demo.py [--levels 50]
"""
import argparse
import math

from mlrobust.multilevel import FrameContext
from mlrobust.synth import BOUNDARY_CENTERS, BOUNDARY_FAR_SADDLE, BOUNDARY_WEAK_SADDLES, boundary_effect_fixture

NAMES = {**BOUNDARY_CENTERS, **BOUNDARY_WEAK_SADDLES, "far": BOUNDARY_FAR_SADDLE}


def label(cp):
    return min(NAMES, key=lambda k: math.dist(NAMES[k], cp.position))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=50)
    args = ap.parse_args()
    for weak in (True, False):
        ctx = FrameContext.of(boundary_effect_fixture(weak_saddles=weak), 0)
        print(f"\nweak saddles {'present' if weak else 'removed'} (L = {ctx.L:.4f})")
        print(f"{'cp':>4} {'label':>5} {'deg':>4} {'full':>10} {'minR':>10} {'argmin radius':>14}")
        for cp in ctx.cps:
            p = ctx.profile(cp.id, args.levels)
            at = p.radii[p.values.index(p.minR)]
            print(f"{cp.id:>4} {label(cp):>5} {cp.degree:>4} {ctx.full_robustness(cp.id):>10.6f} {p.minR:>10.6f} {at:>14.4f}")


if __name__ == "__main__":
    main()
