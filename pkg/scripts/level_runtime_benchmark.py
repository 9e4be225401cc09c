"""Per-level task runtimes of the robustness stage on a large random product field.

Writes timing.csv and timing_boxplot.csv (level, min, q1, median, q3, max)
into --out and prints the boxplot table.

    python scripts/level_runtime_benchmark.py --grid 194 --cps 30 --levels 50 --workers 8
"""
import argparse
import time
from pathlib import Path

import numpy as np

from mlrobust.critical_points import extract_critical_points
from mlrobust.field import grid_mesh
from mlrobust.multilevel import plan_tasks, run_task_farm, write_timing_csv
from mlrobust.synth import random_product_field


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=194, help="cells per side; 2*grid^2 triangles")
    ap.add_argument("--cps", type=int, default=30)
    ap.add_argument("--levels", type=int, default=50)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", type=Path, default=Path("benchmark_out"))
    args = ap.parse_args()

    f = random_product_field(np.random.default_rng(args.seed), args.cps, grid_mesh(args.grid, args.grid))
    cps = [extract_critical_points(fr, f.mesh) for fr in f.frames]
    tasks = plan_tasks(f, cps, args.levels)
    print(f"{len(f.mesh.triangles)} triangles, {len(cps[0])} CPs, {len(tasks)} tasks, {args.workers} worker(s)")
    start = time.perf_counter()
    res = run_task_farm(f, tasks, workers=args.workers)
    print(f"robustness stage: {time.perf_counter() - start:.2f} s, {len(res.failed)} failed")

    args.out.mkdir(parents=True, exist_ok=True)
    write_timing_csv(args.out / "timing.csv", res)
    with open(args.out / "timing_boxplot.csv", "w") as fh:
        fh.write("level,min,q1,median,q3,max\n")
        print(f"{'level':>5} {'median ms':>10} {'q3 ms':>8} {'max ms':>8}")
        for level, secs in sorted(res.seconds_by_level().items()):
            q = np.percentile(secs, [0, 25, 50, 75, 100])
            fh.write(f"{level}," + ",".join(f"{x:.6f}" for x in q) + "\n")
            print(f"{level:>5} {q[2] * 1e3:>10.3f} {q[3] * 1e3:>8.3f} {q[4] * 1e3:>8.3f}")


if __name__ == "__main__":
    main()
