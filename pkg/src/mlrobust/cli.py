"""``mlrobust`` command line: one subcommand per pipeline stage.

Stages exchange files inside the ``--out`` directory::

    synth       -> bundle (mesh.json, bundle.json, frame_*.csv)
    extract     -> critical_points.csv
    robustness  -> robustness.csv, timing.csv
    track       -> trajectories.json
    segment     -> segmented.json
    filter      -> scores.csv, filtered.json
    correlate   -> correlation.csv
    sweep       -> sweep.csv
    report      -> timing_boxplot.csv, series.csv

Exit status: 0 ok, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import synth as synth_mod
from .critical_points import extract_critical_points, read_critical_points_csv, write_critical_points_csv
from .field import BundleError, TimeVaryingField, fmt, grid_mesh, load_bundle, save_bundle
from .multilevel import plan_oracle_tasks, plan_tasks, read_robustness_csv, read_timing_csv, run_task_farm, write_robustness_csv, write_timing_csv
from .segmentation import SegmentationConfig, logistic, segment_all
from .selection import correlate, filter_trajectories, regional_series, sweep, write_correlation_csv, write_scores_csv, write_sweep_csv
from .tracking import read_trajectories_json, slice_annotate, track, write_trajectories_json

log = logging.getLogger("mlrobust")

EXIT_USAGE = 1
EXIT_DATA = 2

PRODUCERS = {
    "critical_points.csv": "extract",
    "robustness.csv": "robustness",
    "timing.csv": "robustness",
    "trajectories.json": "track",
    "segmented.json": "segment",
    "filtered.json": "filter",
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class PipelineConfig:
    input: Optional[Path] = None
    out: Path = Path(".")
    levels: int = 50
    k: float = 0.5
    sigma: float = 0.2
    bridge_gap: int = 2
    stability_threshold: float = 0.0
    degree_threshold: float = -1.0
    workers: int = os.cpu_count() or 1
    oracle: bool = False
    channel: Optional[str] = None
    radius: float = 5.0

    def __post_init__(self):
        if self.levels < 1:
            raise UsageError("--levels must be >= 1")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        if not 0.0 <= self.stability_threshold <= 1.0:
            raise UsageError("--stability-threshold must lie in [0, 1]")
        if not -1.0 <= self.degree_threshold <= 1.0:
            raise UsageError("--degree-threshold must lie in [-1, 1]")
        if not self.radius > 0:
            raise UsageError("--radius must be positive")
        try:
            SegmentationConfig(self.k, self.sigma, bridge_gap=self.bridge_gap)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    @property
    def segmentation(self) -> SegmentationConfig:
        return SegmentationConfig(self.k, self.sigma, bridge_gap=self.bridge_gap)


def _need(cfg: PipelineConfig, name: str) -> Path:
    p = cfg.out / name
    if not p.exists():
        raise DataError(f"missing {p}; run `mlrobust {PRODUCERS[name]}` first")
    return p


def _bundle(cfg: PipelineConfig) -> TimeVaryingField:
    if cfg.input is None:
        raise UsageError("--input BUNDLE is required for this stage")
    return load_bundle(cfg.input)


def _cps(cfg: PipelineConfig, field: TimeVaryingField):
    return read_critical_points_csv(_need(cfg, "critical_points.csv"), field.mesh, field.T)


# ---------------------------------------------------------------- stages


FIXTURES = {
    "boundary": lambda a: synth_mod.boundary_effect_fixture(frames=a.frames or 3),
    "boundary-no-saddles": lambda a: synth_mod.boundary_effect_fixture(weak_saddles=False, frames=a.frames or 3),
    "translating": lambda a: synth_mod.translating_center(frames=a.frames or 11),
    "annihilating": lambda a: synth_mod.annihilating_pair(frames=a.frames or 11),
    "pair": lambda a: synth_mod.steady_product_field(
        [synth_mod.Zero(0.4013, 0.5007, 1), synth_mod.Zero(0.6011, 0.4993, -1)],
        grid_mesh(*(a.grid or (30, 30))),
        a.frames or 1,
    ),
}


def cmd_synth(cfg: PipelineConfig, args) -> None:
    sources = [args.elements is not None, args.fixture is not None, args.random is not None]
    if sum(sources) != 1:
        raise UsageError("synth needs exactly one of --elements, --fixture, --random")
    if args.elements is not None:
        elements = synth_mod.load_elements(args.elements)
        frames = args.frames or 1
        field = synth_mod.render(elements, grid_mesh(*(args.grid or (40, 40))), [k * args.dt for k in range(frames)])
    elif args.fixture is not None:
        field = FIXTURES[args.fixture](args)
    else:
        mesh = grid_mesh(*(args.grid or (40, 40)))
        field = synth_mod.random_product_field(np.random.default_rng(args.seed), args.random, mesh, args.frames or 1, args.drift)
    save_bundle(field, cfg.out)
    log.info("wrote %d frame(s), %d triangles to %s", field.T, field.mesh.n_triangles, cfg.out)


def cmd_extract(cfg: PipelineConfig, args) -> None:
    field = _bundle(cfg)
    cps = [extract_critical_points(fr, field.mesh) for fr in field.frames]
    write_critical_points_csv(cfg.out / "critical_points.csv", cps)
    log.info("%d critical points over %d frame(s)", sum(map(len, cps)), field.T)


def cmd_robustness(cfg: PipelineConfig, args) -> None:
    field = _bundle(cfg)
    cps = _cps(cfg, field)
    tasks = plan_oracle_tasks(field, cps) if cfg.oracle else plan_tasks(field, cps, cfg.levels)
    res = run_task_farm(field, tasks, workers=cfg.workers)
    if res.failed:
        for tid, task, err in res.failed:
            log.error("task %d (frame %d, cp %d, level %d) failed: %s", tid, *task, err)
        raise DataError(f"{len(res.failed)} task(s) failed")
    write_robustness_csv(cfg.out / "robustness.csv", res)
    write_timing_csv(cfg.out / "timing.csv", res)
    log.info("%d tasks", len(tasks))


def _minR_table(cfg: PipelineConfig) -> Dict[Tuple[int, int], float]:
    profiles = read_robustness_csv(_need(cfg, "robustness.csv"))
    return {key: p.minR for key, p in profiles.items()}


def cmd_track(cfg: PipelineConfig, args) -> None:
    field = _bundle(cfg)
    cps = _cps(cfg, field)
    minR = _minR_table(cfg)
    trajs = [slice_annotate(t, cps, minR, field.mesh.diameter) for t in track(field)]
    write_trajectories_json(cfg.out / "trajectories.json", trajs)
    log.info("%d trajectories", len(trajs))


def cmd_segment(cfg: PipelineConfig, args) -> None:
    trajs = read_trajectories_json(_need(cfg, "trajectories.json"))
    out = segment_all(trajs, cfg.segmentation)
    write_trajectories_json(cfg.out / "segmented.json", out)
    log.info("%d trajectories -> %d pieces", len(trajs), len(out))


def cmd_filter(cfg: PipelineConfig, args) -> None:
    field = _bundle(cfg)
    trajs = read_trajectories_json(_need(cfg, "segmented.json"))
    kept, scores = filter_trajectories(trajs, cfg.k, field.time_span, cfg.stability_threshold, cfg.degree_threshold)
    write_scores_csv(cfg.out / "scores.csv", scores)
    write_trajectories_json(cfg.out / "filtered.json", kept)
    log.info("%d of %d trajectories kept", len(kept), len(trajs))


def cmd_correlate(cfg: PipelineConfig, args) -> None:
    if not cfg.channel:
        raise UsageError("correlate needs --channel")
    field = _bundle(cfg)
    trajs = read_trajectories_json(_need(cfg, "filtered.json"))
    rows = []
    for t in trajs:
        try:
            series = regional_series(t, field.frames, field.mesh, cfg.channel, cfg.radius)
            r, n = correlate(t, series)
        except KeyError as exc:
            raise DataError(exc.args[0]) from None
        except ValueError as exc:
            log.warning("trajectory %d: %s", t.id, exc)
            r, n = math.nan, sum(1 for x in t.annotated_nodes if math.isfinite(x.minR))
        rows.append((t.id, cfg.channel, r, n))
    write_correlation_csv(cfg.out / "correlation.csv", rows)


def cmd_sweep(cfg: PipelineConfig, args) -> None:
    field = _bundle(cfg)
    trajs = read_trajectories_json(_need(cfg, "trajectories.json"))
    ks = args.k_list or [cfg.k]
    sigmas = args.sigma_list or [cfg.sigma]
    for s in sigmas:
        if not 0 < s <= 1:
            raise UsageError("sigma values must lie in (0, 1]")
    if any(k <= 0 for k in ks):
        raise UsageError("k values must be positive")
    rows = sweep(trajs, ks, sigmas, field.time_span, cfg.stability_threshold, cfg.degree_threshold, cfg.bridge_gap)
    write_sweep_csv(cfg.out / "sweep.csv", rows)


def cmd_report(cfg: PipelineConfig, args) -> None:
    timing = read_timing_csv(_need(cfg, "timing.csv"))
    with open(cfg.out / "timing_boxplot.csv", "w", newline="") as fh:
        fh.write("level,min,q1,median,q3,max\n")
        for level in sorted(timing):
            q = np.percentile(timing[level], [0, 25, 50, 75, 100])
            fh.write(f"{level}," + ",".join(f"{x:.6f}" for x in q) + "\n")
    trajs = read_trajectories_json(_need(cfg, "filtered.json"))
    with open(cfg.out / "series.csv", "w", newline="") as fh:
        fh.write("trajectory_id,node_index,t,minR,l_minR\n")
        for t in trajs:
            for n in t.annotated_nodes:
                fh.write(f"{t.id},{n.index},{fmt(n.t)},{fmt(n.minR)},{fmt(logistic(n.minR, cfg.k))}\n")


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "robustness": cmd_robustness,
    "track": cmd_track,
    "segment": cmd_segment,
    "filter": cmd_filter,
    "correlate": cmd_correlate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


# ---------------------------------------------------------------- parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlrobust", description="Multilevel robustness of critical points in 2D time-varying vector fields.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--input", type=Path, help="bundle directory")
        s.add_argument("--out", type=Path, required=True, help="output directory")
        s.add_argument("--levels", type=int, default=50)
        s.add_argument("--k", type=float, default=0.5)
        s.add_argument("--sigma", type=float, default=0.2)
        s.add_argument("--bridge-gap", type=int, default=2)
        s.add_argument("--stability-threshold", type=float, default=0.0)
        s.add_argument("--degree-threshold", type=float, default=-1.0)
        s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        s.add_argument("--oracle", action="store_true", help="evaluate exact breakpoints instead of sampled levels")
        s.add_argument("--channel")
        s.add_argument("--radius", type=float, default=5.0)
        if name == "synth":
            s.add_argument("--elements", type=Path, help="elements.json to render")
            s.add_argument("--fixture", choices=sorted(FIXTURES))
            s.add_argument("--random", type=int, metavar="N", help="random product field with N zeros")
            s.add_argument("--seed", type=int, default=0)
            s.add_argument("--drift", type=float, default=0.0)
            s.add_argument("--grid", type=int, nargs=2, metavar=("NX", "NY"))
            s.add_argument("--frames", type=int)
            s.add_argument("--dt", type=float, default=1.0)
    return p


def _sweep_lists(argv: Sequence[str]) -> Tuple[List[str], Optional[List[float]], Optional[List[float]]]:
    """``sweep`` accepts comma lists for --k/--sigma; peel them off before argparse."""
    argv = list(argv)
    lists = {"--k": None, "--sigma": None}
    if "sweep" not in argv:
        return argv, None, None
    out = []
    i = 0
    while i < len(argv):
        a = argv[i]
        key, _, val = a.partition("=")
        if key in lists:
            if not val:
                if i + 1 >= len(argv):
                    raise UsageError(f"{key} needs a value")
                val = argv[i + 1]
                i += 1
            try:
                lists[key] = _floats(val)
            except argparse.ArgumentTypeError as exc:
                raise UsageError(str(exc)) from None
        else:
            out.append(a)
        i += 1
    return out, lists["--k"], lists["--sigma"]


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv, k_list, sigma_list = _sweep_lists(argv)
    except UsageError as exc:
        print(f"mlrobust: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.k_list, args.sigma_list = k_list, sigma_list
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = PipelineConfig(
            input=args.input,
            out=args.out,
            levels=args.levels,
            k=k_list[0] if k_list else args.k,
            sigma=sigma_list[0] if sigma_list else args.sigma,
            bridge_gap=args.bridge_gap,
            stability_threshold=args.stability_threshold,
            degree_threshold=args.degree_threshold,
            workers=args.workers,
            oracle=args.oracle,
            channel=args.channel,
            radius=args.radius,
        )
        cfg.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"mlrobust: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, BundleError, ValueError, OSError) as exc:
        print(f"mlrobust: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
