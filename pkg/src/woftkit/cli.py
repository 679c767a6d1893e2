"""Command-line entry point.

Subcommands: synth (generate sequences), track (run the tracker over a
sequence directory), eval (score pose traces), ablate (estimator x
pre-warp grid), gradcheck (finite-difference audit of the solver
gradients).

Exit codes are stable for scripting: 0 success, 1 runtime or I/O failure,
2 usage or configuration error. Every run that produces files also writes
`manifest.json` (deterministic echo of the configuration and seeds) and
`timings.json` (wall clock per stage; the one file exempt from
reproducibility comparisons).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import (
    DEFAULT_ESTIMATORS,
    DEFAULT_MODES,
    AblationSpec,
    cells_by_key,
    run_ablation,
)
from .evaluation import aggregate_reports, evaluate_poses, mask_corners
from .exceptions import LengthMismatchError, WoftkitError
from .flow import ContaminationSpec
from .geometry import Homography
from .gradients import REL_TOL, run_gradient_check
from .io import (
    atomic_write_text,
    load_pose_trace,
    load_sequence,
    read_image,
    save_pose_trace,
    save_sequence,
)
from .providers import (
    ForwardBackwardWeights,
    LucasKanadeFlowProvider,
    PrecomputedFlowProvider,
    SyntheticFlowProvider,
    UniformWeights,
)
from .synth import PairSpec, make_sequence, procedural_texture
from .tracker import PlanarFlowTracker, TrackerConfig, run_tracker_on_sequence
from .validation import derived_seed


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 2."""


def _default_jobs() -> int:
    env = os.environ.get("WOFTKIT_JOBS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _write_json(path: Path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out_dir: Path, subcommand: str, params: dict, inputs, outputs):
    _write_json(
        out_dir / "manifest.json",
        {
            "tool": "woftkit",
            "version": __version__,
            "subcommand": subcommand,
            "params": params,
            "inputs": sorted(str(p) for p in inputs),
            "outputs": sorted(str(p) for p in outputs),
        },
    )


def _write_timings(out_dir: Path, stages: dict[str, float]) -> None:
    _write_json(out_dir / "timings.json", {"stages": stages})


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"--size expects WIDTHxHEIGHT, got {text!r}") from exc
    if w < 8 or h < 8:
        raise UsageError("--size must be at least 8x8")
    return (w, h)


# -- synth ---------------------------------------------------------------------


def _synth_one(task) -> tuple[str, float]:
    (out_root, index, length, motion, size, spec_kwargs, src_paths, base_seed) = task
    start = time.perf_counter()
    if src_paths is None:
        source = procedural_texture(size, seed=derived_seed(base_seed, 2, index))
    else:
        source = read_image(src_paths[index % len(src_paths)])
    record = make_sequence(
        source,
        length=length,
        motion_smoothness=motion,
        spec=PairSpec(rng_seed=derived_seed(base_seed, 1, index), **spec_kwargs),
    )
    name = f"seq_{index:03d}"
    save_sequence(Path(out_root) / name, record)
    return name, time.perf_counter() - start


def cmd_synth(args) -> int:
    if args.procedural == (args.src_dir is not None):
        raise UsageError("choose exactly one of --procedural or --src-dir")
    src_paths = None
    if args.src_dir is not None:
        src_paths = sorted(
            p for p in Path(args.src_dir).iterdir()
            if p.suffix.lower() in (".png", ".pgm", ".ppm")
        )
        if not src_paths:
            raise UsageError(f"no usable images in {args.src_dir}")
    spec_kwargs = {
        "corner_perturbation_frac": args.corner_frac,
        "blur_max_len": args.blur_max,
        "degrade_quality": args.quality,
    }
    PairSpec(rng_seed=0, **spec_kwargs)  # validate before any work
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    tasks = [
        (str(out_root), i, args.length, args.motion, _parse_size(args.size),
         spec_kwargs, src_paths, args.seed)
        for i in range(args.count)
    ]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            produced = list(pool.map(_synth_one, tasks))
    else:
        produced = [_synth_one(t) for t in tasks]
    _write_manifest(
        out_root,
        "synth",
        {
            "count": args.count,
            "length": args.length,
            "motion": args.motion,
            "size": args.size,
            "seed": args.seed,
            "source": "procedural" if args.procedural else str(args.src_dir),
            **spec_kwargs,
        },
        inputs=[] if src_paths is None else src_paths,
        outputs=[name for name, _ in produced],
    )
    _write_timings(out_root, {name: secs for name, secs in produced})
    print(f"wrote {len(produced)} sequence(s) under {out_root}")
    return 0


# -- track ---------------------------------------------------------------------


def _build_flow_provider(args, record):
    if args.flow == "synthetic":
        if any(p is None for p in record.gt_poses):
            raise UsageError("--flow synthetic needs gt.txt in the sequence directory")
        return SyntheticFlowProvider(
            record.gt_poses,
            ContaminationSpec(rng_seed=derived_seed(args.seed, 4)),
        )
    if args.flow == "lk":
        return LucasKanadeFlowProvider()
    if args.flow_dir is None:
        raise UsageError("--flow file requires --flow-dir")
    return PrecomputedFlowProvider(args.flow_dir)


def cmd_track(args) -> int:
    try:
        config = TrackerConfig(
            inlier_threshold=args.inlier_thresh,
            lost_ratio=args.lost_ratio,
            max_lost_frames=args.max_lost,
            max_correspondences=args.max_corr,
            downscale_factor=args.downscale,
            estimator_choice=args.estimator,
            pre_warp_mode=args.prewarp,
            rng_seed=derived_seed(args.seed, 3),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    record = load_sequence(args.seq)
    provider = _build_flow_provider(args, record)
    weights = UniformWeights() if args.weights == "uniform" else ForwardBackwardWeights()
    tracker = PlanarFlowTracker(config, provider, weights)
    poses, results, seconds = run_tracker_on_sequence(
        tracker, record.frames, record.template_mask
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [(0, "tracking", 1.0, Homography.identity())] + [
        (r.frame_index, r.status, r.inlier_ratio, r.pose) for r in results
    ]
    save_pose_trace(out_dir / "trace.txt", rows)
    _write_manifest(
        out_dir,
        "track",
        {
            "seq": str(args.seq),
            "flow": args.flow,
            "flow_dir": str(args.flow_dir) if args.flow_dir else None,
            "weights": args.weights,
            "seed": args.seed,
            **{k: getattr(config, k) for k in (
                "inlier_threshold", "lost_ratio", "max_lost_frames",
                "max_correspondences", "downscale_factor", "estimator_choice",
                "pre_warp_mode",
            )},
        },
        inputs=[args.seq],
        outputs=["trace.txt"],
    )
    _write_timings(out_dir, {"track": seconds})
    n_tracking = sum(r.status == "tracking" for r in results)
    print(
        f"tracked {len(results)} frame(s): {n_tracking} tracking, "
        f"{len(results) - n_tracking} lost ({seconds:.2f}s) -> {out_dir / 'trace.txt'}"
    )
    return 0


# -- eval ----------------------------------------------------------------------


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def cmd_eval(args) -> int:
    if len(args.trace) != len(args.seq):
        raise UsageError(
            f"{len(args.trace)} trace file(s) but {len(args.seq)} sequence(s)"
        )
    try:
        thresholds = tuple(float(v) for v in args.thresholds.split(","))
    except ValueError as exc:
        raise UsageError(f"bad --thresholds {args.thresholds!r}") from exc
    reports = []
    names = []
    for trace_path, seq_dir in zip(args.trace, args.seq):
        record = load_sequence(seq_dir)
        rows = load_pose_trace(trace_path)
        poses = [pose for _, _, _, pose in rows]
        try:
            report = evaluate_poses(
                poses,
                record.gt_poses,
                mask_corners(record.template_mask),
                thresholds=thresholds,
            )
        except LengthMismatchError as exc:
            raise UsageError(f"{trace_path} vs {seq_dir}: {exc}") from exc
        reports.append(report)
        names.append(Path(seq_dir).name)
    aggregate = aggregate_reports(reports)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "names": names,
        "thresholds": list(thresholds),
        "aggregate": aggregate,
    }
    _write_json(out_dir / "report.json", payload)

    header = ["sequence", "n_frames", "n_scored"] + [f"p_at_{t:g}" for t in thresholds]
    lines = [",".join(header)]
    for name, report in zip(names, reports):
        lines.append(",".join(
            [name, str(report.n_frames), str(report.n_scored)]
            + [_csv_cell(report.p_at[t]) for t in thresholds]
        ))
    lines.append(",".join(
        ["ALL", str(sum(r.n_frames for r in reports)), str(sum(r.n_scored for r in reports))]
        + [_csv_cell(aggregate["mean_p_at"][f"{t:g}"]) for t in thresholds]
    ))
    atomic_write_text(out_dir / "report.csv", "\n".join(lines) + "\n")
    _write_manifest(
        out_dir,
        "eval",
        {"thresholds": list(thresholds)},
        inputs=list(args.trace) + list(args.seq),
        outputs=["report.json", "report.csv"],
    )
    _write_timings(out_dir, {})
    for t in thresholds:
        print(f"mean P@{t:g} = {aggregate['mean_p_at'][f'{t:g}']:.4f}")
    return 0


# -- ablate ---------------------------------------------------------------------


def _ordering_violations(cells) -> list[str]:
    by_key = cells_by_key(cells)
    problems = []

    def score(est, mode):
        return by_key[(est, mode)].p_at_5

    for est in ("lsq", "weighted_lsq"):
        if not score(est, "controlled") >= score(est, "always") >= score(est, "never"):
            problems.append(
                f"{est}: expected controlled >= always >= never, got "
                f"{score(est, 'controlled'):.3f} / {score(est, 'always'):.3f} / "
                f"{score(est, 'never'):.3f}"
            )
    for mode in DEFAULT_MODES:
        if score("weighted_lsq", mode) < score("lsq", mode):
            problems.append(
                f"{mode}: expected weighted_lsq >= lsq, got "
                f"{score('weighted_lsq', mode):.3f} < {score('lsq', mode):.3f}"
            )
    return problems


def cmd_ablate(args) -> int:
    spec = AblationSpec(seed=args.seed)
    if args.quick:
        spec = AblationSpec(seed=args.seed, n_sequences=3, length=100)
    start = time.perf_counter()
    cells = run_ablation(spec, DEFAULT_ESTIMATORS, DEFAULT_MODES, jobs=args.jobs)
    elapsed = time.perf_counter() - start
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["estimator,prewarp,p_at_5,p_at_15"]
    for cell in cells:
        lines.append(
            f"{cell.estimator},{cell.mode},{_csv_cell(cell.p_at_5)},{_csv_cell(cell.p_at_15)}"
        )
    atomic_write_text(out_dir / "ablation.csv", "\n".join(lines) + "\n")
    _write_manifest(
        out_dir,
        "ablate",
        {**asdict(spec), "quick": bool(args.quick), "jobs": args.jobs},
        inputs=[],
        outputs=["ablation.csv"],
    )
    _write_timings(out_dir, {"ablate": elapsed})
    width = max(len(e) for e in DEFAULT_ESTIMATORS)
    print(f"{'estimator':<{width}}  {'prewarp':<10}  {'P@5':>6}  {'P@15':>6}")
    for cell in cells:
        print(
            f"{cell.estimator:<{width}}  {cell.mode:<10}  "
            f"{cell.p_at_5:6.3f}  {cell.p_at_15:6.3f}"
        )
    problems = _ordering_violations(cells)
    if problems:
        for p in problems:
            print(f"ordering violation: {p}", file=sys.stderr)
        return 1
    return 0


# -- gradcheck --------------------------------------------------------------------


def _load_instances(path) -> list:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    instances = []
    for item in data["instances"]:
        src = np.asarray(item["src"], dtype=np.float64)
        dst = np.asarray(item["dst"], dtype=np.float64)
        weights = np.asarray(
            item.get("weights", np.ones(len(src))), dtype=np.float64
        )
        gt = None
        eval_points = None
        if item.get("gt") is not None:
            gt = Homography(np.asarray(item["gt"], dtype=np.float64).reshape(3, 3))
        if item.get("eval_points") is not None:
            eval_points = np.asarray(item["eval_points"], dtype=np.float64)
        instances.append((src, dst, weights, gt, eval_points))
    return instances


def cmd_gradcheck(args) -> int:
    instances = _load_instances(args.instance_file) if args.instance_file else None
    report = run_gradient_check(
        n_instances=args.instances, seed=args.seed, instances=instances
    )
    for item in report.items:
        if item.skipped is not None:
            print(f"instance {item.index}: skipped ({item.skipped})")
    n_checked = len(report.items) - report.n_skipped
    print(
        f"checked {n_checked} instance(s), skipped {report.n_skipped}; "
        f"max relative error = {report.max_error:.3e} (tolerance {REL_TOL:g})"
    )
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(
            out_dir / "gradcheck.json",
            {
                "max_error": report.max_error,
                "n_skipped": report.n_skipped,
                "items": [
                    {
                        "index": i.index,
                        "n_pairs": i.n_pairs,
                        "jacobian_error": i.jacobian_error,
                        "loss_error": i.loss_error,
                        "skipped": i.skipped,
                    }
                    for i in report.items
                ],
            },
        )
        _write_manifest(
            out_dir,
            "gradcheck",
            {"instances": args.instances, "seed": args.seed,
             "instance_file": str(args.instance_file) if args.instance_file else None},
            inputs=[args.instance_file] if args.instance_file else [],
            outputs=["gradcheck.json"],
        )
        _write_timings(out_dir, {})
    return 0 if report.passed(REL_TOL) else 1


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="woftkit",
        description="Planar tracking via weighted flow homographies: "
        "synthetic data, tracking, evaluation, ablation, gradient checks.",
    )
    parser.add_argument("--version", action="version", version=f"woftkit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate synthetic sequences")
    p.add_argument("--procedural", action="store_true", help="use generated textures")
    p.add_argument("--src-dir", default=None, help="directory of source images")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--length", type=int, default=501)
    p.add_argument("--corner-frac", type=float, default=0.2)
    p.add_argument("--blur-max", type=float, default=20.0)
    p.add_argument("--quality", type=int, default=25)
    p.add_argument("--motion", type=float, default=0.3)
    p.add_argument("--size", default="640x480")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="track a sequence directory")
    p.add_argument("--seq", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--estimator", default="weighted_lsq",
                   choices=("lsq", "weighted_lsq", "irls", "ransac"))
    p.add_argument("--prewarp", default="controlled",
                   choices=("never", "always", "controlled"))
    p.add_argument("--weights", default="fb", choices=("uniform", "fb"))
    p.add_argument("--inlier-thresh", type=float, default=5.0)
    p.add_argument("--lost-ratio", type=float, default=0.20)
    p.add_argument("--max-lost", type=int, default=10)
    p.add_argument("--max-corr", type=int, default=500)
    p.add_argument("--downscale", type=int, default=1)
    p.add_argument("--flow", default="synthetic", choices=("synthetic", "lk", "file"))
    p.add_argument("--flow-dir", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score pose traces against ground truth")
    p.add_argument("--trace", nargs="+", required=True)
    p.add_argument("--seq", nargs="+", required=True)
    p.add_argument("--thresholds", default="5,15")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="estimator x pre-warp grid on a seeded suite")
    p.add_argument("--out", required=True)
    p.add_argument("--quick", action="store_true", help="smaller suite, same schema")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference audit of solver gradients")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instance-file", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (WoftkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
