"""Command-line entry point: synth, run, train-warper, experiment, inspect.

Exit codes are fixed for scripting: 0 success, 1 I/O error, 2 config error,
3 out-of-order stream arrival, 4 strict-mode ordering violation. The
DENSEWARP_SEED environment variable overrides the config seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import struct
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from .errors import ConfigError, DenseWarpError, OutOfOrderArrival
from .evaluation import (
    emitted_frames,
    evaluate_variant,
    format_table,
    interval_sweep,
    report_to_dict,
    run_ablation,
    train_warper_bank,
    window_sweep,
    write_line_plot_svg,
    write_report_json,
    write_timings_json,
)
from .heatmap import DWHM_MAGIC, read_heatmap, write_heatmap
from .pipeline import PipelineVariant, run_dense_frames, run_sparse_stream
from .scheduler import write_schedule_csv
from .synth import Arrival
from .warper import load_weights, save_weights


class StrictViolation(DenseWarpError):
    pass


def _resolve_config(args) -> cfgmod.RunConfig:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data = yaml.safe_load(fh) or {}
    else:
        data = {}
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "lam", None) is not None:
        overrides.append(f"fusion.lambda={args.lam}")
    if getattr(args, "line_step", None) is not None:
        overrides.append(f"fusion.line_step={args.line_step}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    cfgmod.apply_overrides(data, overrides)
    cfg = cfgmod.config_from_dict(data)
    env_seed = os.environ.get("DENSEWARP_SEED")
    if env_seed is not None:
        cfg = replace(cfg, seed=int(env_seed))
    return cfg


def _mapper(threads):
    if threads == 1:
        return lambda fn, xs: [fn(x) for x in xs]

    def run(fn, xs):
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, xs))

    return run


def _heatmap_name(view, frame):
    return f"hm_f{frame:05d}_v{view}.dwhm"


def _write_truth(outdir: Path, seq) -> None:
    with open(outdir / "truth_3d.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "joint", "x", "y", "z"])
        for frame in sorted(seq.truth_poses):
            pose = seq.truth_poses[frame]
            for j in range(pose.shape[0]):
                w.writerow([frame, j, repr(pose[j, 0]), repr(pose[j, 1]), repr(pose[j, 2])])
    with open(outdir / "truth_2d.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "frame", "joint", "u", "v"])
        for (view, frame) in sorted(seq.truth_projections):
            uv = seq.truth_projections[(view, frame)]
            for j in range(uv.shape[0]):
                w.writerow([view, frame, j, repr(uv[j, 0]), repr(uv[j, 1])])


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    outdir = Path(args.out or cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    bundle = cfgmod.bundle_from_config(cfg)
    seq = bundle.sequence_for_seed(cfg.seed)
    (outdir / "heatmaps").mkdir(exist_ok=True)
    with open(outdir / "arrivals.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "frame", "timestamp_s"])
        for a in seq.arrivals:
            w.writerow([a.view, a.frame, repr(a.timestamp)])
            write_heatmap(outdir / "heatmaps" / _heatmap_name(a.view, a.frame), a.heatmap)
    if args.dense:
        dense_dir = outdir / "dense"
        dense_dir.mkdir(exist_ok=True)
        for frame in sorted(seq.truth_poses):
            for cam in bundle.rig:
                hm = seq.dense_heatmap(cam.id, frame)
                write_heatmap(dense_dir / _heatmap_name(cam.id, frame), hm)
    cfgmod.save_rig(outdir / "rig.yaml", bundle.rig)
    _write_truth(outdir, seq)
    with open(outdir / "config.yaml", "w") as fh:
        fh.write(cfgmod.dump_config(cfg))
    print(
        f"synth: {len(seq.arrivals)} arrivals, {seq.num_slots} frame slots, "
        f"{bundle.joints} joints, rig of {len(bundle.rig)} -> {outdir}"
    )
    return 0


def _load_input_dir(indir: Path):
    rig = cfgmod.load_rig(indir / "rig.yaml")
    arrivals = []
    with open(indir / "arrivals.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            view = int(row["view"])
            frame = int(row["frame"])
            hm = read_heatmap(indir / "heatmaps" / _heatmap_name(view, frame))
            arrivals.append(Arrival(view=view, frame=frame, timestamp=float(row["timestamp_s"]), heatmap=hm))
    truth = None
    truth_path = indir / "truth_3d.csv"
    if truth_path.exists():
        rows = {}
        with open(truth_path, newline="") as fh:
            for row in csv.DictReader(fh):
                frame, joint = int(row["frame"]), int(row["joint"])
                rows.setdefault(frame, {})[joint] = (float(row["x"]), float(row["y"]), float(row["z"]))
        truth = {
            frame: np.array([joints[j] for j in sorted(joints)])
            for frame, joints in rows.items()
        }
    return rig, arrivals, truth


def _warper_filename(mode: int) -> str:
    return f"warper_m{mode:+d}.dwwt"


def _load_or_train_warpers(cfg, bundle, weights_dir, modes):
    bank = {}
    if weights_dir:
        for mode in modes:
            path = Path(weights_dir) / _warper_filename(mode)
            if path.exists():
                bank[mode] = load_weights(path)
        missing = [m for m in modes if m not in bank]
        if missing:
            raise ConfigError(
                f"weights dir {weights_dir} missing modes {missing}", key="weights"
            )
        return bank
    return train_warper_bank(
        bundle, modes, cfgmod.train_config_from_config(cfg), cfgmod.train_seed_list(cfg)
    )


def _write_poses_csv(path, skeletons) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "joint", "x", "y", "z", "residual"])
        for sk in skeletons:
            for j in range(sk.num_joints):
                w.writerow([
                    sk.frame, j,
                    repr(sk.joints[j, 0]), repr(sk.joints[j, 1]), repr(sk.joints[j, 2]),
                    repr(float(sk.per_joint_residual[j])),
                ])


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    variant = PipelineVariant(args.variant)
    outdir = Path(args.out or cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    bundle = cfgmod.bundle_from_config(cfg)

    if args.input:
        indir = Path(args.input)
        rig, arrivals, truth = _load_input_dir(indir)
        dense_dir = indir / "dense"
        if variant == PipelineVariant.DENSE_ORACLE and not dense_dir.is_dir():
            raise ConfigError(
                f"variant dense_oracle needs all-view frames; {indir} has no dense/ directory",
                key="variant",
            )
        bundle = replace(bundle, rig=rig)
    else:
        seq = bundle.sequence_for_seed(cfg.seed)
        rig, arrivals, truth = bundle.rig, seq.arrivals, seq.truth_poses
        dense_dir = None

    warpers = None
    if variant == PipelineVariant.FUSION_PLUS_WARPER:
        modes = list(range(1, len(rig)))
        warpers = _load_or_train_warpers(cfg, bundle, args.weights, modes)

    if variant == PipelineVariant.DENSE_ORACLE:
        frames = emitted_frames(arrivals, len(rig))
        if args.input:
            frames_map = {
                frame: {cam.id: read_heatmap(dense_dir / _heatmap_name(cam.id, frame)) for cam in rig}
                for frame in frames
            }
            skeletons = run_dense_frames(frames_map, rig, refine=cfg.eval.refine)
        else:
            from .pipeline import run_dense_oracle

            skeletons = run_dense_oracle(seq, frames, refine=cfg.eval.refine)
        schedule_rows = []
    else:
        result = run_sparse_stream(
            arrivals, rig, bundle.fusion, variant, warpers=warpers, refine=cfg.eval.refine
        )
        skeletons = result.skeletons
        schedule_rows = result.schedule_rows

    _write_poses_csv(outdir / "poses.csv", skeletons)
    if schedule_rows:
        write_schedule_csv(outdir / "schedule.csv", schedule_rows)
    if truth is not None:
        from .evaluation import _score

        report = _score(skeletons, truth, variant, cfg.seed, {"variant": variant.value}, {})
        write_report_json(outdir / "report.json", report)
        print(
            f"run: variant={variant.value} poses={len(skeletons)} "
            f"avg_mpjpe={report.avg_mpjpe:.3f}mm -> {outdir}"
        )
    else:
        print(f"run: variant={variant.value} poses={len(skeletons)} -> {outdir}")
    return 0


def cmd_train_warper(args) -> int:
    cfg = _resolve_config(args)
    outdir = Path(args.out or cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    bundle = cfgmod.bundle_from_config(cfg)
    m = len(bundle.rig)
    if args.modes:
        modes = [int(tok) for tok in args.modes.split(",")]
    else:
        modes = [m_ for m_ in range(-(m - 1), m) if m_ != 0]
    bad = [m_ for m_ in modes if m_ == 0 or abs(m_) > m - 1]
    if bad:
        raise ConfigError(f"modes {bad} outside +-(M-1) for M={m}", key="modes")
    bank = train_warper_bank(
        bundle, modes, cfgmod.train_config_from_config(cfg), cfgmod.train_seed_list(cfg)
    )
    for mode, weights in sorted(bank.items()):
        save_weights(outdir / _warper_filename(mode), weights)
    print(f"train-warper: trained modes {sorted(bank)} -> {outdir}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _resolve_config(args)
    outdir = Path(args.out or cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    bundle = cfgmod.bundle_from_config(cfg)
    seeds = list(range(args.seeds if args.seeds is not None else cfg.eval.seeds))
    threads = args.threads or (os.cpu_count() or 1)
    mapper = _mapper(threads)

    needs_warper = True
    if args.name == "ablation" and args.variants:
        wanted = [PipelineVariant(v) for v in args.variants.split(",")]
        needs_warper = PipelineVariant.FUSION_PLUS_WARPER in wanted
    warpers = None
    if needs_warper:
        modes = list(range(1, len(bundle.rig)))
        warpers = _load_or_train_warpers(cfg, bundle, args.weights, modes)

    violation = False
    if args.name == "ablation":
        variants = (
            [PipelineVariant(v) for v in args.variants.split(",")]
            if args.variants
            else list(PipelineVariant)
        )
        result = run_ablation(bundle, variants, seeds, warpers=warpers, parallel_map=mapper)
        rows = [[name, f"{mean:.3f}"] for name, mean in result.variant_means.items()]
        table = format_table(["variant", "mean_mpjpe_mm"], rows)
        violation = not result.ordering_ok
        xs = list(range(len(result.variant_means)))
        ys = [result.variant_means[v.value] for v in variants]
        write_line_plot_svg(outdir / "ablation.svg", xs, ys, "variant", "MPJPE (mm)", "ablation ladder")
    elif args.name == "interval_sweep":
        factors = [int(tok) for tok in (args.factors or "1,6,12").split(",")]
        result = interval_sweep(bundle, factors, seeds, warpers=warpers, parallel_map=mapper)
        rows = [[f, f"{result.means[f]:.3f}"] for f in factors]
        table = format_table(["interval_factor", "mean_mpjpe_mm"], rows)
        violation = not result.monotone
        write_line_plot_svg(
            outdir / "interval_sweep.svg", factors, [result.means[f] for f in factors],
            "interval factor", "MPJPE (mm)", "sampling-interval degradation",
        )
    elif args.name == "window_sweep":
        sizes = [int(tok) for tok in (args.windows or "4,6,10,12").split(",")]
        result = window_sweep(bundle, sizes, seeds, warpers=warpers, parallel_map=mapper)
        rows = [[x, f"{result.means[x]:.3f}"] for x in sizes]
        table = format_table(["window_size", "mean_mpjpe_mm"], rows)
        violation = not result.monotone
        write_line_plot_svg(
            outdir / "window_sweep.svg", sizes, [result.means[x] for x in sizes],
            "window size", "MPJPE (mm)", "non-uniform window degradation",
        )
    else:
        raise ConfigError(f"unknown experiment '{args.name}'", key="name")

    write_report_json(outdir / f"{args.name}.json", result)
    write_timings_json(outdir / "timings.json", result)
    with open(outdir / f"{args.name}.txt", "w") as fh:
        fh.write(table)
        if violation:
            notes = getattr(result, "violations", None) or ["monotonicity violated"]
            for note in notes:
                fh.write(f"VIOLATION: {note}\n")
    print(table, end="")
    if violation:
        for note in getattr(result, "violations", None) or ["monotonicity violated"]:
            print(f"VIOLATION: {note}")
        if args.strict:
            raise StrictViolation("ordering violation under --strict")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.file)
    with open(path, "rb") as fh:
        raw = fh.read(28)
    if raw[:4] != DWHM_MAGIC:
        print(f"{path}: not a DWHM file", file=sys.stderr)
        return 1
    version, view, frame, joints, height, width = struct.unpack("<6I", raw[4:28])
    print(f"{path.name}: DWHM v{version} view={view} frame={frame} J={joints} H={height} W={width}")
    hm = read_heatmap(path)
    for j in range(hm.joints):
        ch = hm.data[j]
        r, c = divmod(int(np.argmax(ch)), hm.width)
        print(
            f"  joint {j}: min={ch.min():.6f} max={ch.max():.6f} "
            f"mean={ch.mean():.6f} argmax=(x={c}, y={r})"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densewarp",
        description="Sparse interleaved multi-view 3D pose pipeline on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("-c", "--config", help="YAML config file (defaults apply if omitted)")
        p.add_argument("-o", "--out", help="output directory (default: config output_dir)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. fusion.lambda=0.3 (repeatable)")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--lambda", dest="lam", type=float, help="fusion blend weight")
        p.add_argument("--line-step", dest="line_step", type=float,
                       help="epipolar line sampling step in px")

    p_synth = sub.add_parser("synth", help="synthesize heatmaps, rig, and ground truth")
    add_common(p_synth)
    p_synth.add_argument("--dense", action="store_true",
                         help="also write all-view heatmaps for every frame slot")
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="stream arrivals through one pipeline variant")
    add_common(p_run)
    p_run.add_argument("--input", help="input directory from synth (omit with --synth)")
    p_run.add_argument("--synth", action="store_true", help="synthesize inputs in memory")
    p_run.add_argument("--variant", default=PipelineVariant.FUSION_PLUS_WARPER.value,
                       choices=[v.value for v in PipelineVariant])
    p_run.add_argument("--weights", help="directory of trained DWWT warper weights")
    p_run.set_defaults(func=cmd_run)

    p_train = sub.add_parser("train-warper", help="train per-mode warper weights")
    add_common(p_train)
    p_train.add_argument("--modes", help="comma-separated signed modes (default: all +-1..(M-1))")
    p_train.set_defaults(func=cmd_train_warper)

    p_exp = sub.add_parser("experiment", help="run a multi-seed experiment")
    add_common(p_exp)
    p_exp.add_argument("name", choices=["ablation", "interval_sweep", "window_sweep"])
    p_exp.add_argument("--seeds", type=int, help="number of seeds (default: eval.seeds)")
    p_exp.add_argument("--variants", help="ablation only: comma-separated variant subset")
    p_exp.add_argument("--factors", help="interval_sweep: comma-separated factors (default 1,6,12)")
    p_exp.add_argument("--windows", help="window_sweep: comma-separated sizes (default 4,6,10,12)")
    p_exp.add_argument("--weights", help="directory of trained DWWT warper weights")
    p_exp.add_argument("--strict", action="store_true",
                       help="exit 4 when an ordering/monotonicity violation occurs")
    p_exp.add_argument("--threads", type=int, help="worker cap (default: machine parallelism)")
    p_exp.set_defaults(func=cmd_experiment)

    p_ins = sub.add_parser("inspect", help="dump a DWHM file header and channel stats")
    p_ins.add_argument("file")
    p_ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OutOfOrderArrival as exc:
        print(f"stream order error: {exc}", file=sys.stderr)
        return 3
    except StrictViolation as exc:
        print(f"strict: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1
    except DenseWarpError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
