"""Metrics and experiment runners: ablation ladder, interval and window sweeps.

MPJPE is absolute (the pipeline triangulates metric 3D), reported in
scene-mm. P-MPJPE aligns the prediction to the truth with a per-frame
similarity transform (rotation + translation + scale, reflection disallowed)
before scoring. Experiment runners compare seed means, never single seeds.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateConfiguration, JointCountMismatch
from .fusion import FusionConfig
from .heatmap import Heatmap, Keypoint2D, render_gaussian
from .pipeline import (
    PipelineVariant,
    fuse_window_entry,
    _ResponseCache,
    run_dense_oracle,
    run_sparse_stream,
)
from .scheduler import SamplingPlan, WindowState
from .synth import MotionModel, NoiseConfig, default_motion, sample_sequence
from .triangulate import Skeleton3D
from .warper import TrainConfig, WarpInput, warper_train


def _mpjpe_arrays(pred, truth):
    return float(np.mean(np.linalg.norm(pred - truth, axis=-1)))


def mpjpe(pred: Skeleton3D, truth: Skeleton3D) -> float:
    """Mean Euclidean joint error, in the skeletons' own units."""
    if pred.num_joints != truth.num_joints:
        raise JointCountMismatch(f"{pred.num_joints} vs {truth.num_joints} joints")
    return _mpjpe_arrays(pred.joints, truth.joints)


def similarity_align(pred_pts, truth_pts):
    """Best similarity transform (s, R, t) mapping pred onto truth.

    Closed-form orthogonal-Procrustes solution on the cross-covariance SVD;
    the smallest singular direction is sign-corrected so no reflection can
    sneak in.
    """
    x = np.asarray(pred_pts, dtype=float)
    y = np.asarray(truth_pts, dtype=float)
    n = x.shape[0]
    if n < 3:
        raise DegenerateConfiguration("need at least 3 joints to align")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    sy = np.linalg.svd(yc, compute_uv=False)
    if sy[0] < 1e-12 or sy[1] < 1e-9 * sy[0]:
        raise DegenerateConfiguration("truth joints are collinear or coincident")
    var_x = float((xc**2).sum()) / n
    if var_x < 1e-24:
        raise DegenerateConfiguration("prediction joints are coincident")
    cov = yc.T @ xc / n
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2, 2] = -1.0
    rot = u @ s_fix @ vt
    scale = float(np.trace(np.diag(d) @ s_fix)) / var_x
    trans = my - scale * rot @ mx
    return scale, rot, trans


def pmpjpe(pred: Skeleton3D, truth: Skeleton3D) -> float:
    """MPJPE after per-frame similarity (Procrustes) alignment."""
    if pred.num_joints != truth.num_joints:
        raise JointCountMismatch(f"{pred.num_joints} vs {truth.num_joints} joints")
    scale, rot, trans = similarity_align(pred.joints, truth.joints)
    aligned = scale * (rot @ pred.joints.T).T + trans
    return _mpjpe_arrays(aligned, truth.joints)


# ---------------------------------------------------------------------------
# scene bundles and single-variant evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneBundle:
    """Everything needed to synthesize and run one scene configuration."""

    joints: int
    image_size: tuple
    sigma_px: float
    amplitude_m: float
    frequency_hz: float
    rig: list
    plan: SamplingPlan
    fusion: FusionConfig
    noise: NoiseConfig
    duration_s: float
    refine: bool = True
    motion_seed_base: int = 1000

    def motion_for_seed(self, seed: int) -> MotionModel:
        return default_motion(
            joints=self.joints,
            seed=self.motion_seed_base + seed,
            amplitude_m=self.amplitude_m,
            frequency_hz=self.frequency_hz,
        )

    def sequence_for_seed(self, seed: int):
        model = self.motion_for_seed(seed)
        noise = replace(self.noise, seed=seed)
        return sample_sequence(
            model, self.rig, self.plan, self.duration_s, self.sigma_px, noise
        )


@dataclass
class EvalReport:
    """Per-run metric summary; averages are exact means of the per-frame lists."""

    variant: str
    seed: int
    per_frame_mpjpe: list
    avg_mpjpe: float
    avg_pmpjpe: float
    per_joint_mpjpe: list
    config_echo: dict
    wall_clock_s: dict = field(default_factory=dict)


def emitted_frames(arrivals, views: int):
    """Frames the sliding window emits: every arrival from the M-th onward."""
    seen = set()
    out = []
    for a in arrivals:
        seen.add(a.view)
        if len(seen) == views:
            out.append(a.frame)
    return out


def _score(skeletons, truth_poses, variant, seed, config_echo, wall_clock):
    per_frame = []
    per_frame_p = []
    per_joint = None
    for sk in skeletons:
        truth = Skeleton3D(
            frame=sk.frame,
            joints=truth_poses[sk.frame] * 1000.0,
            per_joint_residual=np.zeros(sk.num_joints),
        )
        pred = Skeleton3D(
            frame=sk.frame, joints=sk.joints * 1000.0, per_joint_residual=sk.per_joint_residual
        )
        per_frame.append(mpjpe(pred, truth))
        per_frame_p.append(pmpjpe(pred, truth))
        errs = np.linalg.norm(pred.joints - truth.joints, axis=1)
        per_joint = errs if per_joint is None else per_joint + errs
    per_joint = (per_joint / len(skeletons)).tolist() if skeletons else []
    return EvalReport(
        variant=str(variant.value if isinstance(variant, PipelineVariant) else variant),
        seed=seed,
        per_frame_mpjpe=per_frame,
        avg_mpjpe=float(np.mean(per_frame)) if per_frame else 0.0,
        avg_pmpjpe=float(np.mean(per_frame_p)) if per_frame_p else 0.0,
        per_joint_mpjpe=per_joint,
        config_echo=config_echo,
        wall_clock_s=wall_clock,
    )


def evaluate_variant(bundle: SceneBundle, variant: PipelineVariant, seed: int,
                     warpers=None) -> EvalReport:
    """Synthesize the seed's scene, run one variant, and score against truth."""
    t0 = time.perf_counter()
    seq = bundle.sequence_for_seed(seed)
    t1 = time.perf_counter()
    if variant == PipelineVariant.DENSE_ORACLE:
        frames = emitted_frames(seq.arrivals, len(bundle.rig))
        skeletons = run_dense_oracle(seq, frames, refine=bundle.refine)
    else:
        result = run_sparse_stream(
            seq.arrivals, bundle.rig, bundle.fusion, variant,
            warpers=warpers, refine=bundle.refine,
        )
        skeletons = result.skeletons
    t2 = time.perf_counter()
    echo = {
        "variant": variant.value,
        "seed": seed,
        "lambda": bundle.fusion.lam,
        "line_step": bundle.fusion.line_step,
        "sigma_px": bundle.sigma_px,
        "peak_jitter_px": bundle.noise.peak_jitter_px,
        "dropout_prob": bundle.noise.dropout_prob,
        "plan_mode": bundle.plan.mode,
        "camera_rate_hz": bundle.plan.camera_rate,
        "window_size": bundle.plan.window_size,
        "joints": bundle.joints,
        "image_size": list(bundle.image_size),
        "duration_s": bundle.duration_s,
    }
    wall = {"synth": t1 - t0, "pipeline": t2 - t1}
    return _score(skeletons, seq.truth_poses, variant, seed, echo, wall)


# ---------------------------------------------------------------------------
# warper training data
# ---------------------------------------------------------------------------

def build_training_samples(bundle: SceneBundle, seeds, modes, max_per_seed=None):
    """(WarpInput, clean target heatmap) pairs per temporal mode.

    Walks the sliding window over training-seed scenes; each stale view in
    each emitted window yields one sample per requested mode whose target
    frame falls inside the window. Targets are noise-free renderings of the
    true projections. ``max_per_seed`` caps samples per (mode, seed): many
    seeds with few windows each generalize better than few seeds in full.
    """
    samples = {m: [] for m in modes}
    w, h = bundle.image_size
    for seed in seeds:
        per_seed = {m: 0 for m in modes}
        seq = bundle.sequence_for_seed(seed)
        state = WindowState(views=len(bundle.rig))
        cache = _ResponseCache(bundle.rig, bundle.fusion)
        for arrival in seq.arrivals:
            if max_per_seed is not None and all(per_seed[m] >= max_per_seed for m in modes):
                break
            window = state.slide(arrival.view, arrival.frame, arrival.heatmap)
            if window is None:
                continue
            cache.prune({(v, f) for v, f, _ in window})
            frames_in_window = [f for _, f, _ in window]
            for view, frame, hm in window:
                fused = None
                for target in frames_in_window:
                    offset = target - frame
                    if offset == 0 or offset not in samples:
                        continue
                    if max_per_seed is not None and per_seed[offset] >= max_per_seed:
                        continue
                    per_seed[offset] += 1
                    if fused is None:
                        fused = fuse_window_entry(view, window, bundle.rig, bundle.fusion, cache)
                    corrected = Heatmap(view=view, frame=target, data=fused)
                    truth_uv = seq.truth_projections[(view, target)]
                    target_hm = render_gaussian(
                        [Keypoint2D(joint=j, position=truth_uv[j], confidence=1.0)
                         for j in range(bundle.joints)],
                        w, h, bundle.sigma_px, view=view, frame=target,
                    )
                    samples[offset].append(
                        (WarpInput(corrected=corrected, anchor=hm, relative_offset=offset),
                         target_hm)
                    )
    return samples


def train_warper_bank(bundle: SceneBundle, modes, train_cfg: TrainConfig, train_seeds,
                      max_per_seed=None):
    """One trained WarperWeights per requested temporal mode."""
    samples = build_training_samples(bundle, train_seeds, modes, max_per_seed=max_per_seed)
    bank = {}
    for i, mode in enumerate(sorted(modes)):
        cfg = replace(train_cfg, seed=train_cfg.seed + i)
        bank[mode] = warper_train(samples[mode], mode, cfg)
    return bank


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

_LADDER = (
    PipelineVariant.REPLICATE_ONLY,
    PipelineVariant.SPATIAL_FUSION,
    PipelineVariant.FUSION_PLUS_WARPER,
    PipelineVariant.DENSE_ORACLE,
)


@dataclass
class AblationResult:
    variant_means: dict
    per_seed: dict
    ordering_ok: bool
    violations: list
    dense_exceeded_seeds: list
    seeds: list
    wall_clock_s: dict = field(default_factory=dict)


def run_ablation(bundle: SceneBundle, variants, seeds, warpers=None,
                 parallel_map=None) -> AblationResult:
    """Run each variant over the identical per-seed input streams.

    Ordering is asserted on seed means (replicate_only >= spatial_fusion >=
    fusion_plus_warper >= dense_oracle); a violation is recorded in the
    result, never silently dropped.
    """
    t0 = time.perf_counter()
    mapper = parallel_map if parallel_map is not None else lambda fn, xs: [fn(x) for x in xs]
    per_seed = {v.value: [] for v in variants}
    for variant in variants:
        reports = mapper(
            lambda s, _v=variant: evaluate_variant(bundle, _v, s, warpers=warpers), list(seeds)
        )
        per_seed[variant.value] = [r.avg_mpjpe for r in reports]
    means = {name: float(np.mean(vals)) for name, vals in per_seed.items()}
    violations = []
    ladder = [v for v in _LADDER if v in variants]
    for hi, lo in zip(ladder, ladder[1:]):
        if means[hi.value] < means[lo.value]:
            violations.append(
                f"mean MPJPE ordering violated: {hi.value} ({means[hi.value]:.3f}) "
                f"< {lo.value} ({means[lo.value]:.3f})"
            )
    dense_exceeded = []
    if PipelineVariant.DENSE_ORACLE in variants:
        dense_vals = per_seed[PipelineVariant.DENSE_ORACLE.value]
        for i, seed in enumerate(seeds):
            for v in variants:
                if v == PipelineVariant.DENSE_ORACLE:
                    continue
                if dense_vals[i] > per_seed[v.value][i]:
                    dense_exceeded.append(int(seed))
                    break
    return AblationResult(
        variant_means=means,
        per_seed=per_seed,
        ordering_ok=not violations,
        violations=violations,
        dense_exceeded_seeds=dense_exceeded,
        seeds=list(seeds),
        wall_clock_s={"total": time.perf_counter() - t0},
    )


@dataclass
class SweepResult:
    parameter: str
    values: list
    means: dict
    per_seed: dict
    monotone: bool
    seeds: list
    wall_clock_s: dict = field(default_factory=dict)


def interval_sweep(bundle: SceneBundle, factors, seeds, warpers=None,
                   variant=PipelineVariant.FUSION_PLUS_WARPER,
                   parallel_map=None) -> SweepResult:
    """Scale the slot spacing by each factor and measure mean MPJPE.

    The interval factor divides the camera rate, so factor k multiplies the
    sampling interval by k while the window semantics stay fixed.
    """
    t0 = time.perf_counter()
    mapper = parallel_map if parallel_map is not None else lambda fn, xs: [fn(x) for x in xs]
    means = {}
    per_seed = {}
    for factor in factors:
        plan = SamplingPlan(
            views=bundle.plan.views,
            camera_rate=bundle.plan.camera_rate / factor,
            mode=bundle.plan.mode,
            window_size=bundle.plan.window_size,
            seed=bundle.plan.seed,
        )
        scaled = replace(bundle, plan=plan, duration_s=bundle.duration_s * factor)
        reports = mapper(
            lambda s, _b=scaled: evaluate_variant(_b, variant, s, warpers=warpers), list(seeds)
        )
        vals = [r.avg_mpjpe for r in reports]
        per_seed[factor] = vals
        means[factor] = float(np.mean(vals))
    ordered = [means[f] for f in factors]
    monotone = all(a <= b + 1e-12 for a, b in zip(ordered, ordered[1:]))
    return SweepResult(
        parameter="interval_factor",
        values=list(factors),
        means=means,
        per_seed=per_seed,
        monotone=monotone,
        seeds=list(seeds),
        wall_clock_s={"total": time.perf_counter() - t0},
    )


def window_sweep(bundle: SceneBundle, window_sizes, seeds, warpers=None,
                 variant=PipelineVariant.FUSION_PLUS_WARPER,
                 parallel_map=None) -> SweepResult:
    """Non-uniform window-size sweep; x == M is the uniform baseline."""
    t0 = time.perf_counter()
    mapper = parallel_map if parallel_map is not None else lambda fn, xs: [fn(x) for x in xs]
    m = bundle.plan.views
    means = {}
    per_seed = {}
    for x in window_sizes:
        if x < m:
            raise ValueError(f"window size {x} smaller than the {m}-view rig")
        if x == m:
            plan = replace(bundle.plan, mode="uniform", window_size=0)
        else:
            plan = replace(bundle.plan, mode="non_uniform", window_size=x)
        swept = replace(bundle, plan=plan)
        reports = mapper(
            lambda s, _b=swept: evaluate_variant(_b, variant, s, warpers=warpers), list(seeds)
        )
        vals = [r.avg_mpjpe for r in reports]
        per_seed[x] = vals
        means[x] = float(np.mean(vals))
    ordered = [means[x] for x in window_sizes]
    monotone = all(a <= b + 1e-12 for a, b in zip(ordered, ordered[1:]))
    return SweepResult(
        parameter="window_size",
        values=list(window_sizes),
        means=means,
        per_seed=per_seed,
        monotone=monotone,
        seeds=list(seeds),
        wall_clock_s={"total": time.perf_counter() - t0},
    )


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------

def report_to_dict(report) -> dict:
    """Dataclass report to plain dict, wall clock stripped (non-deterministic)."""
    out = {}
    for key, val in vars(report).items():
        if key == "wall_clock_s":
            continue
        if isinstance(val, dict):
            out[key] = {str(k): v for k, v in val.items()}
        else:
            out[key] = val
    return out


def write_report_json(path, report) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_timings_json(path, report) -> None:
    """Wall-clock sidecar; the one output file excluded from determinism."""
    with open(path, "w") as fh:
        json.dump({str(k): v for k, v in report.wall_clock_s.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_table(headers, rows) -> str:
    """Aligned-column text table."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_line_plot_svg(path, xs, ys, xlabel, ylabel, title) -> None:
    """Deterministic single-series SVG line plot."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "densewarp"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
