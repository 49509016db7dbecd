"""Synthetic ground truth: sinusoidal joint motion, circular rigs, noisy heatmaps.

Sinusoidal motion gives closed-form velocity bounds, which is what makes the
interval-sweep experiments controllable. Noise (keypoint jitter + channel
dropout) stands in for 2D detector error. All randomness is drawn from
per-(view, frame) sub-generators of one master seed, so parallel and serial
generation agree bitwise and the dense and sparse renderings of the same
(view, frame) are identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import LookAtDegenerate, OutOfBounds
from .geometry import CameraView
from .heatmap import Heatmap, Keypoint2D, render_gaussian
from .scheduler import SamplingPlan, generate_plan_times

# Upright 17-joint stick figure (meters, z up): pelvis through ankles.
_CANONICAL_POSE = np.array([
    [0.00, 0.00, 1.00],   # pelvis
    [0.00, 0.00, 1.25],   # spine
    [0.00, 0.00, 1.40],   # thorax
    [0.00, 0.00, 1.52],   # neck
    [0.00, 0.00, 1.65],   # head
    [0.20, 0.00, 1.45],   # left shoulder
    [-0.20, 0.00, 1.45],  # right shoulder
    [0.35, 0.00, 1.20],   # left elbow
    [-0.35, 0.00, 1.20],  # right elbow
    [0.45, 0.00, 0.95],   # left wrist
    [-0.45, 0.00, 0.95],  # right wrist
    [0.12, 0.00, 0.95],   # left hip
    [-0.12, 0.00, 0.95],  # right hip
    [0.14, 0.00, 0.55],   # left knee
    [-0.14, 0.00, 0.55],  # right knee
    [0.15, 0.00, 0.10],   # left ankle
    [-0.15, 0.00, 0.10],  # right ankle
])


@dataclass(frozen=True)
class MotionModel:
    """Per-joint sinusoidal drift around a rest pose, boxed for safety."""

    base_pose: np.ndarray
    amplitude: np.ndarray
    frequency: np.ndarray
    phase: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    seed: int = 0

    def __post_init__(self):
        for name in ("base_pose", "amplitude", "frequency", "phase", "bbox_min", "bbox_max"):
            a = np.asarray(getattr(self, name), dtype=float).copy()
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        j = self.base_pose.shape[0]
        if self.base_pose.shape != (j, 3) or self.amplitude.shape != (j, 3):
            raise ValueError("base_pose and amplitude must be (J, 3)")
        if self.frequency.shape != (j,) or self.phase.shape != (j,):
            raise ValueError("frequency and phase must be (J,)")
        if (self.amplitude < 0).any() or (self.frequency < 0).any():
            raise ValueError("amplitudes and frequencies must be >= 0")

    @property
    def joints(self) -> int:
        return self.base_pose.shape[0]


def default_motion(joints=17, seed=0, amplitude_m=0.2, frequency_hz=0.5) -> MotionModel:
    """Stick-figure model with seeded per-joint amplitudes, frequencies, phases."""
    if not 1 <= joints <= len(_CANONICAL_POSE):
        raise ValueError(f"joints must be in [1, {len(_CANONICAL_POSE)}]")
    rng = np.random.default_rng(seed)
    base = _CANONICAL_POSE[:joints].copy()
    amp = amplitude_m * rng.uniform(0.5, 1.0, size=(joints, 3))
    freq = frequency_hz * rng.uniform(0.6, 1.0, size=joints)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=joints)
    margin = 1e-6
    return MotionModel(
        base_pose=base,
        amplitude=amp,
        frequency=freq,
        phase=phase,
        bbox_min=(base - amp).min(axis=0) - margin,
        bbox_max=(base + amp).max(axis=0) + margin,
        seed=seed,
    )


def pose_at(model: MotionModel, t: float) -> np.ndarray:
    """Joint positions at time t; deterministic, periodic per joint."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    arg = 2.0 * np.pi * model.frequency * t + model.phase
    pose = model.base_pose + model.amplitude * np.sin(arg)[:, None]
    if (pose < model.bbox_min - 1e-12).any() or (pose > model.bbox_max + 1e-12).any():
        raise OutOfBounds(f"pose at t={t} leaves the bounding box")
    return pose


@dataclass(frozen=True)
class RigSpec:
    """M cameras on a horizontal circle, all aimed at one target point."""

    views: int
    radius: float
    height: float
    look_at: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    image_size: tuple

    def __post_init__(self):
        if self.views < 2:
            raise ValueError("need at least 2 views")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        la = np.asarray(self.look_at, dtype=float).copy()
        la.flags.writeable = False
        object.__setattr__(self, "look_at", la)
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))


def default_rig(views=4, image_size=(32, 32), radius=3.2, height=1.2,
                half_extent=1.05) -> RigSpec:
    """Rig sized so a figure within half_extent meters of (0, 0, 0.9) stays in frame."""
    w, h = image_size
    f = 0.40 * min(w, h) * (radius - half_extent) / half_extent
    return RigSpec(
        views=views,
        radius=radius,
        height=height,
        look_at=np.array([0.0, 0.0, 0.9]),
        fx=f,
        fy=f,
        cx=(w - 1) / 2.0,
        cy=(h - 1) / 2.0,
        image_size=(w, h),
    )


def build_rig(spec: RigSpec):
    """Equal-angle cameras looking at spec.look_at; world z is up."""
    cams = []
    up = np.array([0.0, 0.0, 1.0])
    k = np.array([
        [spec.fx, 0.0, spec.cx],
        [0.0, spec.fy, spec.cy],
        [0.0, 0.0, 1.0],
    ])
    for v in range(spec.views):
        theta = 2.0 * np.pi * v / spec.views
        center = np.array([
            spec.look_at[0] + spec.radius * np.cos(theta),
            spec.look_at[1] + spec.radius * np.sin(theta),
            spec.height,
        ])
        forward = spec.look_at - center
        dist = np.linalg.norm(forward)
        if dist < 1e-9:
            raise LookAtDegenerate(f"camera {v} sits on the look-at point")
        z_c = forward / dist
        x_c = np.cross(z_c, up)
        nx = np.linalg.norm(x_c)
        if nx < 1e-9:
            raise LookAtDegenerate(f"camera {v} looks straight along the up axis")
        x_c /= nx
        y_c = np.cross(z_c, x_c)
        r = np.stack([x_c, y_c, z_c])
        cams.append(CameraView(
            id=v, intrinsics=k, rotation=r, translation=-r @ center,
            image_size=spec.image_size,
        ))
    return cams


def project_many(cam: CameraView, points) -> np.ndarray:
    """Project (N, 3) world points to (N, 2) pixels (all must be in front)."""
    pts = np.asarray(points, dtype=float)
    cc = cam.rotation @ pts.T + cam.translation[:, None]
    if (cc[2] <= 1e-9).any():
        raise OutOfBounds("a point is behind a camera")
    q = cam.intrinsics @ cc
    return (q[:2] / q[2]).T


def validate_scene(model: MotionModel, rig) -> None:
    """Every bounding-box corner must project inside every image rectangle."""
    lo, hi = model.bbox_min, model.bbox_max
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    for cam in rig:
        uv = project_many(cam, corners)
        w, h = cam.image_size
        if (uv[:, 0] < -0.5).any() or (uv[:, 0] > w - 0.5).any() \
                or (uv[:, 1] < -0.5).any() or (uv[:, 1] > h - 0.5).any():
            raise OutOfBounds(f"bounding box leaves the image of camera {cam.id}")


@dataclass(frozen=True)
class NoiseConfig:
    """Detector-error stand-in: isotropic peak jitter plus channel dropout."""

    peak_jitter_px: float = 0.0
    dropout_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.peak_jitter_px < 0:
            raise ValueError("peak_jitter_px must be >= 0")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must be in [0, 1]")


class Arrival(NamedTuple):
    view: int
    frame: int
    timestamp: float
    heatmap: Heatmap


@dataclass
class SyntheticSequence:
    """Sparse arrivals plus the dense ground truth that makes them checkable."""

    model: MotionModel
    rig: list
    plan: SamplingPlan
    sigma_px: float
    noise: NoiseConfig
    delta: float
    num_slots: int
    arrivals: list = field(default_factory=list)
    truth_poses: dict = field(default_factory=dict)
    truth_projections: dict = field(default_factory=dict)

    def slot_time(self, frame: int) -> float:
        return (frame - 1) * self.delta

    def dense_heatmap(self, view: int, frame: int) -> Heatmap:
        """Noisy rendering of (view, frame); bitwise equal to the sparse arrival
        when that (view, frame) was sampled."""
        return render_view_frame(
            self.truth_projections[(view, frame)], self.rig[view], view, frame,
            self.sigma_px, self.noise,
        )


def render_view_frame(projections, cam: CameraView, view, frame, sigma_px, noise: NoiseConfig) -> Heatmap:
    """Render one noisy heatmap from true projections, seeded by (view, frame)."""
    rng = np.random.default_rng([noise.seed, view, frame])
    w, h = cam.image_size
    pts = np.asarray(projections, dtype=float)
    jitter = rng.normal(0.0, noise.peak_jitter_px, size=pts.shape) if noise.peak_jitter_px > 0 else 0.0
    drops = rng.uniform(size=pts.shape[0]) < noise.dropout_prob
    pts = np.clip(pts + jitter, [-0.5, -0.5], [w - 0.5, h - 0.5])
    kps = [
        Keypoint2D(joint=j, position=pts[j], confidence=1.0)
        for j in range(pts.shape[0])
        if not drops[j]
    ]
    if not kps:
        data = np.zeros((pts.shape[0], h, w))
        return Heatmap(view=view, frame=frame, data=data)
    hm = render_gaussian(kps, w, h, sigma_px, view=view, frame=frame)
    if hm.joints < pts.shape[0]:
        data = np.zeros((pts.shape[0], h, w))
        data[: hm.joints] = hm.data
        hm = Heatmap(view=view, frame=frame, data=data)
    return hm


def sample_sequence(model: MotionModel, rig, plan: SamplingPlan, duration, sigma_px,
                    noise: NoiseConfig) -> SyntheticSequence:
    """Generate the sparse interleaved stream plus dense 3D/2D ground truth."""
    if sigma_px <= 0:
        raise ValueError("sigma_px must be positive")
    validate_scene(model, rig)
    times = generate_plan_times(plan, duration)
    delta = plan.phase_step
    num_slots = max(f for _, f, _ in times) if times else 0
    seq = SyntheticSequence(
        model=model, rig=rig, plan=plan, sigma_px=sigma_px, noise=noise,
        delta=delta, num_slots=num_slots,
    )
    for frame in range(1, num_slots + 1):
        t = (frame - 1) * delta
        pose = pose_at(model, t)
        seq.truth_poses[frame] = pose
        for cam in rig:
            seq.truth_projections[(cam.id, frame)] = project_many(cam, pose)
    for view, frame, t in times:
        hm = render_view_frame(
            seq.truth_projections[(view, frame)], rig[view], view, frame, sigma_px, noise
        )
        seq.arrivals.append(Arrival(view=view, frame=frame, timestamp=t, heatmap=hm))
    return seq
