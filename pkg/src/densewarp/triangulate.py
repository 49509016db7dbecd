"""Multi-view 3D recovery: linear triangulation plus Gauss-Newton refinement.

Joints are triangulated independently. The epipolar-consistency score of the
measured 2D points is exposed as a diagnostic only; it does not enter the
minimized objective because it is constant in the 3D point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateGeometry,
    InsufficientViews,
    NonFinite,
    PointBehindCamera,
)
from .geometry import CameraView, fundamental_from_cameras, project_point


@dataclass(frozen=True)
class Observation:
    """One decoded 2D point with its confidence weight."""

    view: int
    point: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.point, dtype=float).copy()
        if not np.isfinite(p).all():
            raise NonFinite("observation point contains NaN/Inf")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight must be in [0, 1], got {self.weight}")
        p.flags.writeable = False
        object.__setattr__(self, "point", p)


@dataclass(frozen=True)
class Skeleton3D:
    """J joint positions for one frame plus per-joint RMS reprojection error."""

    frame: int
    joints: np.ndarray
    per_joint_residual: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=float).copy()
        r = np.asarray(self.per_joint_residual, dtype=float).copy()
        if j.ndim != 2 or j.shape[1] != 3:
            raise ValueError(f"joints must be (J, 3), got {j.shape}")
        if not np.isfinite(j).all():
            raise NonFinite("skeleton contains NaN/Inf")
        if r.shape != (j.shape[0],) or (r < 0).any():
            raise ValueError("per_joint_residual must be J non-negative scalars")
        j.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "per_joint_residual", r)

    @property
    def num_joints(self) -> int:
        return self.joints.shape[0]


def _camera_for(rig, view):
    for cam in rig:
        if cam.id == view:
            return cam
    raise ValueError(f"no camera with id {view} in rig")


def triangulate_dlt(obs, rig) -> np.ndarray:
    """Weighted linear triangulation from the cross-product constraint.

    Each observation contributes two rows of q x (P X) = 0, normalized to
    unit norm before weighting; the solution is the SVD null direction.
    """
    active = [o for o in obs if o.weight > 0.0]
    if len({o.view for o in active}) < 2:
        raise InsufficientViews("need observations from at least 2 views with positive weight")
    rows = []
    for o in active:
        p = _camera_for(rig, o.view).projection().p
        u, v = o.point
        for row in (u * p[2] - p[0], v * p[2] - p[1]):
            n = np.linalg.norm(row)
            if n > 0:
                rows.append(o.weight * row / n)
    a = np.vstack(rows)
    _, s, vt = np.linalg.svd(a)
    if s.size >= 4 and (s[-2] - s[-1]) < 1e-12 * s[0]:
        raise DegenerateGeometry("two smallest singular values coincide; solution ambiguous")
    h = vt[-1]
    if abs(h[3]) < 1e-12 * np.linalg.norm(h):
        raise DegenerateGeometry("triangulated point at infinity")
    return h[:3] / h[3]


def _objective(x, active, cams):
    """Weighted squared reprojection error; inf if x falls behind a camera."""
    total = 0.0
    for o, cam in zip(active, cams):
        depth = (cam.rotation @ x + cam.translation)[2]
        if depth <= 1e-9:
            return np.inf
        r = o.point - project_point(cam, x)
        total += o.weight * float(r @ r)
    return total


def reprojection_rms(x, obs, rig) -> float:
    """Weighted RMS reprojection error of a 3D point, in pixels."""
    active = [o for o in obs if o.weight > 0.0]
    cams = [_camera_for(rig, o.view) for o in active]
    f = _objective(x, active, cams)
    wsum = sum(o.weight for o in active)
    return float(np.sqrt(f / wsum)) if np.isfinite(f) else np.inf


class RefineResult(NamedTuple):
    point: np.ndarray
    residual: float
    hit_behind_camera: bool
    iterations: int


def refine_gauss_newton(x0, obs, rig, iters: int = 20, tol: float = 1e-10) -> RefineResult:
    """Gauss-Newton on the weighted reprojection objective with step halving.

    The returned objective never exceeds the starting one; a trial step that
    puts the point behind a camera is treated as a failed step (the last
    valid iterate is kept and the result is flagged).
    """
    x = np.asarray(x0, dtype=float).copy()
    if not np.isfinite(x).all():
        raise NonFinite("x0 contains NaN/Inf")
    active = [o for o in obs if o.weight > 0.0]
    if len({o.view for o in active}) < 2:
        raise InsufficientViews("need observations from at least 2 views with positive weight")
    cams = [_camera_for(rig, o.view) for o in active]
    wsum = sum(o.weight for o in active)
    f_cur = _objective(x, active, cams)
    if not np.isfinite(f_cur):
        raise PointBehindCamera("x0 is behind a contributing camera")

    hit_behind = False
    iterations = 0
    for _ in range(iters):
        iterations += 1
        a = np.zeros((3, 3))
        g = np.zeros(3)
        for o, cam in zip(active, cams):
            kr = cam.intrinsics @ cam.rotation
            p = cam.intrinsics @ (cam.rotation @ x + cam.translation)
            uv = p[:2] / p[2]
            jac = (kr[:2] - np.outer(uv, kr[2])) / p[2]
            r = o.point - uv
            a += o.weight * jac.T @ jac
            g += o.weight * jac.T @ r
        try:
            step = np.linalg.solve(a, g)
        except np.linalg.LinAlgError:
            break
        accepted = False
        for _ in range(9):
            trial = x + step
            f_trial = _objective(trial, active, cams)
            if not np.isfinite(f_trial):
                hit_behind = True
            if f_trial < f_cur:
                x, f_cur = trial, f_trial
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            break
        if np.linalg.norm(step) < tol:
            break
    return RefineResult(x, float(np.sqrt(f_cur / wsum)), hit_behind, iterations)


def epipolar_consistency_score(obs, rig) -> float:
    """Sum over view pairs of squared epipolar residuals (unit-Frobenius F).

    Diagnostic only: the quantity depends on the measured points, not on any
    triangulated 3D point, so adding it to the refinement objective would
    change nothing.
    """
    if len({o.view for o in obs}) < 2:
        raise InsufficientViews("need at least 2 views")
    ordered = sorted(obs, key=lambda o: o.view)
    total = 0.0
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            oi, oj = ordered[i], ordered[j]
            if oi.view == oj.view:
                continue
            f = fundamental_from_cameras(_camera_for(rig, oi.view), _camera_for(rig, oj.view))
            qi = np.array([oi.point[0], oi.point[1], 1.0])
            qj = np.array([oj.point[0], oj.point[1], 1.0])
            total += float(qj @ f.f @ qi) ** 2
    return total
