"""Pinhole cameras, projection, and pairwise epipolar geometry.

All matrices are double precision, row-major. Pixel coordinates are
continuous with the origin at the top-left pixel center. Everything here is
a pure function over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CoincidentCenters,
    DegenerateDenominator,
    DegenerateLine,
    NonFinite,
    PointBehindCamera,
)

_ORTHO_TOL = 1e-9


def _frozen(a, shape, name):
    a = np.asarray(a, dtype=float)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    a = np.ascontiguousarray(a).copy()
    a.flags.writeable = False
    return a


def skew(v):
    """Skew-symmetric matrix [v]x such that [v]x @ w == cross(v, w)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True)
class CameraView:
    """One pinhole camera: intrinsics K, world-to-camera rotation R, translation t."""

    id: int
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "intrinsics", _frozen(self.intrinsics, (3, 3), "intrinsics"))
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3), "rotation"))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,), "translation"))
        k, r = self.intrinsics, self.rotation
        if not (np.isfinite(k).all() and np.isfinite(r).all() and np.isfinite(self.translation).all()):
            raise NonFinite("camera parameters contain NaN/Inf")
        if np.abs(r.T @ r - np.eye(3)).max() >= _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) >= _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        w, h = self.image_size
        if w < 1 or h < 1:
            raise ValueError("image_size components must be >= 1")
        object.__setattr__(self, "image_size", (int(w), int(h)))

    def center(self):
        """Camera center in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation

    def projection(self) -> "ProjectionMatrix":
        p = self.intrinsics @ np.hstack([self.rotation, self.translation[:, None]])
        return ProjectionMatrix(p=p)


@dataclass(frozen=True)
class ProjectionMatrix:
    """3x4 projection P = K [R | t]."""

    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _frozen(self.p, (3, 4), "p"))
        s = np.linalg.svd(self.p, compute_uv=False)
        if s[-1] <= 1e-12 * s[0]:
            raise ValueError("projection matrix is rank deficient")


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2 epipolar relation: x_to^T F x_from = 0 for corresponding points."""

    f: np.ndarray
    from_view: int
    to_view: int

    def __post_init__(self):
        object.__setattr__(self, "f", _frozen(self.f, (3, 3), "f"))


@dataclass(frozen=True)
class EpipolarLine:
    """Image line a*x + b*y + c = 0 with a^2 + b^2 = 1."""

    coeffs: np.ndarray = field()

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        n = float(np.hypot(c[0], c[1]))
        if n < 1e-12:
            raise DegenerateLine("line direction vanishes")
        c = c / n
        object.__setattr__(self, "coeffs", _frozen(c, (3,), "coeffs"))

    def distance_to(self, q) -> float:
        a, b, c = self.coeffs
        return float(abs(a * q[0] + b * q[1] + c))


def project_point(cam: CameraView, point) -> np.ndarray:
    """Project a world point to (u, v) pixels; raises if behind the camera."""
    point = np.asarray(point, dtype=float)
    if not np.isfinite(point).all():
        raise NonFinite("point contains NaN/Inf")
    cam_coords = cam.rotation @ point + cam.translation
    if cam_coords[2] <= 1e-9:
        raise PointBehindCamera(f"depth {cam_coords[2]:.3e} <= 1e-9")
    q = cam.intrinsics @ cam_coords
    return q[:2] / q[2]


def essential_from_cameras(a: CameraView, b: CameraView) -> np.ndarray:
    """Essential matrix [t_rel]x R_rel of b relative to a."""
    r_rel = b.rotation @ a.rotation.T
    t_rel = b.translation - r_rel @ a.translation
    if np.linalg.norm(t_rel) < 1e-9:
        raise CoincidentCenters("camera baseline shorter than 1e-9")
    return skew(t_rel) @ r_rel


def fundamental_from_cameras(a: CameraView, b: CameraView) -> FundamentalMatrix:
    """F with q_b^T F q_a = 0, computed from known calibration.

    Normalized to unit Frobenius norm with the largest-magnitude entry
    positive, so exact rigs always yield the same matrix.
    """
    e = essential_from_cameras(a, b)
    f = np.linalg.inv(b.intrinsics).T @ e @ np.linalg.inv(a.intrinsics)
    f = f / np.linalg.norm(f)
    flat = np.abs(f).argmax()
    if f.flat[flat] < 0:
        f = -f
    return FundamentalMatrix(f=f, from_view=a.id, to_view=b.id)


def epipolar_line(f: FundamentalMatrix, q) -> EpipolarLine:
    """Line in f.to_view on which the correspondence of q (in f.from_view) must lie."""
    q = np.asarray(q, dtype=float)
    if not np.isfinite(q).all():
        raise NonFinite("query point contains NaN/Inf")
    return EpipolarLine(coeffs=f.f @ np.array([q[0], q[1], 1.0]))


def epipoles(f: FundamentalMatrix):
    """Homogeneous epipoles (e_from, e_to): F e_from = 0 and F^T e_to = 0."""
    _, _, vt = np.linalg.svd(f.f)
    _, _, vt_t = np.linalg.svd(f.f.T)
    return vt[-1], vt_t[-1]


def sampson_distance(f: FundamentalMatrix, q, q_prime) -> float:
    """Signed first-order approximation of the reprojection distance.

    Numerator is the raw epipolar residual q'^T F q; the denominator is the
    squared gradient norm of that residual in the two image planes.
    """
    q = np.asarray(q, dtype=float)
    qp = np.asarray(q_prime, dtype=float)
    if not (np.isfinite(q).all() and np.isfinite(qp).all()):
        raise NonFinite("inputs contain NaN/Inf")
    qh = np.array([q[0], q[1], 1.0])
    qph = np.array([qp[0], qp[1], 1.0])
    fq = f.f @ qh
    ftqp = f.f.T @ qph
    denom = fq[0] ** 2 + fq[1] ** 2 + ftqp[0] ** 2 + ftqp[1] ** 2
    if denom < 1e-15:
        raise DegenerateDenominator(f"denominator {denom:.3e} < 1e-15")
    return float(qph @ fq) / float(denom)
