"""Per-joint 2D heatmaps: Gaussian rendering, peak decoding, replication, file I/O.

Heatmaps are immutable after construction (the data array is frozen), so
replicated grids can share storage safely. Values are float64 in memory and
float32 on disk; rendered maps are quantized through float32 at creation so
the binary format round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadDimensions, EmptyChannel, GroupShapeMismatch, NonFinite

DWHM_MAGIC = b"DWHM"
DWHM_VERSION = 1


@dataclass(frozen=True)
class Heatmap:
    """J x H x W grid of non-negative responses for one view at one frame."""

    view: int
    frame: int
    data: np.ndarray
    anchor: bool = False

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 3:
            raise ValueError(f"data must be (J, H, W), got shape {d.shape}")
        if not np.isfinite(d).all():
            raise NonFinite("heatmap contains NaN/Inf")
        if d.min() < 0:
            raise ValueError("heatmap values must be >= 0")
        if not d.flags.owndata or d.flags.writeable:
            d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def joints(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def with_labels(self, view=None, frame=None, anchor=None) -> "Heatmap":
        """Relabel without copying pixel data."""
        hm = Heatmap.__new__(Heatmap)
        object.__setattr__(hm, "view", self.view if view is None else view)
        object.__setattr__(hm, "frame", self.frame if frame is None else frame)
        object.__setattr__(hm, "data", self.data)
        object.__setattr__(hm, "anchor", self.anchor if anchor is None else anchor)
        return hm


@dataclass(frozen=True)
class Keypoint2D:
    """Decoded sub-pixel peak for one joint."""

    joint: int
    position: np.ndarray
    confidence: float

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).copy()
        p.flags.writeable = False
        object.__setattr__(self, "position", p)


def render_gaussian(keypoints, width, height, sigma, view=0, frame=0, anchor=False) -> Heatmap:
    """Render unit-peak Gaussians, one channel per joint.

    Channels with no keypoint stay zero. Values below 1e-8 are clamped to 0
    and the result is quantized through float32 so disk round-trips are exact.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if width < 3 * sigma or height < 3 * sigma:
        raise BadDimensions(f"grid {width}x{height} smaller than 3*sigma = {3 * sigma}")
    joints = max(kp.joint for kp in keypoints) + 1
    seen = set()
    for kp in keypoints:
        if kp.joint in seen:
            raise ValueError(f"duplicate keypoint for joint {kp.joint}")
        seen.add(kp.joint)
    xs = np.arange(width, dtype=float)
    ys = np.arange(height, dtype=float)
    data = np.zeros((joints, height, width))
    for kp in keypoints:
        u, v = float(kp.position[0]), float(kp.position[1])
        if not (np.isfinite(u) and np.isfinite(v)):
            raise NonFinite("keypoint position contains NaN/Inf")
        g = np.exp(-((xs[None, :] - u) ** 2 + (ys[:, None] - v) ** 2) / (2.0 * sigma**2))
        g[g < 1e-8] = 0.0
        data[kp.joint] = g
    data = data.astype(np.float32).astype(np.float64)
    return Heatmap(view=view, frame=frame, data=data, anchor=anchor)


def decode_peak(h: Heatmap, joint: int) -> Keypoint2D:
    """Integer argmax plus background-subtracted 3x3 centroid refinement.

    Ties go to the smallest (row, col). The centroid weights are the window
    values minus the window's second-smallest value (clipped at 0): a plain
    value-weighted centroid pulls ~0.3 px toward the integer peak, while this
    background choice keeps the worst-case bias under 0.1 px for sigma in
    [1.5, 3] at every sub-pixel phase.
    """
    channel = h.data[joint]
    if channel.max() <= 1e-12:
        raise EmptyChannel(f"joint {joint} has no response")
    flat_idx = int(np.argmax(channel))
    row, col = divmod(flat_idx, h.width)
    r0, r1 = max(row - 1, 0), min(row + 2, h.height)
    c0, c1 = max(col - 1, 0), min(col + 2, h.width)
    window = channel[r0:r1, c0:c1]
    ranked = np.sort(window.ravel())
    background = ranked[1] if ranked.size > 1 else ranked[0]
    w = np.maximum(window - background, 0.0)
    total = w.sum()
    if total > 0:
        rr, cc = np.mgrid[r0:r1, c0:c1]
        y = float((w * rr).sum() / total)
        x = float((w * cc).sum() / total)
    else:
        y, x = float(row), float(col)
    return Keypoint2D(joint=joint, position=np.array([x, y]), confidence=float(channel[row, col]))


def decode_all(h: Heatmap):
    """decode_peak for every joint; raises EmptyChannel on the first empty one."""
    return [decode_peak(h, j) for j in range(h.joints)]


def replicate_group(group) -> list:
    """Expand M per-view heatmaps into an M x M (view, frame) grid.

    Row v holds M entries sharing view v's data, labeled with the group's
    consecutive frames; the entry at the view's own frame carries anchor=True.
    Storage is shared, not copied: heatmaps are immutable, so any mutation
    path must build a fresh array first.
    """
    m = len(group)
    if m < 2:
        raise GroupShapeMismatch("a group needs at least 2 views")
    views = [h.view for h in group]
    if sorted(views) != list(range(m)):
        raise GroupShapeMismatch(f"views {views} are not exactly 0..{m - 1}")
    base = min(h.frame for h in group)
    if (base - 1) % m != 0:
        raise GroupShapeMismatch(f"base frame {base} does not start an interleaved group")
    for h in group:
        if h.frame != base + h.view:
            raise GroupShapeMismatch(
                f"view {h.view} has frame {h.frame}, expected {base + h.view}"
            )
    by_view = sorted(group, key=lambda h: h.view)
    shape = by_view[0].data.shape
    if any(h.data.shape != shape for h in by_view):
        raise GroupShapeMismatch("heatmap dimensions differ within the group")
    grid = []
    for v, hm in enumerate(by_view):
        row = [
            hm.with_labels(frame=base + k, anchor=(k == v))
            for k in range(m)
        ]
        grid.append(row)
    return grid


def bilinear_sample(grid, px, py):
    """Sample channels of ``grid`` (C, H, W) at continuous (px, py), zero padded.

    px/py may have any matching shape; the result has shape (C,) + px.shape.
    Positions more than one pixel outside the grid read as exactly 0.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    c, h, w = grid.shape
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0

    out = np.zeros((c,) + px.shape)
    for dy in (0, 1):
        yy = y0 + dy
        wy = (1.0 - fy) if dy == 0 else fy
        vy = (yy >= 0) & (yy < h)
        for dx in (0, 1):
            xx = x0 + dx
            wx = (1.0 - fx) if dx == 0 else fx
            valid = vy & (xx >= 0) & (xx < w)
            weight = np.where(valid, wx * wy, 0.0)
            vals = grid[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += vals * weight[None]
    return out


def write_heatmap(path, h: Heatmap) -> None:
    """Write the DWHM binary format (float32 payload, little endian)."""
    header = DWHM_MAGIC + struct.pack(
        "<6I", DWHM_VERSION, h.view, h.frame, h.joints, h.height, h.width
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(h.data.astype("<f4").tobytes())


def read_heatmap(path) -> Heatmap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DWHM_MAGIC:
        raise ValueError(f"{path}: not a DWHM file")
    version, view, frame, joints, height, width = struct.unpack("<6I", raw[4:28])
    if version != DWHM_VERSION:
        raise ValueError(f"{path}: unsupported DWHM version {version}")
    expected = 28 + joints * height * width * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw[28:], dtype="<f4").reshape(joints, height, width)
    return Heatmap(view=view, frame=frame, data=data.astype(np.float64))
