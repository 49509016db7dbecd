"""Epipolar spatial correction of replicated heatmap grids.

For every pixel of a replicated (stale) heatmap we rasterize its epipolar
line in each other view, take the maximum bilinear response along the line,
and blend those maxima with the local response. Anchor entries are never
touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RigMismatch
from .geometry import EpipolarLine, FundamentalMatrix, fundamental_from_cameras
from .heatmap import Heatmap, bilinear_sample

_PIXEL_CHUNK = 1024


@dataclass(frozen=True)
class FusionConfig:
    """Blend weight and line-rasterization settings.

    ``lam`` is the weight of the view's own response (config key "lambda");
    the remaining (1 - lam) mass is split 1/M over the other views, so the
    undefined self-epipolar term implicitly contributes zero. Requesting
    include_self is rejected outright.
    """

    lam: float = 0.5
    line_step: float = 0.5
    include_self: bool = False
    coarse_to_fine: bool = False
    coarse_radius_px: float = 6.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if not 0.0 < self.line_step <= 1.0:
            raise ValueError(f"line_step must be in (0, 1], got {self.line_step}")
        if self.include_self:
            raise ValueError("include_self is not supported: a view has no epipolar line with itself")
        if self.coarse_to_fine and self.coarse_radius_px <= 0:
            raise ValueError("coarse_radius_px must be positive")


def _interval_counts(delta, step):
    # Per-line interval count: spacing = length/n <= step. Axis-aligned lines
    # then sample exactly on pixel centers, so a line through a peak reports
    # the true peak value.
    lengths = np.hypot(delta[0], delta[1])
    return np.maximum(np.ceil(lengths / step), 1.0).astype(np.int64)


def _clip_lines(lines, width, height):
    """Clip infinite lines (3, N) to the image rectangle.

    Returns (start (2, N), delta (2, N), hit (N,)) where start + s * delta,
    s in [0, 1], spans the clipped segment of each hitting line.
    """
    a, b, c = lines
    norm = np.hypot(a, b)
    hit = norm > 1e-12
    safe = np.where(hit, norm, 1.0)
    a, b, c = a / safe, b / safe, c / safe
    px, py = -a * c, -b * c
    dx, dy = b, -a

    xlo, xhi = -0.5, width - 0.5
    ylo, yhi = -0.5, height - 0.5
    t0 = np.full(a.shape, -np.inf)
    t1 = np.full(a.shape, np.inf)
    for p, d, lo, hi in ((px, dx, xlo, xhi), (py, dy, ylo, yhi)):
        parallel = np.abs(d) < 1e-15
        dd = np.where(parallel, 1.0, d)
        ta = (lo - p) / dd
        tb = (hi - p) / dd
        lo_t = np.minimum(ta, tb)
        hi_t = np.maximum(ta, tb)
        t0 = np.where(parallel, t0, np.maximum(t0, lo_t))
        t1 = np.where(parallel, t1, np.minimum(t1, hi_t))
        hit &= np.where(parallel, (p >= lo) & (p <= hi), True)
    hit &= t0 <= t1
    t0 = np.where(hit, t0, 0.0)
    t1 = np.where(hit, t1, 0.0)
    start = np.stack([px + t0 * dx, py + t0 * dy])
    delta = np.stack([(t1 - t0) * dx, (t1 - t0) * dy])
    return start, delta, hit


def _line_max_chunk(data, lines, step):
    """Max bilinear response along each line for one chunk of pixels.

    data: (J, H, W) of the contributing view; lines: (3, N) in that view's
    image. Each line gets its own interval count (spacing <= step); shorter
    lines are padded by repeating the endpoint, which cannot change the max.
    Returns (J, N); lines that miss the image (or are degenerate) contribute 0.
    """
    _, height, width = data.shape
    start, delta, hit = _clip_lines(lines, width, height)
    counts = _interval_counts(delta, step)
    n_max = int(counts.max())
    s = np.minimum(np.arange(n_max + 1)[None, :] / counts[:, None], 1.0)
    px = start[0][:, None] + delta[0][:, None] * s
    py = start[1][:, None] + delta[1][:, None] * s
    vals = bilinear_sample(data, px, py)
    out = vals.max(axis=2)
    out[:, ~hit] = 0.0
    return out


def max_along_line(h: Heatmap, joint: int, line: EpipolarLine, step: float) -> float:
    """Maximum bilinearly interpolated response of one joint along a line.

    The line is clipped to the image rectangle and sampled at spacing <= step;
    a line that misses the rectangle entirely yields 0.
    """
    out = _line_max_chunk(h.data[joint : joint + 1], np.asarray(line.coeffs)[:, None], step)
    return float(out[0, 0])


def line_max_response(source_data, f: FundamentalMatrix, width, height, step, pixel_mask=None):
    """Per-target-pixel epipolar line maxima over a contributing view.

    For every pixel x of a (height, width) target image, computes the max of
    every channel of ``source_data`` along the epipolar line F (x, 1) in the
    contributing view. With ``pixel_mask`` (H, W bool) only masked pixels are
    evaluated; the rest stay 0.
    """
    joints = source_data.shape[0]
    cols, rows = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    flat = np.stack([cols.ravel(), rows.ravel(), np.ones(width * height)])
    if pixel_mask is not None:
        idx = np.flatnonzero(pixel_mask.ravel())
    else:
        idx = np.arange(width * height)
    out = np.zeros((joints, height * width))
    for lo in range(0, idx.size, _PIXEL_CHUNK):
        chunk = idx[lo : lo + _PIXEL_CHUNK]
        lines = f.f @ flat[:, chunk]
        out[:, chunk] = _line_max_chunk(source_data, lines, step)
    return out.reshape(joints, height, width)


def _peak_mask(channel_stack, radius, width, height):
    """Union-over-joints disk masks around each channel's argmax."""
    mask = np.zeros((height, width), dtype=bool)
    cols, rows = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    for ch in channel_stack:
        r, c = divmod(int(np.argmax(ch)), width)
        mask |= (cols - c) ** 2 + (rows - r) ** 2 <= radius**2
    return mask


def blend_responses(target_data, responses, lam, num_views):
    """lam * own + (1 - lam)/M * sum(responses), clamped to [0, 1]."""
    corrected = lam * target_data
    if responses:
        corrected = corrected + (1.0 - lam) / num_views * sum(responses)
    return np.clip(corrected, 0.0, 1.0)


def fuse_group(replicated, rig, cfg: FusionConfig):
    """Spatially correct every non-anchor entry of a replicated M x M grid.

    Anchors pass through as the same objects. Because the contributing maps
    are the raw replicas of each row (frame-independent), every non-anchor
    entry of a row shares one corrected array.
    """
    m = len(replicated)
    if len(rig) != m:
        raise RigMismatch(f"rig has {len(rig)} cameras for a {m}-row grid")
    if any(len(row) != m for row in replicated):
        raise RigMismatch("replicated grid is not M x M")
    for v, cam in enumerate(rig):
        if cam.id != v:
            raise RigMismatch(f"rig camera {v} has id {cam.id}")

    if cfg.lam == 1.0:
        return [list(row) for row in replicated]

    anchors = [row[v].data for v, row in enumerate(replicated)]
    width = replicated[0][0].width
    height = replicated[0][0].height
    fused = []
    for v, row in enumerate(replicated):
        mask = None
        if cfg.coarse_to_fine:
            mask = _peak_mask(anchors[v], cfg.coarse_radius_px, width, height)
        responses = []
        for u in range(m):
            if u == v:
                continue
            f_vu = fundamental_from_cameras(rig[v], rig[u])
            responses.append(
                line_max_response(anchors[u], f_vu, width, height, cfg.line_step, pixel_mask=mask)
            )
        corrected = blend_responses(anchors[v], responses, cfg.lam, m)
        corrected.flags.writeable = False
        out_row = []
        for entry in row:
            if entry.anchor:
                out_row.append(entry)
            else:
                out_row.append(Heatmap(view=v, frame=entry.frame, data=corrected, anchor=False))
        fused.append(out_row)
    return fused
