"""Streaming execution of the pose pipeline variants over arrival sequences.

Each complete-window arrival yields exactly one skeleton, for the arrival's
own frame. The sparse variants differ in how the other views' heatmaps are
brought to that frame: reused as-is, spatially fused along epipolar lines,
or fused and then temporally warped. The dense oracle instead consumes
all-view heatmaps at every frame and upper-bounds them all.

Epipolar response maps depend only on (target view, source view, source
frame), so they are memoized across slides; a slide recomputes only the maps
involving the arriving view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import EmptyChannel, InsufficientViews
from .fusion import FusionConfig, blend_responses, line_max_response
from .geometry import fundamental_from_cameras
from .heatmap import Heatmap, decode_peak
from .scheduler import WindowState
from .triangulate import Observation, Skeleton3D, refine_gauss_newton, triangulate_dlt
from .warper import WarpInput, warper_forward

CONFIDENCE_FLOOR = 1e-3


class PipelineVariant(str, Enum):
    REPLICATE_ONLY = "replicate_only"
    SPATIAL_FUSION = "spatial_fusion"
    FUSION_PLUS_WARPER = "fusion_plus_warper"
    DENSE_ORACLE = "dense_oracle"


SPARSE_VARIANTS = (
    PipelineVariant.REPLICATE_ONLY,
    PipelineVariant.SPATIAL_FUSION,
    PipelineVariant.FUSION_PLUS_WARPER,
)


@dataclass
class StreamResult:
    skeletons: list = field(default_factory=list)
    schedule_rows: list = field(default_factory=list)
    state: WindowState = None


def decode_joints(hm: Heatmap):
    """Per-joint decoded keypoints; empty channels decode to None."""
    out = []
    for j in range(hm.joints):
        try:
            out.append(decode_peak(hm, j))
        except EmptyChannel:
            out.append(None)
    return out


def triangulate_frame(frame, decodes, rig, refine=True, fallback=None) -> Skeleton3D:
    """Triangulate every joint from per-view decodes.

    decodes: dict view -> list of Keypoint2D | None. Joints visible in fewer
    than two views fall back to ``fallback`` (previous skeleton) positions.
    """
    joints = len(next(iter(decodes.values())))
    pts = np.zeros((joints, 3))
    res = np.zeros(joints)
    for j in range(joints):
        obs = []
        for view, kps in sorted(decodes.items()):
            kp = kps[j]
            if kp is None:
                continue
            weight = min(max(kp.confidence, CONFIDENCE_FLOOR), 1.0)
            obs.append(Observation(view=view, point=kp.position, weight=weight))
        if len({o.view for o in obs}) < 2:
            if fallback is None:
                raise InsufficientViews(f"joint {j} visible in fewer than 2 views at frame {frame}")
            pts[j] = fallback.joints[j]
            res[j] = fallback.per_joint_residual[j]
            continue
        x = triangulate_dlt(obs, rig)
        if refine:
            refined = refine_gauss_newton(x, obs, rig)
            pts[j], res[j] = refined.point, refined.residual
        else:
            from .triangulate import reprojection_rms

            pts[j], res[j] = x, reprojection_rms(x, obs, rig)
    return Skeleton3D(frame=frame, joints=pts, per_joint_residual=res)


class _ResponseCache:
    """Memoized line_max_response keyed by (target view, source view, source frame)."""

    def __init__(self, rig, cfg: FusionConfig):
        self.rig = rig
        self.cfg = cfg
        self.maps = {}
        self.fundamentals = {}

    def _fundamental(self, v, u):
        key = (v, u)
        if key not in self.fundamentals:
            self.fundamentals[key] = fundamental_from_cameras(self.rig[v], self.rig[u])
        return self.fundamentals[key]

    def response(self, target_view, source: Heatmap):
        key = (target_view, source.view, source.frame)
        if key not in self.maps:
            w, h = self.rig[target_view].image_size
            self.maps[key] = line_max_response(
                source.data, self._fundamental(target_view, source.view), w, h,
                self.cfg.line_step,
            )
        return self.maps[key]

    def prune(self, live_frames):
        """Drop maps whose source (view, frame) left the window."""
        self.maps = {
            k: m for k, m in self.maps.items() if (k[1], k[2]) in live_frames
        }


def fuse_window_entry(target_view, window, rig, cfg: FusionConfig, cache: _ResponseCache) -> np.ndarray:
    """Corrected heatmap data for one stale view against the current window."""
    anchors = {v: hm for v, _, hm in window}
    responses = [
        cache.response(target_view, anchors[u])
        for u in sorted(anchors)
        if u != target_view
    ]
    return blend_responses(anchors[target_view].data, responses, cfg.lam, len(rig))


def run_sparse_stream(arrivals, rig, fusion_cfg: FusionConfig, variant: PipelineVariant,
                      warpers=None, window_capacity=None, refine=True) -> StreamResult:
    """Drive a sparse arrival sequence through one pipeline variant.

    arrivals: iterable of objects with view, frame, timestamp, heatmap.
    warpers: dict temporal mode -> WarperWeights; modes missing from the bank
    (e.g. offsets beyond M-1 under non-uniform plans) fall back to the fused
    heatmap without warping.
    """
    if variant not in SPARSE_VARIANTS:
        raise ValueError(f"{variant} is not a sparse streaming variant")
    warpers = warpers or {}
    state = WindowState(views=len(rig), cache_capacity=window_capacity)
    cache = _ResponseCache(rig, fusion_cfg)
    result = StreamResult(state=state)
    last_skeleton = None
    for arrival in arrivals:
        window = state.slide(arrival.view, arrival.frame, arrival.heatmap)
        result.schedule_rows.append(
            (arrival.view, arrival.frame, arrival.timestamp, state.cache.hits)
        )
        if window is None:
            continue
        live = {(v, f) for v, f, _ in window}
        cache.prune(live)
        target = arrival.frame
        decodes = {}
        for view, frame, hm in window:
            if view == arrival.view or variant == PipelineVariant.REPLICATE_ONLY:
                decodes[view] = decode_joints(hm)
                continue
            fused = fuse_window_entry(view, window, rig, fusion_cfg, cache)
            if variant == PipelineVariant.SPATIAL_FUSION:
                decodes[view] = decode_joints(Heatmap(view=view, frame=target, data=fused))
                continue
            offset = target - frame
            weights = warpers.get(offset)
            corrected = Heatmap(view=view, frame=target, data=fused)
            if weights is None:
                decodes[view] = decode_joints(corrected)
            else:
                warped = warper_forward(
                    weights,
                    WarpInput(corrected=corrected, anchor=hm, relative_offset=offset),
                )
                decodes[view] = decode_joints(warped)
        skeleton = triangulate_frame(target, decodes, rig, refine=refine, fallback=last_skeleton)
        result.skeletons.append(skeleton)
        last_skeleton = skeleton
    return result


def run_dense_frames(frames_to_heatmaps, rig, refine=True) -> list:
    """Triangulate from all-view heatmaps at every requested frame.

    frames_to_heatmaps: ordered dict-like frame -> {view: Heatmap}.
    """
    skeletons = []
    last = None
    for frame in sorted(frames_to_heatmaps):
        per_view = frames_to_heatmaps[frame]
        decodes = {view: decode_joints(hm) for view, hm in sorted(per_view.items())}
        skeleton = triangulate_frame(frame, decodes, rig, refine=refine, fallback=last)
        skeletons.append(skeleton)
        last = skeleton
    return skeletons


def run_dense_oracle(seq, frames, refine=True) -> list:
    """Dense oracle over a synthetic sequence for the given frame slots."""
    frames_map = {
        frame: {cam.id: seq.dense_heatmap(cam.id, frame) for cam in seq.rig}
        for frame in frames
    }
    return run_dense_frames(frames_map, seq.rig, refine=refine)
