"""Interleaved grouping, sampling plans, and the sliding-window stream state.

Frames are 1-based slot indices on a uniform time grid with spacing delta;
views are 0-based. Group i covers frames M*(i-1)+1 .. M*i with view j
anchored at frame M*(i-1)+j+1. The sliding window replaces one view's entry
per arrival and reuses the cached heatmaps of the other M-1 views, which is
what lifts the pose output rate to M times the per-camera rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BadPlan, OutOfOrderArrival, TooFewFrames
from .heatmap import Heatmap


@dataclass(frozen=True)
class InterleavedGroup:
    index: int
    entries: tuple

    def frames(self):
        return tuple(f for _, f in self.entries)


def build_groups(total_frames: int, views: int):
    """Split N frames into floor(N/M) interleaved groups; the tail is dropped."""
    if views < 2:
        raise ValueError(f"need at least 2 views, got {views}")
    if total_frames < views:
        raise TooFewFrames(f"{total_frames} frames cannot form a group of {views} views")
    groups = []
    for i in range(1, total_frames // views + 1):
        base = views * (i - 1)
        entries = tuple((j, base + j + 1) for j in range(views))
        groups.append(InterleavedGroup(index=i, entries=entries))
    return groups


@dataclass(frozen=True)
class SamplingPlan:
    """Who samples when: M staggered cameras at a fixed per-camera rate.

    Uniform mode places view j at slots j+1, j+1+M, ...; slot spacing is
    phase_step = 1/(M * camera_rate), so poses come out at M times the
    per-camera rate. Non-uniform mode picks M distinct slots per window of
    window_size slots, seeded.
    """

    views: int
    camera_rate: float
    mode: str = "uniform"
    window_size: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.views < 2:
            raise BadPlan(f"need at least 2 views, got {self.views}")
        if self.camera_rate <= 0:
            raise BadPlan(f"camera_rate must be positive, got {self.camera_rate}")
        if self.mode not in ("uniform", "non_uniform"):
            raise BadPlan(f"unknown plan mode {self.mode!r}")
        if self.mode == "non_uniform" and self.window_size <= self.views:
            raise BadPlan(
                f"non_uniform window_size must exceed views ({self.views}), got {self.window_size}"
            )

    @property
    def phase_step(self) -> float:
        """Slot spacing delta in seconds."""
        return 1.0 / (self.views * self.camera_rate)


def generate_plan_times(plan: SamplingPlan, duration: float):
    """All (view, frame, timestamp) arrivals with timestamp < duration, in order."""
    if duration <= 0:
        raise BadPlan(f"duration must be positive, got {duration}")
    delta = plan.phase_step
    total_slots = int(np.floor(duration / delta - 1e-12)) + 1
    out = []
    if plan.mode == "uniform":
        for frame in range(1, total_slots + 1):
            view = (frame - 1) % plan.views
            t = (frame - 1) * delta
            if t < duration:
                out.append((view, frame, t))
    else:
        # Only whole windows: a truncated window could not contain every view.
        rng = np.random.default_rng(plan.seed)
        x = plan.window_size
        window = 0
        while (window * x + x - 1) * delta < duration:
            base = window * x
            slots = np.sort(rng.choice(x, size=plan.views, replace=False))
            view_order = rng.permutation(plan.views)
            for view, slot in zip(view_order, slots):
                frame = base + int(slot) + 1
                out.append((int(view), frame, (frame - 1) * delta))
            window += 1
    out.sort(key=lambda a: a[1])
    return out


@dataclass
class HeatmapCache:
    """Bounded (view, frame) -> heatmap store with oldest-frame-first eviction."""

    capacity: int
    entries: dict = field(default_factory=dict)
    hits: int = 0
    misses: int = 0

    def put(self, view, frame, heatmap):
        self.entries[(view, frame)] = heatmap
        self.misses += 1
        while len(self.entries) > self.capacity:
            oldest = min(self.entries, key=lambda k: (k[1], k[0]))
            del self.entries[oldest]

    def get(self, view, frame) -> Heatmap:
        hm = self.entries[(view, frame)]
        self.hits += 1
        return hm


class WindowState:
    """Single-writer sliding-window state; apply arrivals serially.

    The window keeps exactly one (frame, heatmap) entry per view once the
    first M arrivals are in. Each later arrival evicts its view's previous
    entry, caches the fresh heatmap, and counts the other M-1 window entries
    as cache hits.
    """

    def __init__(self, views: int, cache_capacity: int | None = None):
        if views < 2:
            raise ValueError(f"need at least 2 views, got {views}")
        capacity = 4 * views if cache_capacity is None else cache_capacity
        if capacity < views:
            raise ValueError("cache capacity must hold at least one window")
        self.views = views
        self.cache = HeatmapCache(capacity=capacity)
        self.window: dict[int, tuple[int, Heatmap]] = {}
        self.last_frame: dict[int, int] = {}
        self.emitted_through = 0

    @property
    def warmed_up(self) -> bool:
        return len(self.window) == self.views

    def current_window(self):
        """(view, frame, heatmap) triples in ascending frame order."""
        items = sorted(self.window.items(), key=lambda kv: kv[1][0])
        return [(v, f, hm) for v, (f, hm) in items]

    def slide(self, view: int, frame: int, heatmap: Heatmap):
        """Apply one arrival; returns the complete window or None during warm-up."""
        if view not in range(self.views):
            raise ValueError(f"view {view} outside rig of {self.views}")
        if view in self.last_frame and frame <= self.last_frame[view]:
            raise OutOfOrderArrival(
                f"view {view} frame {frame} not newer than cached frame {self.last_frame[view]}"
            )
        labeled = heatmap.with_labels(view=view, frame=frame, anchor=True)
        self.window[view] = (frame, labeled)
        self.last_frame[view] = frame
        self.cache.put(view, frame, labeled)
        if not self.warmed_up:
            return None
        self.cache.hits += self.views - 1
        self.emitted_through = max(self.emitted_through, frame)
        return self.current_window()


def slide(state: WindowState, arrival):
    """Functional wrapper over WindowState.slide for (view, frame, heatmap) tuples."""
    view, frame, heatmap = arrival
    window = state.slide(view, frame, heatmap)
    return state, window


def write_schedule_csv(path, rows) -> None:
    """Schedule dump: view, frame, timestamp_s, cache_hit_count per arrival."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view", "frame", "timestamp_s", "cache_hit_count"])
        for view, frame, t, hits in rows:
            writer.writerow([view, frame, repr(float(t)), hits])
