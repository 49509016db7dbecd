import numpy as np
import pytest

from densewarp.errors import BadPlan, OutOfOrderArrival, TooFewFrames
from densewarp.heatmap import Heatmap
from densewarp.scheduler import (
    SamplingPlan,
    WindowState,
    build_groups,
    generate_plan_times,
    slide,
)


def hm(view, frame):
    return Heatmap(view=view, frame=frame, data=np.zeros((1, 4, 4)))


class TestBuildGroups:
    def test_paper_example_m4(self):
        groups = build_groups(8, 4)
        assert len(groups) == 2
        assert groups[0].entries == ((0, 1), (1, 2), (2, 3), (3, 4))
        assert groups[1].entries == ((0, 5), (1, 6), (2, 7), (3, 8))

    def test_trailing_frames_unassigned(self):
        groups = build_groups(9, 4)
        assert len(groups) == 2
        assert max(f for g in groups for _, f in g.entries) == 8

    def test_single_group(self):
        groups = build_groups(4, 4)
        assert len(groups) == 1

    def test_too_few_frames(self):
        with pytest.raises(TooFewFrames):
            build_groups(3, 4)


class TestPlanTimes:
    def test_effective_rate_is_m_times_camera_rate(self):
        plan = SamplingPlan(views=4, camera_rate=12.5)
        assert plan.phase_step == pytest.approx(0.02)
        times = generate_plan_times(plan, 1.0)
        stamps = [t for _, _, t in times]
        assert np.allclose(np.diff(stamps), 0.02)
        # paper's 20 ms output interval at the H3.6M-like granularity
        assert stamps[1] - stamps[0] == pytest.approx(0.020)

    def test_m2_timestamps(self):
        plan = SamplingPlan(views=2, camera_rate=1.0)
        times = generate_plan_times(plan, 2.0)
        assert [round(t, 3) for _, _, t in times] == [0.0, 0.5, 1.0, 1.5]

    def test_uniform_view_rotation(self):
        plan = SamplingPlan(views=4, camera_rate=12.5)
        times = generate_plan_times(plan, 0.5)
        for view, frame, _ in times:
            assert view == (frame - 1) % 4

    def test_non_uniform_one_view_per_slot(self):
        plan = SamplingPlan(views=4, camera_rate=12.5, mode="non_uniform",
                            window_size=6, seed=3)
        times = generate_plan_times(plan, 2.0)
        frames = [f for _, f, _ in times]
        assert len(frames) == len(set(frames))
        # each window of 6 slots contains each view exactly once
        by_window = {}
        for view, frame, _ in times:
            by_window.setdefault((frame - 1) // 6, []).append(view)
        for views in by_window.values():
            assert sorted(views) == [0, 1, 2, 3]

    def test_non_uniform_gap_bound(self):
        plan = SamplingPlan(views=4, camera_rate=12.5, mode="non_uniform",
                            window_size=6, seed=3)
        delta = plan.phase_step
        times = generate_plan_times(plan, 4.0)
        for (_, f0, _), (_, f1, _) in zip(times, times[1:]):
            window0 = (f0 - 1) // 6
            window1 = (f1 - 1) // 6
            if window0 == window1:
                assert (f1 - f0) * delta <= (6 - 1) * delta

    def test_non_uniform_deterministic(self):
        plan = SamplingPlan(views=4, camera_rate=12.5, mode="non_uniform",
                            window_size=6, seed=9)
        assert generate_plan_times(plan, 2.0) == generate_plan_times(plan, 2.0)

    def test_bad_plans(self):
        with pytest.raises(BadPlan):
            SamplingPlan(views=4, camera_rate=0.0)
        with pytest.raises(BadPlan):
            SamplingPlan(views=4, camera_rate=1.0, mode="non_uniform", window_size=4)
        with pytest.raises(BadPlan):
            generate_plan_times(SamplingPlan(views=2, camera_rate=1.0), 0.0)


class TestSlidingWindow:
    def test_paper_slide_example(self):
        state = WindowState(views=4)
        for v, f in ((0, 1), (1, 2), (2, 3)):
            assert state.slide(v, f, hm(v, f)) is None
        window = state.slide(3, 4, hm(3, 4))
        assert [(v, f) for v, f, _ in window] == [(0, 1), (1, 2), (2, 3), (3, 4)]
        window = state.slide(0, 5, hm(0, 5))
        assert [(v, f) for v, f, _ in window] == [(1, 2), (2, 3), (3, 4), (0, 5)]

    def test_warm_up_produces_no_output(self):
        state = WindowState(views=4)
        outputs = [state.slide(v, v + 1, hm(v, v + 1)) for v in range(3)]
        assert outputs == [None, None, None]
        assert state.emitted_through == 0

    def test_out_of_order_rejected(self):
        state = WindowState(views=4)
        for v, f in ((0, 1), (1, 2), (2, 3), (3, 4), (0, 5)):
            state.slide(v, f, hm(v, f))
        with pytest.raises(OutOfOrderArrival):
            state.slide(0, 3, hm(0, 3))

    def test_one_output_per_slide(self):
        state = WindowState(views=4)
        emitted = []
        frame = 1
        for _ in range(3):
            for v in range(4):
                out = state.slide(v, frame, hm(v, frame))
                if out is not None:
                    emitted.append(max(f for _, f, _ in out))
                frame += 1
        assert emitted == list(range(4, 13))

    def test_cache_hits_m_minus_one_per_slide(self):
        state = WindowState(views=4)
        frame = 1
        for v in range(4):
            state.slide(v, frame, hm(v, frame))
            frame += 1
        hits_before = state.cache.hits
        for v in range(4):
            state.slide(v, frame, hm(v, frame))
            assert state.cache.hits - hits_before == 3
            hits_before = state.cache.hits
            frame += 1
        # asymptotic hit rate (M-1)/M
        total_arrivals = state.cache.misses
        assert state.cache.hits == 3 * (total_arrivals - 3)

    def test_cache_eviction_oldest_first(self):
        state = WindowState(views=2, cache_capacity=2)
        state.slide(0, 1, hm(0, 1))
        state.slide(1, 2, hm(1, 2))
        state.slide(0, 3, hm(0, 3))
        assert set(state.cache.entries) == {(1, 2), (0, 3)}

    def test_functional_wrapper(self):
        state = WindowState(views=2)
        state, out = slide(state, (0, 1, hm(0, 1)))
        assert out is None
        state, out = slide(state, (1, 2, hm(1, 2)))
        assert [(v, f) for v, f, _ in out] == [(0, 1), (1, 2)]

    def test_emitted_through_tracks_newest(self):
        state = WindowState(views=2)
        state.slide(0, 1, hm(0, 1))
        state.slide(1, 2, hm(1, 2))
        assert state.emitted_through == 2
        state.slide(0, 3, hm(0, 3))
        assert state.emitted_through == 3
