import numpy as np
import pytest

from densewarp.errors import RigMismatch
from densewarp.fusion import (
    FusionConfig,
    fuse_group,
    line_max_response,
    max_along_line,
)
from densewarp.geometry import EpipolarLine, fundamental_from_cameras
from densewarp.heatmap import Heatmap, Keypoint2D, decode_peak, render_gaussian, replicate_group
from densewarp.synth import build_rig, default_motion, default_rig, pose_at, project_many


def static_group(rig, joints=3, sigma=2.5, seed=5):
    model = default_motion(joints=joints, seed=seed, amplitude_m=0.0)
    pose = pose_at(model, 0.0)
    group = []
    w, h = rig[0].image_size
    for cam in rig:
        uv = project_many(cam, pose)
        kps = [Keypoint2D(j, uv[j], 1.0) for j in range(joints)]
        group.append(render_gaussian(kps, w, h, sigma, view=cam.id, frame=cam.id + 1))
    return group, model


class TestConfig:
    def test_rejects_bad_lambda(self):
        with pytest.raises(ValueError):
            FusionConfig(lam=1.5)

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            FusionConfig(line_step=0.0)

    def test_rejects_include_self(self):
        with pytest.raises(ValueError):
            FusionConfig(include_self=True)


class TestMaxAlongLine:
    def test_zero_heatmap(self):
        hm = Heatmap(view=0, frame=1, data=np.zeros((1, 16, 16)))
        line = EpipolarLine(coeffs=np.array([0.0, 1.0, -8.0]))
        assert max_along_line(hm, 0, line, 0.5) == 0.0

    def test_line_through_peak(self):
        hm = render_gaussian([Keypoint2D(0, np.array([10.0, 10.0]), 1.0)], 32, 32, 2.0)
        line = EpipolarLine(coeffs=np.array([0.0, 1.0, -10.0]))
        assert max_along_line(hm, 0, line, 0.5) == pytest.approx(1.0, abs=1e-3)

    def test_offset_line_against_dense_scan(self):
        hm = render_gaussian([Keypoint2D(0, np.array([10.0, 10.0]), 1.0)], 32, 32, 2.0)
        line = EpipolarLine(coeffs=np.array([0.0, 1.0, -13.0]))
        got = max_along_line(hm, 0, line, 0.5)
        dense = max_along_line(hm, 0, line, 0.01)
        assert got == pytest.approx(np.exp(-9 / 8), abs=2e-3)
        assert got == pytest.approx(dense, abs=2e-3)

    def test_miss_returns_zero(self):
        hm = render_gaussian([Keypoint2D(0, np.array([10.0, 10.0]), 1.0)], 32, 32, 2.0)
        line = EpipolarLine(coeffs=np.array([0.0, 1.0, -100.0]))
        assert max_along_line(hm, 0, line, 0.5) == 0.0

    def test_diagonal_line_spacing_contract(self):
        # spacing <= step must hold for any orientation; a denser scan can
        # only refine the value by a hair
        hm = render_gaussian([Keypoint2D(0, np.array([13.3, 9.6]), 1.0)], 32, 32, 1.75)
        coeffs = np.array([1.0, -1.0, -3.0]) / np.sqrt(2)
        line = EpipolarLine(coeffs=coeffs)
        coarse = max_along_line(hm, 0, line, 0.5)
        fine = max_along_line(hm, 0, line, 0.01)
        assert fine >= coarse - 1e-12
        assert fine - coarse < 5e-3


class TestFuseGroup:
    @pytest.fixture(scope="class")
    def setup(self, rig4_small):
        group, model = static_group(rig4_small)
        grid = replicate_group(group)
        return rig4_small, group, grid, model

    def test_lambda_one_identity_bitwise(self, setup):
        rig, group, grid, _ = setup
        fused = fuse_group(grid, rig, FusionConfig(lam=1.0))
        for row_in, row_out in zip(grid, fused):
            for a, b in zip(row_in, row_out):
                assert np.array_equal(a.data, b.data)

    def test_anchor_passthrough_same_objects(self, setup):
        rig, _, grid, _ = setup
        fused = fuse_group(grid, rig, FusionConfig(lam=0.5))
        for v in range(4):
            assert fused[v][v] is grid[v][v]

    def test_bounded_outputs(self, setup):
        rig, _, grid, _ = setup
        fused = fuse_group(grid, rig, FusionConfig(lam=0.25))
        for row in fused:
            for hm in row:
                assert hm.data.min() >= 0.0 and hm.data.max() <= 1.0

    def test_static_scene_peaks_near_truth(self, rig4):
        group, model = static_group(rig4, sigma=1.75, seed=3)
        grid = replicate_group(group)
        fused = fuse_group(grid, rig4, FusionConfig(lam=0.5))
        pose = pose_at(model, 0.0)
        for v, cam in enumerate(rig4):
            uv = project_many(cam, pose)
            for k in range(4):
                if k == v:
                    continue
                for j in range(group[0].joints):
                    kp = decode_peak(fused[v][k], j)
                    assert np.linalg.norm(kp.position - uv[j]) < 0.3

    def test_lambda_zero_multiview_peaks(self, rig4):
        # with 3 contributing ridges the intersection still localizes
        group, model = static_group(rig4, sigma=1.75, seed=3)
        fused = fuse_group(replicate_group(group), rig4, FusionConfig(lam=0.0))
        pose = pose_at(model, 0.0)
        for v, cam in enumerate(rig4):
            uv = project_many(cam, pose)
            for j in range(group[0].joints):
                kp = decode_peak(fused[v][(v + 1) % 4], j)
                assert np.linalg.norm(kp.position - uv[j]) < 0.6

    def test_rig_mismatch(self, setup):
        rig, _, grid, _ = setup
        with pytest.raises(RigMismatch):
            fuse_group(grid, rig[:3], FusionConfig())

    def test_monotone_contribution(self, rig4_small):
        group, _ = static_group(rig4_small)
        grid = replicate_group(group)
        cfg = FusionConfig(lam=0.5)
        base = fuse_group(grid, rig4_small, cfg)
        # bump one source view's channel along some pixels; fused response at
        # any target pixel must not decrease
        bumped_data = group[1].data.copy()
        bumped_data[0, 7, :] = np.minimum(bumped_data[0, 7, :] + 0.2, 1.0)
        bumped_hm = Heatmap(view=1, frame=2, data=bumped_data)
        bumped_group = [group[0], bumped_hm, group[2], group[3]]
        bumped = fuse_group(replicate_group(bumped_group), rig4_small, cfg)
        for v in (0, 2, 3):
            fused_before = base[v][(v + 1) % 4].data
            fused_after = bumped[v][(v + 1) % 4].data
            assert (fused_after >= fused_before - 1e-12).all()

    def test_row_entries_share_corrected_array(self, setup):
        rig, _, grid, _ = setup
        fused = fuse_group(grid, rig, FusionConfig(lam=0.5))
        row = fused[1]
        non_anchor = [e for e in row if not e.anchor]
        assert all(e.data is non_anchor[0].data for e in non_anchor)

    def test_coarse_to_fine_matches_near_peak(self, rig4):
        group, model = static_group(rig4, sigma=1.75, seed=3)
        grid = replicate_group(group)
        full = fuse_group(grid, rig4, FusionConfig(lam=0.5))
        coarse = fuse_group(grid, rig4, FusionConfig(lam=0.5, coarse_to_fine=True,
                                                     coarse_radius_px=5.25))
        pose = pose_at(model, 0.0)
        for v, cam in enumerate(rig4):
            uv = project_many(cam, pose)
            k = (v + 1) % 4
            for j in range(group[0].joints):
                x, y = np.round(uv[j]).astype(int)
                a = full[v][k].data[j, y - 2 : y + 3, x - 2 : x + 3]
                b = coarse[v][k].data[j, y - 2 : y + 3, x - 2 : x + 3]
                assert np.allclose(a, b, atol=1e-12)


class TestOracleEquivalence:
    def test_fine_scan_oracle_16x16(self, rig4_small):
        """fuse_group's 0.5 px rasterization against an exhaustive 0.01 px
        scan of the same bilinear field along every pixel's epipolar line."""
        group, _ = static_group(rig4_small, sigma=3.0)
        grid = replicate_group(group)
        lam = 0.5
        fused = fuse_group(grid, rig4_small, FusionConfig(lam=lam, line_step=0.5))
        data = [hm.data for hm in group]
        m = len(rig4_small)
        worst = 0.0
        for vt in range(m):
            total = np.zeros_like(data[vt])
            for u in range(m):
                if u == vt:
                    continue
                f = fundamental_from_cameras(rig4_small[vt], rig4_small[u])
                total += line_max_response(data[u], f, 16, 16, 0.01)
            reference = np.clip(lam * data[vt] + (1 - lam) / m * total, 0, 1)
            got = fused[vt][(vt + 1) % m].data
            worst = max(worst, np.abs(reference - got).max())
        assert worst < 5e-3

    def test_pixel_band_oracle_brackets(self, rig4_small):
        """The spec's pixel-band brute force reads raw pixel values up to
        0.5 px off the line, so it upper-bounds the on-line bilinear max by a
        slope-limited margin; exact 5e-3 agreement is unattainable (see
        decisions ledger), but the bracket must hold."""
        group, _ = static_group(rig4_small, sigma=2.5)
        grid = replicate_group(group)
        lam = 0.5
        m = len(rig4_small)
        fused = fuse_group(grid, rig4_small, FusionConfig(lam=lam, line_step=0.5))
        data = [hm.data for hm in group]
        cols, rows = np.meshgrid(np.arange(16.0), np.arange(16.0))
        for vt in range(m):
            total = np.zeros_like(data[vt])
            for u in range(m):
                if u == vt:
                    continue
                f = fundamental_from_cameras(rig4_small[vt], rig4_small[u]).f
                for y in range(16):
                    for x in range(16):
                        l = f @ np.array([x, y, 1.0])
                        n = np.hypot(l[0], l[1])
                        if n < 1e-12:
                            continue
                        l = l / n
                        d = np.abs(l[0] * cols + l[1] * rows + l[2])
                        mask = d <= 0.5
                        if mask.any():
                            total[:, y, x] += data[u][:, mask].max(axis=1)
            reference = np.clip(lam * data[vt] + (1 - lam) / m * total, 0, 1)
            got = fused[vt][(vt + 1) % m].data
            diff = np.abs(reference - got)
            # first-order bound: each contributing view can disagree by at
            # most |grad G| * 0.5 px (plus interpolation wobble), in either
            # direction -- band pixels sit off the line, bilinear samples
            # lean on pixels outside the band
            slope_margin = (1 - lam) / m * (m - 1) * (0.5 * np.exp(-0.5) / 2.5 + 0.02)
            assert diff.max() < slope_margin + 5e-3
