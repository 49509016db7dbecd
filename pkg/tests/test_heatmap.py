import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densewarp.errors import BadDimensions, EmptyChannel, GroupShapeMismatch
from densewarp.heatmap import (
    Heatmap,
    Keypoint2D,
    bilinear_sample,
    decode_peak,
    read_heatmap,
    render_gaussian,
    replicate_group,
    write_heatmap,
)


def kp(j, x, y):
    return Keypoint2D(joint=j, position=np.array([x, y]), confidence=1.0)


class TestRender:
    def test_unit_offset_value(self):
        hm = render_gaussian([kp(0, 10, 10)], 32, 32, 2.0)
        assert hm.data[0, 10, 10] == pytest.approx(1.0, abs=1e-6)
        assert hm.data[0, 11, 10] == pytest.approx(np.exp(-1 / 8), rel=1e-6)

    def test_corner_peak_monotone_decay(self):
        hm = render_gaussian([kp(0, 0, 0)], 32, 32, 2.0)
        assert hm.data[0, 0, 0] == pytest.approx(1.0, abs=1e-6)
        row = hm.data[0, 0, :8]
        col = hm.data[0, :8, 0]
        assert (np.diff(row) < 0).all()
        assert (np.diff(col) < 0).all()

    def test_mass_matches_quadrature(self):
        # analytic mass of the continuous Gaussian is 2*pi*sigma^2; an interior
        # unit-peak render should integrate to that within 2%
        sigma = 2.0
        hm = render_gaussian([kp(0, 32, 32)], 64, 64, sigma)
        assert hm.data[0].sum() == pytest.approx(2 * np.pi * sigma**2, rel=0.02)

    def test_small_values_clamped(self):
        hm = render_gaussian([kp(0, 10, 10)], 64, 64, 2.0)
        tiny = hm.data[(hm.data > 0) & (hm.data < 1e-8)]
        assert tiny.size == 0

    def test_bad_dimensions(self):
        with pytest.raises(BadDimensions):
            render_gaussian([kp(0, 2, 2)], 5, 32, 2.0)

    def test_missing_joint_channel_is_zero(self):
        hm = render_gaussian([kp(2, 10, 10)], 32, 32, 2.0)
        assert hm.joints == 3
        assert hm.data[0].max() == 0.0
        assert hm.data[1].max() == 0.0

    def test_data_is_immutable(self):
        hm = render_gaussian([kp(0, 10, 10)], 32, 32, 2.0)
        with pytest.raises(ValueError):
            hm.data[0, 0, 0] = 5.0


class TestDecode:
    def test_pixel_center_exact(self):
        hm = render_gaussian([kp(0, 10.0, 10.0)], 32, 32, 2.0)
        out = decode_peak(hm, 0)
        assert np.linalg.norm(out.position - [10.0, 10.0]) < 0.01
        assert out.confidence == pytest.approx(1.0, abs=1e-6)

    def test_subpixel_against_grid_search_oracle(self):
        # oracle: densely search the continuous Gaussian for its max location
        hm = render_gaussian([kp(0, 10.4, 10.0)], 32, 32, 2.0)
        xs = np.arange(9.0, 12.0, 0.01)
        vals = np.exp(-((xs - 10.4) ** 2) / 8.0)
        oracle_x = xs[np.argmax(vals)]
        out = decode_peak(hm, 0)
        assert abs(out.position[0] - oracle_x) < 0.15
        assert abs(out.position[1] - 10.0) < 0.15

    @pytest.mark.parametrize("sigma", [1.5, 2.0, 3.0])
    @pytest.mark.parametrize("frac", [0.0, 0.2, 0.4, 0.5])
    def test_round_trip_bound_interior(self, sigma, frac):
        target = np.array([12.0 + frac, 14.0 - frac / 2])
        hm = render_gaussian([kp(0, *target)], 32, 32, sigma)
        out = decode_peak(hm, 0)
        assert np.linalg.norm(out.position - target) < 0.15

    def test_tie_breaks_lexicographically(self):
        data = np.zeros((1, 16, 16))
        data[0, 5, 5] = 1.0
        data[0, 9, 9] = 1.0
        hm = Heatmap(view=0, frame=1, data=data)
        out = decode_peak(hm, 0)
        assert tuple(np.round(out.position).astype(int)) == (5, 5)

    def test_empty_channel_raises(self):
        hm = Heatmap(view=0, frame=1, data=np.zeros((1, 8, 8)))
        with pytest.raises(EmptyChannel):
            decode_peak(hm, 0)


class TestReplicate:
    def make_group(self, m=4, base=1, size=16):
        out = []
        for v in range(m):
            hm = render_gaussian([kp(0, 5 + v, 6)], size, size, 2.0,
                                 view=v, frame=base + v)
            out.append(hm)
        return out

    def test_grid_shape_and_sharing(self):
        group = self.make_group()
        grid = replicate_group(group)
        assert len(grid) == 4 and all(len(row) == 4 for row in grid)
        for v, row in enumerate(grid):
            for k, entry in enumerate(row):
                assert entry.view == v
                assert entry.frame == 1 + k
                assert entry.data is group[v].data  # shared storage, no copy

    def test_anchor_flags_on_interleaved_diagonal(self):
        grid = replicate_group(self.make_group())
        flags = [[e.anchor for e in row] for row in grid]
        assert sum(sum(row) for row in flags) == 4
        for v in range(4):
            assert flags[v][v]

    def test_bitwise_equal_replicas(self):
        group = self.make_group()
        grid = replicate_group(group)
        assert np.array_equal(grid[2][0].data, group[2].data)

    def test_second_group_frames(self):
        grid = replicate_group(self.make_group(base=5))
        assert grid[0][0].frame == 5
        assert grid[3][3].frame == 8

    def test_m2_degenerate_group(self):
        grid = replicate_group(self.make_group(m=2))
        assert len(grid) == 2 and len(grid[0]) == 2
        assert grid[0][0].anchor and grid[1][1].anchor

    def test_rejects_wrong_frames(self):
        group = self.make_group()
        bad = group[2].with_labels(frame=99)
        with pytest.raises(GroupShapeMismatch):
            replicate_group([group[0], group[1], bad, group[3]])

    def test_rejects_duplicate_views(self):
        group = self.make_group()
        with pytest.raises(GroupShapeMismatch):
            replicate_group([group[0], group[0], group[2], group[3]])

    def test_rejects_misaligned_base(self):
        group = [hm.with_labels(frame=hm.frame + 1) for hm in self.make_group()]
        with pytest.raises(GroupShapeMismatch):
            replicate_group(group)


class TestFileFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        hm = render_gaussian([kp(0, 10.3, 7.9), kp(1, 3.2, 12.0)], 24, 20, 2.0,
                             view=3, frame=17)
        path = tmp_path / "x.dwhm"
        write_heatmap(path, hm)
        back = read_heatmap(path)
        assert back.view == 3 and back.frame == 17
        assert back.joints == 2 and back.height == 20 and back.width == 24
        assert np.array_equal(back.data, hm.data)

    def test_header_layout(self, tmp_path):
        hm = render_gaussian([kp(0, 5, 5)], 16, 8, 2.0, view=1, frame=2)
        path = tmp_path / "x.dwhm"
        write_heatmap(path, hm)
        raw = path.read_bytes()
        assert raw[:4] == b"DWHM"
        assert np.frombuffer(raw[4:28], dtype="<u4").tolist() == [1, 1, 2, 1, 8, 16]
        assert len(raw) == 28 + 1 * 8 * 16 * 4

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dwhm"
        path.write_bytes(b"NOPE" + b"\x00" * 24)
        with pytest.raises(ValueError):
            read_heatmap(path)

    def test_rejects_truncation(self, tmp_path):
        hm = render_gaussian([kp(0, 5, 5)], 16, 8, 2.0)
        path = tmp_path / "x.dwhm"
        write_heatmap(path, hm)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValueError):
            read_heatmap(path)


class TestBilinear:
    def test_exact_at_pixel_centers(self):
        data = np.arange(12.0).reshape(1, 3, 4)
        got = bilinear_sample(data, np.array([2.0]), np.array([1.0]))
        assert got[0, 0] == 6.0

    def test_interpolates_between_pixels(self):
        data = np.zeros((1, 2, 2))
        data[0, 0, 1] = 1.0
        got = bilinear_sample(data, np.array([0.5]), np.array([0.0]))
        assert got[0, 0] == pytest.approx(0.5)

    def test_zero_padding_outside(self):
        data = np.ones((1, 4, 4))
        got = bilinear_sample(data, np.array([-2.0, 10.0]), np.array([0.0, 0.0]))
        assert got[0, 0] == 0.0 and got[0, 1] == 0.0

    def test_fade_at_border(self):
        data = np.ones((1, 4, 4))
        got = bilinear_sample(data, np.array([-0.25]), np.array([1.0]))
        assert got[0, 0] == pytest.approx(0.75)


@settings(max_examples=40, deadline=None)
@given(
    x=st.floats(6, 25), y=st.floats(6, 25),
    sigma=st.floats(1.5, 3.0),
)
def test_render_decode_round_trip_property(x, y, sigma):
    hm = render_gaussian([kp(0, x, y)], 32, 32, sigma)
    out = decode_peak(hm, 0)
    assert np.linalg.norm(out.position - [x, y]) < 0.15
