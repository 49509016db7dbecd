import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densewarp.errors import (
    CoincidentCenters,
    DegenerateDenominator,
    DegenerateLine,
    NonFinite,
    PointBehindCamera,
)
from densewarp.geometry import (
    CameraView,
    EpipolarLine,
    FundamentalMatrix,
    ProjectionMatrix,
    epipolar_line,
    epipoles,
    essential_from_cameras,
    fundamental_from_cameras,
    project_point,
    sampson_distance,
    skew,
)

IDENTITY_CAM = dict(intrinsics=np.eye(3), rotation=np.eye(3), translation=np.zeros(3), image_size=(64, 64))


def translated_cam(cam_id, t):
    return CameraView(id=cam_id, intrinsics=np.eye(3), rotation=np.eye(3),
                      translation=np.asarray(t, dtype=float), image_size=(64, 64))


def random_volume_points(rng, n):
    return rng.uniform([-0.6, -0.6, 0.3], [0.6, 0.6, 1.6], size=(n, 3))


class TestCameraView:
    def test_rejects_non_orthonormal_rotation(self):
        bad = np.eye(3)
        bad = bad + 1e-6
        with pytest.raises(ValueError):
            CameraView(id=0, intrinsics=np.eye(3), rotation=bad,
                       translation=np.zeros(3), image_size=(8, 8))

    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            CameraView(id=0, intrinsics=np.eye(3), rotation=r,
                       translation=np.zeros(3), image_size=(8, 8))

    def test_rejects_nonpositive_focal(self):
        k = np.diag([-1.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            CameraView(id=0, intrinsics=k, rotation=np.eye(3),
                       translation=np.zeros(3), image_size=(8, 8))

    def test_projection_matrix_full_rank(self, rig4):
        for cam in rig4:
            p = cam.projection()
            s = np.linalg.svd(p.p, compute_uv=False)
            assert s[-1] > 1e-12 * s[0]

    def test_center_round_trip(self, rig4):
        for cam in rig4:
            c = cam.center()
            assert np.allclose(cam.rotation @ c + cam.translation, 0, atol=1e-12)


class TestProjectPoint:
    def test_canonical_optical_axis(self):
        cam = CameraView(id=0, **IDENTITY_CAM)
        assert np.allclose(project_point(cam, [0, 0, 1]), [0, 0])

    def test_perspective_division(self):
        cam = CameraView(id=0, **IDENTITY_CAM)
        assert np.allclose(project_point(cam, [1, 2, 2]), [0.5, 1.0])

    def test_behind_camera_raises(self):
        cam = CameraView(id=0, **IDENTITY_CAM)
        with pytest.raises(PointBehindCamera):
            project_point(cam, [0, 0, -1])

    def test_non_finite_raises(self):
        cam = CameraView(id=0, **IDENTITY_CAM)
        with pytest.raises(NonFinite):
            project_point(cam, [np.nan, 0, 1])

    def test_round_trip_through_triangulation(self, rig4, rng):
        from densewarp.triangulate import Observation, triangulate_dlt

        for point in random_volume_points(rng, 10):
            obs = [Observation(view=c.id, point=project_point(c, point)) for c in rig4]
            rec = triangulate_dlt(obs, rig4)
            assert np.linalg.norm(rec - point) < 1e-9


class TestFundamental:
    def test_pure_translation_form(self):
        a = translated_cam(0, [0, 0, 0])
        b = translated_cam(1, [-1, 0, 0])  # center at (1, 0, 0)
        f = fundamental_from_cameras(a, b)
        expected = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        expected /= np.linalg.norm(expected)
        if expected.flat[np.abs(expected).argmax()] < 0:
            expected = -expected
        assert np.allclose(f.f, expected, atol=1e-12)

    def test_essential_skew_times_rotation(self):
        a = translated_cam(0, [0, 0, 0])
        b = translated_cam(1, [-1, 0, 0])
        e = essential_from_cameras(a, b)
        assert np.allclose(e, skew(np.array([-1.0, 0, 0])), atol=1e-12)

    def test_constraint_residual_over_volume(self, rig4, rng):
        pts = random_volume_points(rng, 100)
        for a in rig4:
            for b in rig4:
                if a.id == b.id:
                    continue
                f = fundamental_from_cameras(a, b)
                for p in pts:
                    qa = np.append(project_point(a, p), 1.0)
                    qb = np.append(project_point(b, p), 1.0)
                    assert abs(qb @ f.f @ qa) < 1e-9

    def test_rank_two(self, rig4):
        for a in rig4:
            for b in rig4:
                if a.id == b.id:
                    continue
                s = np.linalg.svd(fundamental_from_cameras(a, b).f, compute_uv=False)
                assert s[-1] < 1e-9 * s[0]

    def test_unit_frobenius_and_sign(self, rig4):
        f = fundamental_from_cameras(rig4[0], rig4[1])
        assert abs(np.linalg.norm(f.f) - 1.0) < 1e-12
        assert f.f.flat[np.abs(f.f).argmax()] > 0

    def test_epipole_is_projected_center(self, rig4):
        a, b = rig4[0], rig4[1]
        f = fundamental_from_cameras(a, b)
        e_from, e_to = epipoles(f)
        assert np.linalg.norm(f.f @ e_from) < 1e-9
        assert np.linalg.norm(f.f.T @ e_to) < 1e-9
        e_px = e_from[:2] / e_from[2]
        assert np.allclose(e_px, project_point(a, b.center()), atol=1e-6)

    def test_coincident_centers_raise(self):
        a = translated_cam(0, [0, 0, 0])
        b = translated_cam(1, [0, 0, 0])
        with pytest.raises(CoincidentCenters):
            fundamental_from_cameras(a, b)


class TestEpipolarLine:
    def pure_translation_f(self):
        a = translated_cam(0, [0, 0, 0])
        b = translated_cam(1, [-1, 0, 0])
        return fundamental_from_cameras(a, b)

    def test_horizontal_line_for_x_translation(self):
        f = self.pure_translation_f()
        line = epipolar_line(f, [3.0, 5.0])
        a, b, c = line.coeffs
        assert abs(a) < 1e-12
        assert abs(b) == pytest.approx(1.0, abs=1e-12)
        assert line.distance_to([100.0, 5.0]) < 1e-9

    def test_normalization(self, rig4):
        f = fundamental_from_cameras(rig4[0], rig4[2])
        line = epipolar_line(f, [10.0, 12.0])
        assert abs(line.coeffs[0] ** 2 + line.coeffs[1] ** 2 - 1.0) < 1e-12

    def test_epipole_query_degenerates(self):
        f = self.pure_translation_f()
        e_from, _ = epipoles(f)
        # pure x-translation puts the epipole at infinity along x; use a finite
        # rig instead to hit the error path
        a, b = translated_cam(0, [0, 0, 0]), translated_cam(1, [0, 0, -2.0])
        f2 = fundamental_from_cameras(a, b)
        e_from, _ = epipoles(f2)
        e_px = e_from[:2] / e_from[2]
        with pytest.raises(DegenerateLine):
            epipolar_line(f2, e_px)

    def test_correspondences_on_line(self, rig4, rng):
        pts = random_volume_points(rng, 100)
        f = fundamental_from_cameras(rig4[1], rig4[3])
        for p in pts:
            q = project_point(rig4[1], p)
            qp = project_point(rig4[3], p)
            assert epipolar_line(f, q).distance_to(qp) < 1e-6

    def test_symmetry_via_transpose(self, rig4, rng):
        a, b = rig4[0], rig4[2]
        f_ab = fundamental_from_cameras(a, b)
        f_ba = fundamental_from_cameras(b, a)
        for p in random_volume_points(rng, 50):
            qa = project_point(a, p)
            qb = project_point(b, p)
            assert epipolar_line(f_ba, qb).distance_to(qa) < 1e-6


class TestSampson:
    def test_exact_correspondence_zero(self, rig4, rng):
        f = fundamental_from_cameras(rig4[0], rig4[1])
        for p in random_volume_points(rng, 50):
            q = project_point(rig4[0], p)
            qp = project_point(rig4[1], p)
            assert abs(sampson_distance(f, q, qp)) < 1e-9

    def test_sign_flips_with_perturbation_direction(self, rig4, rng):
        f = fundamental_from_cameras(rig4[0], rig4[1])
        p = random_volume_points(rng, 1)[0]
        q = project_point(rig4[0], p)
        qp = project_point(rig4[1], p)
        line = epipolar_line(f, q)
        normal = np.array([line.coeffs[0], line.coeffs[1]])
        plus = sampson_distance(f, q, qp + normal)
        minus = sampson_distance(f, q, qp - normal)
        assert plus * minus < 0

    def test_hand_evaluated_translation_case(self):
        a = translated_cam(0, [0, 0, 0])
        b = translated_cam(1, [-1, 0, 0])
        f = fundamental_from_cameras(a, b)
        # numerator: (0,1,1) F (0,0,1); for normalized [t]x it is -1/sqrt(2)
        q = np.array([0.0, 0.0])
        qp = np.array([0.0, 1.0])
        fq = f.f @ np.array([0.0, 0.0, 1.0])
        ftqp = f.f.T @ np.array([0.0, 1.0, 1.0])
        expected = (np.array([0.0, 1.0, 1.0]) @ fq) / (
            fq[0] ** 2 + fq[1] ** 2 + ftqp[0] ** 2 + ftqp[1] ** 2
        )
        assert sampson_distance(f, q, qp) == pytest.approx(expected, abs=1e-15)
        assert np.array([0.0, 1.0, 1.0]) @ fq == pytest.approx(1 / np.sqrt(2), abs=1e-12)

    def test_degenerate_denominator(self):
        f = FundamentalMatrix(
            f=np.array([[0, 0, 0], [0, 0, 1e-9], [0, -1e-9, 0]]), from_view=0, to_view=1
        )
        with pytest.raises(DegenerateDenominator):
            sampson_distance(f, [0.0, 0.0], [0.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(
    x=st.floats(-0.6, 0.6), y=st.floats(-0.6, 0.6), z=st.floats(0.3, 1.6),
    a=st.integers(0, 3), b=st.integers(0, 3),
)
def test_epipolar_constraint_property(x, y, z, a, b):
    rig = _property_rig()
    if a == b:
        return
    p = np.array([x, y, z])
    f = fundamental_from_cameras(rig[a], rig[b])
    qa = np.append(project_point(rig[a], p), 1.0)
    qb = np.append(project_point(rig[b], p), 1.0)
    assert abs(qb @ f.f @ qa) < 1e-9


_RIG_CACHE = {}


def _property_rig():
    if "rig" not in _RIG_CACHE:
        _RIG_CACHE["rig"] = build_rig_cached()
    return _RIG_CACHE["rig"]


def build_rig_cached():
    from densewarp.synth import build_rig, default_rig

    return build_rig(default_rig(views=4, image_size=(32, 32), radius=4.0))
