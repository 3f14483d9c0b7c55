import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrloc.errors import ConfigError, GeometryError, UnsupportedOrientationError
from nrloc.geometry import (
    ArrayOrientation,
    BasePose,
    Polygon,
    Scenario,
    box,
    los_check,
    local_angles,
    rotation_matrix,
    true_geometry,
    wall,
    wrap_angle,
)


def test_rotation_identity():
    np.testing.assert_allclose(rotation_matrix(ArrayOrientation()), np.eye(3), atol=1e-15)


def test_rotation_quarter_turn():
    r = rotation_matrix(ArrayOrientation(yaw=np.pi / 2))
    np.testing.assert_allclose(r[:, 0], [0, 1, 0], atol=1e-15)


def test_rotation_orthonormal_many():
    rng = np.random.default_rng(0)
    for yaw, roll in rng.uniform(-np.pi, np.pi, (1000, 2)):
        r = rotation_matrix(ArrayOrientation(yaw=yaw, roll=roll))
        assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(r) - 1) < 1e-12


def test_pitch_rejected():
    with pytest.raises(UnsupportedOrientationError):
        rotation_matrix(ArrayOrientation(pitch=0.1))


def test_true_geometry_examples():
    g = true_geometry([1, 0, 0], np.zeros(3))
    assert g.distance == pytest.approx(1.0)
    assert g.azimuth == pytest.approx(0.0)
    assert g.elevation == pytest.approx(0.0)
    assert true_geometry([0, 1, 0], np.zeros(3)).azimuth == pytest.approx(np.pi / 2)
    g = true_geometry([3, 4, 0], np.zeros(3))
    assert g.distance == pytest.approx(5.0)
    assert g.distance_xy == pytest.approx(5.0)


def test_true_geometry_elevation_sign():
    # a BS mounted above the UE sees it at positive elevation
    g = true_geometry([10, 0, 0], BasePose([0, 0, 10.0]))
    assert g.elevation == pytest.approx(np.pi / 4)


def test_true_geometry_coincident():
    with pytest.raises(GeometryError):
        true_geometry([1, 2, 3], np.array([1.0, 2.0, 3.0]))


def test_local_angles_subtract_yaw():
    pose = BasePose([0, 0, 0.0], ArrayOrientation.from_degrees(30.0))
    az, _ = local_angles([10, 0, 0], pose)
    assert np.degrees(az) == pytest.approx(-30.0)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-np.pi, np.pi),
    st.lists(st.floats(-100, 100), min_size=3, max_size=3),
    st.lists(st.floats(-100, 100), min_size=3, max_size=3),
)
def test_rotation_consistency(theta, u, s):
    u, s = np.array(u), np.array(s)
    if np.hypot(*(u - s)[:2]) < 1e-3:
        return
    rz = rotation_matrix(ArrayOrientation(yaw=theta))
    g0 = true_geometry(u, s)
    g1 = true_geometry(rz @ u, rz @ s)
    assert g1.distance == pytest.approx(g0.distance, abs=1e-9)
    assert g1.elevation == pytest.approx(g0.elevation, abs=1e-9)
    assert abs(wrap_angle(g1.azimuth - g0.azimuth - theta)) < 1e-9


def test_los_no_obstacles():
    assert los_check([0, 0, 0], [10, 0, 0], [])


def test_los_wall_blocks_and_parallel_does_not():
    blocking = wall((5, -5), (5, 5), 0, 10)
    parallel = wall((0, 2), (10, 2), 0, 10)
    a, b = [0, 0, 1.0], [10, 0, 1.0]
    assert not los_check(a, b, [blocking])
    assert los_check(a, b, [parallel])


def test_los_symmetric():
    rng = np.random.default_rng(3)
    obstacles = box(-2, -2, 2, 2, 5)
    for _ in range(200):
        a = rng.uniform(-10, 10, 3)
        b = rng.uniform(-10, 10, 3)
        assert los_check(a, b, obstacles) == los_check(b, a, obstacles)


def test_polygon_validation():
    with pytest.raises(ConfigError):
        Polygon(np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2.0]]))
    with pytest.raises(ConfigError):
        Polygon(np.zeros((2, 3)))


def test_polygon_mirror():
    w = wall((5, -5), (5, 5), 0, 10)
    np.testing.assert_allclose(w.mirror([0, 1, 2]), [10, 1, 2], atol=1e-12)


def test_antenna_tuple_validation():
    with pytest.raises(ConfigError):
        BasePose([0, 0, 0.0], antenna=(1, 1, 0, 8, 1))
    with pytest.raises(ConfigError):
        BasePose([0, 0, 0.0], antenna=(1, 1, 8, 8, 2))
    assert BasePose([0, 0, 0.0], antenna=(1, 1, 4, 8, 1)).array_shape == (4, 8)


def test_scenario_rejects_ue_on_bs():
    with pytest.raises((ConfigError, GeometryError)):
        Scenario([BasePose([0, 0, 0.0])], ue_points=np.array([[0, 0, 0.0]]))


def test_scenario_needs_a_bs():
    with pytest.raises(ConfigError):
        Scenario([])
