import math

import numpy as np
import pytest

from oltsm.geometry import (
    Extrinsics,
    InvalidExtrinsicsError,
    Point3,
    body_to_magnetic,
    camera_to_body,
    magnetic_to_body,
    normalize_yaw_deg,
    propagate_landmark,
    relative_direction,
    vector_heading_deg,
)

from oracles import body_coords, camera_coords, random_rotation


def p(x, y, z):
    return Point3(float(x), float(y), float(z))


ROT_Z_90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def test_point3_rejects_non_finite():
    with pytest.raises(ValueError):
        Point3(float("nan"), 0.0, 0.0)
    with pytest.raises(ValueError):
        Point3(0.0, float("inf"), 0.0)


def test_camera_to_body_identity():
    ext = Extrinsics.identity()
    out = camera_to_body(p(1, 2, 3), ext)
    assert (out.x, out.y, out.z) == (1.0, 2.0, 3.0)


def test_camera_to_body_pure_translation():
    ext = Extrinsics(np.eye(3), p(1, 0, 0))
    out = camera_to_body(p(0, 0, 0), ext)
    assert (out.x, out.y, out.z) == (1.0, 0.0, 0.0)


def test_camera_to_body_rotation_plus_translation():
    # oracle: R @ p + T computed by hand for a 90 degree z rotation
    ext = Extrinsics(ROT_Z_90, p(0, 0, 1))
    out = camera_to_body(p(1, 0, 0), ext)
    assert np.allclose(out.as_array(), [0.0, 1.0, 1.0], atol=1e-12)


def test_invalid_extrinsics_rejected():
    with pytest.raises(InvalidExtrinsicsError):
        Extrinsics(np.eye(3) * 1.001, p(0, 0, 0))
    with pytest.raises(InvalidExtrinsicsError):
        Extrinsics(-np.eye(3), p(0, 0, 0))  # det -1
    with pytest.raises(InvalidExtrinsicsError):
        Extrinsics(np.zeros((3, 3)), p(0, 0, 0))


def test_extrinsics_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(50):
        ext = Extrinsics(random_rotation(rng), Point3.from_array(rng.normal(0, 2, 3)))
        pt = Point3.from_array(rng.normal(0, 5, 3))
        back = ext.inverse_apply(camera_to_body(pt, ext))
        assert np.linalg.norm(back.as_array() - pt.as_array()) < 1e-9


def test_body_to_magnetic_zero_yaw():
    out = body_to_magnetic(p(1, 2, 3), 0.0)
    assert (out.x, out.y, out.z) == (1.0, 2.0, 3.0)


def test_body_to_magnetic_quarter_turn():
    out = body_to_magnetic(p(1, 0, 5), 90.0)
    assert np.allclose(out.as_array(), [0.0, -1.0, 5.0], atol=1e-12)


def test_body_to_magnetic_half_turn():
    out = body_to_magnetic(p(1, 1, 0), 180.0)
    assert np.allclose(out.as_array(), [-1.0, -1.0, 0.0], atol=1e-12)


def test_magnetic_to_body_examples():
    out = magnetic_to_body(p(1, 2, 3), 0.0)
    assert (out.x, out.y, out.z) == (1.0, 2.0, 3.0)
    out = magnetic_to_body(p(0, -1, 5), 90.0)
    assert np.allclose(out.as_array(), [1.0, 0.0, 5.0], atol=1e-12)
    out = magnetic_to_body(body_to_magnetic(p(3, 4, 0), 45.0), 45.0)
    assert np.allclose(out.as_array(), [3.0, 4.0, 0.0], atol=1e-12)


def test_norm_preserved_by_yaw_rotation():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        pt = Point3.from_array(rng.normal(0, 10, 3))
        yaw = rng.uniform(-720, 720)
        out = body_to_magnetic(pt, yaw)
        n_in = np.linalg.norm(pt.as_array())
        n_out = np.linalg.norm(out.as_array())
        assert abs(n_out - n_in) < 1e-12 * (1.0 + n_in)


def test_yaw_round_trip_identity():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        pt = Point3.from_array(rng.normal(0, 10, 3))
        yaw = rng.uniform(0, 360)
        back = magnetic_to_body(body_to_magnetic(pt, yaw), yaw)
        assert np.linalg.norm(back.as_array() - pt.as_array()) < 1e-9


def test_normalize_yaw_deg():
    assert normalize_yaw_deg(0.0) == 0.0
    assert normalize_yaw_deg(360.0) == 0.0
    assert normalize_yaw_deg(-90.0) == 270.0
    assert normalize_yaw_deg(725.0) == 5.0


def test_relative_direction():
    assert np.array_equal(relative_direction(p(0, 0, 0), p(0, 0, 0)), [0, 0, 0])
    assert np.array_equal(relative_direction(p(1, 1, 1), p(2, 3, 4)), [1, 2, 3])
    assert np.array_equal(relative_direction(p(-1, 0, 2), p(1, 0, 0)), [2, 0, -2])


def test_vector_heading_matches_robot_heading():
    # A landmark dead ahead of a robot at heading yaw sits at bearing yaw.
    for yaw in (0.0, 36.5, 90.0, 181.25, 359.0):
        ahead = body_to_magnetic(p(1, 0, 0), yaw)
        assert abs(vector_heading_deg(ahead.as_array()) - yaw) < 1e-9
    assert vector_heading_deg([0.0, 0.0, 0.0]) == 0.0


def test_vector_coordinate_invariance():
    # The magnetic-frame vector between two static landmarks is the same
    # no matter which pose observed them.
    rng = np.random.default_rng(17)
    rot = random_rotation(rng)
    t_cb = rng.normal(0, 0.5, 3)
    ext = Extrinsics(rot, Point3.from_array(t_cb))
    for _ in range(200):
        q1 = rng.normal(0, 10, 3)
        q2 = rng.normal(0, 10, 3)
        vecs = []
        for _ in range(2):
            pos = rng.normal(0, 10, 3)
            yaw = rng.uniform(0, 360)
            c1 = camera_coords(q1, pos, yaw, rot, t_cb)
            c2 = camera_coords(q2, pos, yaw, rot, t_cb)
            m1 = body_to_magnetic(camera_to_body(Point3.from_array(c1), ext), yaw)
            m2 = body_to_magnetic(camera_to_body(Point3.from_array(c2), ext), yaw)
            vecs.append(relative_direction(m1, m2))
        assert np.linalg.norm(vecs[0] - vecs[1]) < 1e-9


def test_propagate_landmark_static_robot():
    # No motion at all: the answer is just landmark 2's body position.
    ext = Extrinsics(ROT_Z_90, p(0.3, -0.2, 0.1))
    cn11 = p(1, 2, 0.5)
    cn21 = p(4, -1, 0.2)
    out = propagate_landmark(cn11, cn21, cn11, ext, 25.0, 25.0)
    expected = camera_to_body(cn21, ext)
    assert np.linalg.norm(out.as_array() - expected.as_array()) < 1e-9


def _oracle_case(rng, ext_rot, ext_t, yaw1, yaw2, pos1, pos2, q1, q2):
    ext = Extrinsics(ext_rot, Point3.from_array(ext_t))
    cn11 = Point3.from_array(camera_coords(q1, pos1, yaw1, ext_rot, ext_t))
    cn21 = Point3.from_array(camera_coords(q2, pos1, yaw1, ext_rot, ext_t))
    cn12 = Point3.from_array(camera_coords(q1, pos2, yaw2, ext_rot, ext_t))
    got = propagate_landmark(cn11, cn21, cn12, ext, yaw1, yaw2)
    expected = body_coords(q2, pos2, yaw2)
    return got.as_array(), expected


def test_propagate_landmark_pure_translation():
    rng = np.random.default_rng(0)
    got, expected = _oracle_case(
        rng,
        np.eye(3),
        np.zeros(3),
        0.0,
        0.0,
        np.array([0.0, 0.0, 0.0]),
        np.array([1.0, 0.0, 0.0]),
        np.array([3.0, 0.0, 0.0]),
        np.array([6.0, 0.0, 0.0]),
    )
    assert np.linalg.norm(got - expected) < 1e-9


def test_propagate_landmark_rotation_in_place():
    rng = np.random.default_rng(0)
    got, expected = _oracle_case(
        rng,
        np.eye(3),
        np.zeros(3),
        0.0,
        90.0,
        np.array([0.0, 0.0, 0.0]),
        np.array([0.0, 0.0, 0.0]),
        np.array([2.0, 1.0, 0.3]),
        np.array([5.0, -2.0, 1.1]),
    )
    assert np.linalg.norm(got - expected) < 1e-9


def test_propagate_landmark_randomized_against_oracle():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        ext_rot = random_rotation(rng)
        ext_t = rng.normal(0, 0.5, 3)
        yaw1, yaw2 = rng.uniform(0, 360, 2)
        pos1 = rng.normal(0, 10, 3)
        pos2 = rng.normal(0, 10, 3)
        q1 = rng.normal(0, 10, 3)
        q2 = rng.normal(0, 10, 3)
        got, expected = _oracle_case(rng, ext_rot, ext_t, yaw1, yaw2, pos1, pos2, q1, q2)
        assert np.linalg.norm(got - expected) < 1e-9
