import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvsysid import core
from uvsysid.errors import InvalidInputError, SingularityError

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
angle = st.floats(min_value=-20.0, max_value=20.0, allow_nan=False)


def test_rotation_identity_at_zero():
    assert np.array_equal(core.euler_to_rotation([0.0, 0.0, 0.0]), np.eye(3))


def test_rotation_quarter_yaw_maps_x_to_y():
    R = core.euler_to_rotation([0.0, 0.0, np.pi / 2])
    np.testing.assert_allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


def test_rotation_matches_elementary_product():
    phi, theta, psi = 0.3, -0.2, 1.1
    c, s = np.cos, np.sin
    Rx = np.array([[1, 0, 0], [0, c(phi), -s(phi)], [0, s(phi), c(phi)]])
    Ry = np.array([[c(theta), 0, s(theta)], [0, 1, 0], [-s(theta), 0, c(theta)]])
    Rz = np.array([[c(psi), -s(psi), 0], [s(psi), c(psi), 0], [0, 0, 1]])
    np.testing.assert_allclose(core.euler_to_rotation([phi, theta, psi]), Rz @ Ry @ Rx, atol=1e-15)


def test_rotation_orthonormal_batch():
    rng = np.random.default_rng(0)
    mu = rng.uniform(-np.pi, np.pi, size=(10_000, 3))
    R = core.euler_to_rotation(mu)
    RRt = np.einsum("nij,nkj->nik", R, R)
    assert np.max(np.abs(RRt - np.eye(3))) < 1e-10
    assert np.max(np.abs(np.linalg.det(R) - 1.0)) < 1e-10


def test_rotation_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        core.euler_to_rotation([0.0, np.nan, 0.0])


@pytest.mark.parametrize("a, expected", [(0.0, 0.0), (2 * np.pi, 0.0), (-1.5 * np.pi, np.pi / 2), (np.pi, np.pi),
                                         (-np.pi, np.pi), (3 * np.pi, np.pi)])
def test_wrap_examples(a, expected):
    assert core.wrap_angle(a) == pytest.approx(expected, abs=1e-12)


@given(angle)
def test_wrap_range_congruent_idempotent(a):
    w = core.wrap_angle(a)
    assert -np.pi < w <= np.pi
    k = (a - w) / (2 * np.pi)
    assert abs(k - round(k)) < 1e-9
    assert core.wrap_angle(w) == w


@given(angle, angle)
def test_angle_diff_in_range(a, b):
    d = core.angle_diff(a, b)
    assert -np.pi < d <= np.pi


def test_wrap_preserves_shape():
    a = np.linspace(-10, 10, 12).reshape(3, 4)
    assert core.wrap_angle(a).shape == (3, 4)


def test_kinematic_step_example():
    x = np.zeros(12)
    x[5] = np.pi / 2
    x[6] = 1.0
    out = core.kinematic_step(x, 0.02)
    np.testing.assert_allclose(out[:3], [0.0, 0.02, 0.0], atol=1e-15)
    np.testing.assert_array_equal(out[6:], x[6:])


def test_kinematic_step_dt_zero_identity():
    rng = np.random.default_rng(1)
    x = rng.normal(size=12) * 0.3
    assert np.array_equal(core.kinematic_step(x, 0.0), x)


@settings(max_examples=50)
@given(st.lists(finite, min_size=6, max_size=6), st.floats(min_value=0, max_value=10))
def test_kinematic_step_zero_twist_identity(pose, dt):
    x = np.zeros(12)
    x[:6] = pose
    x[3:6] = core.wrap_angle(x[3:6])
    x[4] = np.clip(x[4], -1.0, 1.0)
    assert np.array_equal(core.kinematic_step(x, dt), x)


def test_kinematic_step_attitude_small_angle():
    x = np.zeros(12)
    x[9:] = [0.1, -0.2, 0.3]
    out = core.kinematic_step(x, 0.5)
    np.testing.assert_allclose(out[3:6], [0.05, -0.1, 0.15])


def test_kinematic_step_gimbal_guard():
    x = np.zeros(12)
    x[4] = core.pitch_limit() - 1e-3
    x[10] = 1.0
    with pytest.raises(SingularityError):
        core.kinematic_step(x, 0.02)


def test_kinematic_step_negative_dt():
    with pytest.raises(InvalidInputError):
        core.kinematic_step(np.zeros(12), -0.1)


def test_kinematic_step_batch_matches_single():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(5, 12)) * 0.2
    B = core.kinematic_step(X, 0.02)
    for i in range(5):
        np.testing.assert_array_equal(B[i], core.kinematic_step(X[i], 0.02))


def test_vehicle_state_wraps_and_is_immutable():
    s = core.VehicleState.from_parts(attitude=(0.0, 0.0, 3 * np.pi))
    assert s.attitude[2] == pytest.approx(np.pi)
    with pytest.raises(ValueError):
        s.vector[0] = 1.0
    assert s == core.VehicleState(np.array(s))
    assert hash(s) == hash(core.VehicleState(s.vector))


def test_vehicle_state_validation():
    with pytest.raises(InvalidInputError):
        core.VehicleState(np.zeros(11))
    with pytest.raises(InvalidInputError):
        core.VehicleState(np.full(12, np.inf))
    bad = np.zeros(12)
    bad[4] = 1.5
    with pytest.raises(SingularityError):
        core.VehicleState(bad)


def test_kinematic_step_returns_vehicle_state():
    s = core.VehicleState.from_parts(linear=(1.0, 0.0, 0.0))
    out = core.kinematic_step(s, 0.1)
    assert isinstance(out, core.VehicleState)
    assert out.position[0] == pytest.approx(0.1)


def test_state_error_wraps_attitude_only():
    a = np.zeros(12)
    b = np.zeros(12)
    a[5], b[5] = np.pi - 0.1, -np.pi + 0.1
    a[0], b[0] = 10.0, 0.0
    e = core.state_error(a, b)
    assert e[5] == pytest.approx(-0.2)
    assert e[0] == 10.0


def test_check_inputs():
    core.check_inputs(np.zeros(8), 8)
    with pytest.raises(InvalidInputError):
        core.check_inputs(np.full(8, 1.5), 8)
    with pytest.raises(InvalidInputError):
        core.check_inputs(np.zeros(7), 8)
