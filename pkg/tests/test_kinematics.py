"""Actuator motion-compensation geometry."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtahs.kinematics import (
    CarriagePose,
    EnvelopeError,
    arm_rotation_increment,
    joint_motor_target,
    screw_increment,
)

pos = st.floats(0.05, 10.0)
lat = st.floats(-5.0, 5.0)


def test_screw_increment_same_pose():
    p = CarriagePose(V=1.2, H=0.3)
    assert screw_increment(p, p) == 0.0


def test_screw_increment_collinear():
    a, b = CarriagePose(V=1.0, H=0.0), CarriagePose(V=1.25, H=0.0)
    assert screw_increment(a, b) == pytest.approx(0.25, abs=1e-15)


def test_screw_increment_reference():
    a, b = CarriagePose(V=1.0, H=0.0), CarriagePose(V=1.0, H=1.0)
    assert abs(screw_increment(a, b) - 0.414214) <= 1e-6


def test_arm_rotation_zero_for_vertical_motion():
    a, b = CarriagePose(V=1.0, H=0.0), CarriagePose(V=2.0, H=0.0)
    assert arm_rotation_increment(a, b) == 0.0


def test_arm_rotation_reference():
    a, b = CarriagePose(V=1.0, H=0.0), CarriagePose(V=1.0, H=1.0)
    assert abs(arm_rotation_increment(a, b) - math.pi / 4) <= 1e-6


def test_arm_rotation_antisymmetry():
    a, b = CarriagePose(V=1.1, H=-0.2), CarriagePose(V=0.9, H=0.4)
    assert arm_rotation_increment(a, b) == pytest.approx(
        -arm_rotation_increment(b, a), abs=1e-15
    )


def test_arm_rotation_envelope_error():
    good = CarriagePose(V=1.0, H=0.0)
    for bad_v in (0.0, -0.5):
        with pytest.raises(EnvelopeError):
            arm_rotation_increment(good, CarriagePose(V=bad_v, H=0.1))


def test_pose_finiteness():
    with pytest.raises(ValueError):
        CarriagePose(V=math.inf, H=0.0)


def test_joint_motor_target_basics():
    assert joint_motor_target(0.0, 0.3) == -0.3
    assert joint_motor_target(0.4, 0.0) == 0.4
    assert joint_motor_target(0.02, 0.005) == pytest.approx(0.015, abs=1e-15)


def test_pure_torsion_passthrough():
    # With the carriage parked, the arm angle does not change and the
    # joint motor receives the full torsion command.
    p = CarriagePose(V=1.0, H=0.2)
    d_alpha = arm_rotation_increment(p, p)
    assert d_alpha == 0.0
    assert joint_motor_target(0.07, d_alpha) == 0.07


@settings(max_examples=100, deadline=None)
@given(v1=pos, h1=lat, v2=pos, h2=lat, v3=pos, h3=lat)
def test_path_composition(v1, h1, v2, h2, v3, h3):
    # Chained increments equal the endpoint increment: both outputs are
    # differences of pose functions.
    a, b, c = CarriagePose(v1, h1), CarriagePose(v2, h2), CarriagePose(v3, h3)
    dl = screw_increment(a, b) + screw_increment(b, c)
    assert dl == pytest.approx(screw_increment(a, c), abs=1e-12)
    da = arm_rotation_increment(a, b) + arm_rotation_increment(b, c)
    assert da == pytest.approx(arm_rotation_increment(a, c), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(v1=pos, h1=lat, v2=pos, h2=lat, v3=pos, h3=lat)
def test_closed_loop_cancels(v1, h1, v2, h2, v3, h3):
    poses = [CarriagePose(v1, h1), CarriagePose(v2, h2), CarriagePose(v3, h3)]
    loop = poses + [poses[0]]
    total_l = sum(screw_increment(a, b) for a, b in zip(loop[:-1], loop[1:]))
    total_a = sum(arm_rotation_increment(a, b) for a, b in zip(loop[:-1], loop[1:]))
    assert abs(total_l) <= 1e-12
    assert abs(total_a) <= 1e-12
