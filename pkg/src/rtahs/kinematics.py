"""Actuator motion-compensation geometry: converts carriage pose changes
into screw-feed and arm-rotation increments, and torsion commands into
joint-motor targets."""

from __future__ import annotations

import math
from dataclasses import dataclass


class EnvelopeError(ValueError):
    """Pose outside the operational envelope of the rig geometry."""


@dataclass(frozen=True)
class CarriagePose:
    """Carriage position: V vertical (m, measured from the pivot plane),
    H lateral (m)."""

    V: float
    H: float

    def __post_init__(self):
        if not (math.isfinite(self.V) and math.isfinite(self.H)):
            raise ValueError("pose coordinates must be finite")

    @property
    def radius(self) -> float:
        return math.hypot(self.H, self.V)


def screw_increment(p0: CarriagePose, p1: CarriagePose) -> float:
    """Ball-screw feed between two poses: change of radial distance."""
    return p1.radius - p0.radius


def arm_rotation_increment(p0: CarriagePose, p1: CarriagePose) -> float:
    """Arm rotation between two poses: change of arctan(H/V).

    Only defined for V > 0; the carriage never reaches the pivot plane
    in operation, so non-positive V is a hard error rather than a
    quadrant-corrected angle.
    """
    for p in (p0, p1):
        if not p.V > 0:
            raise EnvelopeError(f"vertical position must be positive, got {p.V}")
    return math.atan(p1.H / p1.V) - math.atan(p0.H / p0.V)


def joint_motor_target(delta_alpha0: float, delta_alpha: float) -> float:
    """Joint-motor command: desired model torsion minus the rotation
    already induced by the arm motion."""
    return delta_alpha0 - delta_alpha
