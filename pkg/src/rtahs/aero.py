"""Aerodynamic force models and amplitude-dependent structural
nonlinearities driving the validation loops.

Two vortex-induced force models are implemented exactly as used by their
respective reference runs: the linear model normalizes the displacement
term by wind speed, the nonlinear model by section height.  Both return
force per unit span (N/m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Lower clamp on the normalized amplitude 2a/D: keeps the hyperbolic
# damping term finite at rest without affecting lock-in amplitudes.
AMPLITUDE_RATIO_FLOOR = 1e-3

# Lower clamp on the softened frequency as a fraction of omega0: prevents
# a degenerate oscillator if a divergent run overshoots a = 5D.
FREQUENCY_FLOOR_RATIO = 0.01


@dataclass(frozen=True)
class AeroParams:
    """Wind, geometry and aeroelastic coefficients for the heave force models.

    rho: air density (kg/m^3); U: wind speed (m/s); D: section height (m);
    B: section width (m); Y1, Y2, eps: dimensionless aeroelastic
    coefficients; CL_tilde: vortex-shedding force amplitude; omega_vs:
    vortex-shedding circular frequency (rad/s); psi: shedding phase (rad).
    """

    rho: float
    U: float
    D: float
    B: float = 0.0
    Y1: float = 0.0
    Y2: float = 0.0
    eps: float = 0.0
    CL_tilde: float = 0.0
    omega_vs: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.U > 0:
            raise ValueError(f"U must be positive, got {self.U}")
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")

    @property
    def dyn_pressure_2d(self) -> float:
        """Reference force scale 0.5 * rho * U^2 * (2D), N/m."""
        return 0.5 * self.rho * self.U**2 * (2.0 * self.D)


def linear_se_force(h: float, h_dot: float, p: AeroParams) -> float:
    """Linear vortex-induced vertical force per unit span.

    Both the velocity and displacement terms are normalized by wind
    speed, so the force is jointly linear in (h, h_dot) and scales
    linearly with U.
    """
    return p.dyn_pressure_2d * (p.Y1 * h_dot / p.U + p.Y2 * h / p.U)


def nonlinear_vortex_force(h: float, h_dot: float, t: float, p: AeroParams) -> float:
    """Nonlinear vortex-induced force per unit span.

    The velocity term saturates quadratically in displacement (even in
    h), the displacement term is normalized by section height, and a
    sinusoidal vortex-shedding component of amplitude CL_tilde/2 is
    superposed.
    """
    bracket = (
        p.Y1 * (1.0 - p.eps * h * h / (p.D * p.D)) * h_dot / p.U
        + p.Y2 * h / p.D
        + 0.5 * p.CL_tilde * math.sin(p.omega_vs * t + p.psi)
    )
    return p.dyn_pressure_2d * bracket


def instantaneous_amplitude(h: float, h_dot: float, omega0: float) -> float:
    """Transient oscillation amplitude sqrt(h^2 + (h_dot/omega0)^2)."""
    if not omega0 > 0:
        raise ValueError(f"omega0 must be positive, got {omega0}")
    return math.hypot(h, h_dot / omega0)


def amplitude_dep_damping(a: float, D: float) -> float:
    """Amplitude-dependent structural damping ratio.

    xi(a) = 1.247e-4/(2a/D) + 3.65e-3 + 1.264e-2*(2a/D), with the
    normalized amplitude clamped from below so the ratio stays finite at
    rest.
    """
    if a < 0:
        raise ValueError(f"amplitude must be >= 0, got {a}")
    if not D > 0:
        raise ValueError(f"D must be positive, got {D}")
    s = max(2.0 * a / D, AMPLITUDE_RATIO_FLOOR)
    return 1.247e-4 / s + 3.65e-3 + 1.264e-2 * s


def amplitude_dep_frequency(a: float, D: float, omega0: float) -> float:
    """Amplitude-softened circular frequency omega0 * (1 - a/(5D)),
    clamped at FREQUENCY_FLOOR_RATIO * omega0."""
    if a < 0:
        raise ValueError(f"amplitude must be >= 0, got {a}")
    return max(omega0 * (1.0 - a / (5.0 * D)), FREQUENCY_FLOOR_RATIO * omega0)


@dataclass(frozen=True)
class CoupledSeMatrices:
    """Linear surrogate for the coupled heave-torsion self-excited forces.

    E_d maps [h_dot, alpha_dot] and E_s maps [h, alpha] to
    [lift, moment] per unit span; together they can emulate
    flutter-derivative behavior without a flow solver.
    """

    E_d: np.ndarray
    E_s: np.ndarray

    def __post_init__(self):
        E_d = np.asarray(self.E_d, dtype=float)
        E_s = np.asarray(self.E_s, dtype=float)
        if E_d.shape != (2, 2) or E_s.shape != (2, 2):
            raise ValueError("E_d and E_s must be 2x2")
        if not (np.isfinite(E_d).all() and np.isfinite(E_s).all()):
            raise ValueError("E_d and E_s must be finite")
        object.__setattr__(self, "E_d", E_d)
        object.__setattr__(self, "E_s", E_s)


def coupled_se_force(
    h: float,
    h_dot: float,
    alpha: float,
    alpha_dot: float,
    m: CoupledSeMatrices,
) -> tuple[float, float]:
    """Self-excited lift (N/m) and moment (N*m/m) of the coupled surrogate:
    [L, M] = E_d [h_dot, alpha_dot] + E_s [h, alpha]."""
    vel = np.array([h_dot, alpha_dot])
    disp = np.array([h, alpha])
    out = m.E_d @ vel + m.E_s @ disp
    return float(out[0]), float(out[1])
