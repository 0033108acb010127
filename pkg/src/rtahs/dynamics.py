"""Structural dynamics core: modal parameters, M/C/K assembly and the
continuous/discrete state-space model shared by the estimators and the
oracle integrators.

All quantities are strict SI: kg/m (or kg.m^2/m for torsion), rad/s,
N, m, rad.  Degrees of freedom are kept in the fixed canonical order
heave < transverse < torsion; absent DOFs are removed from every matrix
rather than zero-padded.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np
from scipy.linalg import expm


class ConfigurationError(ValueError):
    """Inconsistent system description (e.g. duplicate DOF entries)."""


class DofId(IntEnum):
    """Section-model degrees of freedom, in canonical matrix order."""

    HEAVE = 0
    TRANSVERSE = 1
    TORSION = 2

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ModalParams:
    """Effective single-mode parameters of one suspended DOF.

    ``inertia`` is mass per unit length for heave/transverse and mass
    moment of inertia per unit length for torsion; it already aggregates
    every contribution of the oscillatory system (model, suspension,
    still-air added mass).
    """

    dof: DofId
    inertia: float
    damping_ratio: float
    circ_freq: float

    def __post_init__(self):
        if not self.inertia > 0:
            raise ValueError(f"inertia must be positive, got {self.inertia}")
        if not self.circ_freq > 0:
            raise ValueError(f"circ_freq must be positive, got {self.circ_freq}")
        if self.damping_ratio < 0:
            raise ValueError(f"damping_ratio must be >= 0, got {self.damping_ratio}")

    @property
    def damping_coeff(self) -> float:
        """Viscous damping coefficient 2*m*xi*omega."""
        return 2.0 * self.inertia * self.damping_ratio * self.circ_freq

    @property
    def stiffness(self) -> float:
        """Modal stiffness m*omega^2."""
        return self.inertia * self.circ_freq**2


@dataclass(frozen=True)
class StructuralMatrices:
    """Diagonal mass, damping and stiffness matrices in canonical DOF order."""

    dofs: tuple[DofId, ...]
    M: np.ndarray
    C: np.ndarray
    K: np.ndarray

    @property
    def n(self) -> int:
        return len(self.dofs)


@dataclass(frozen=True)
class StateSpaceModel:
    """Continuous model ``x_dot = A x + B u`` with displacement observation
    ``y = H x`` and its exact one-step zero-order-hold discrete map
    ``x_{k+1} = Phi x_k + Gamma u_k``.

    The state stacks (displacement, velocity) pairs per DOF in canonical
    order; inputs are the per-DOF generalized forces.
    """

    dofs: tuple[DofId, ...]
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    dt: float
    Phi: np.ndarray
    Gamma: np.ndarray

    @property
    def n_dofs(self) -> int:
        return len(self.dofs)

    @property
    def n_states(self) -> int:
        return 2 * len(self.dofs)


def assemble_matrices(params: Sequence[ModalParams]) -> StructuralMatrices:
    """Assemble diagonal M, C, K from per-DOF modal parameters.

    The input order is irrelevant; output rows/columns follow the
    canonical DOF order.  Raises :class:`ConfigurationError` on duplicate
    DOF entries and ``ValueError`` on an empty list.
    """
    if not params:
        raise ValueError("params must be non-empty")
    seen = set()
    for p in params:
        if p.dof in seen:
            raise ConfigurationError(f"duplicate DOF entry: {p.dof.label}")
        seen.add(p.dof)
    ordered = sorted(params, key=lambda p: p.dof)
    dofs = tuple(p.dof for p in ordered)
    M = np.diag([p.inertia for p in ordered]).astype(float)
    C = np.diag([p.damping_coeff for p in ordered]).astype(float)
    K = np.diag([p.stiffness for p in ordered]).astype(float)
    return StructuralMatrices(dofs=dofs, M=M, C=C, K=K)


def build_state_space(params: Sequence[ModalParams], dt: float) -> StateSpaceModel:
    """Build the continuous state-space model and its ZOH discretization.

    Per-DOF blocks are ``[[0, 1], [-omega^2, -2 xi omega]]``: the restoring
    term enters with a negative sign so that each undriven oscillator is
    stable (eigenvalues with non-positive real part) for xi >= 0.

    Phi and Gamma come from the matrix exponential of the augmented
    ``[[A, B], [0, 0]]`` block, which is exact for the linear model.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    mats = assemble_matrices(params)
    ordered = sorted(params, key=lambda p: p.dof)
    n = len(ordered)
    A = np.zeros((2 * n, 2 * n))
    B = np.zeros((2 * n, n))
    H = np.zeros((n, 2 * n))
    for i, p in enumerate(ordered):
        j = 2 * i
        A[j, j + 1] = 1.0
        A[j + 1, j] = -p.circ_freq**2
        A[j + 1, j + 1] = -2.0 * p.damping_ratio * p.circ_freq
        B[j + 1, i] = 1.0 / p.inertia
        H[i, j] = 1.0
    Phi, Gamma = discretize_zoh(A, B, dt)
    return StateSpaceModel(
        dofs=mats.dofs, A=A, B=B, H=H, dt=dt, Phi=Phi, Gamma=Gamma
    )


def discretize_zoh(A: np.ndarray, B: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization of ``x_dot = A x + B u``."""
    n = A.shape[0]
    m = B.shape[1]
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = A
    blk[:n, n:] = B
    e = expm(blk * dt)
    return e[:n, :n].copy(), e[:n, n:].copy()
