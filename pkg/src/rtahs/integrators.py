"""Oracle time integrators: Newmark-beta for linear structural systems and
classical fixed-step RK4 for general (possibly nonlinear) second-order
dynamics, plus the ``simulate`` driver producing uniformly sampled time
series.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import StructuralMatrices


class IntegrationError(RuntimeError):
    """Non-finite state or derivative encountered while stepping."""


@dataclass(frozen=True)
class MechState:
    """Mechanical state (displacement, velocity, acceleration) at time t."""

    x: np.ndarray
    v: np.ndarray
    acc: np.ndarray
    t: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        acc = np.atleast_1d(np.asarray(self.acc, dtype=float))
        if not (x.shape == v.shape == acc.shape):
            raise ValueError("x, v, acc must share one length")
        if not (np.isfinite(x).all() and np.isfinite(v).all() and np.isfinite(acc).all()):
            raise ValueError("MechState entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "acc", acc)


@dataclass
class TimeSeries:
    """Uniformly sampled named channels over a common time grid.

    ``data`` maps channel name to a 1-D array; all channels share the
    length of ``t``.  ``truncated_step`` records where a run was cut
    short by the divergence guard, if it was.
    """

    dt: float
    t: np.ndarray
    data: dict[str, np.ndarray]
    truncated_step: Optional[int] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if len(self.t) >= 2:
            steps = np.diff(self.t)
            if not np.all(steps > 0):
                raise ValueError("time grid must be strictly increasing")
            if not np.allclose(steps, self.dt, rtol=1e-9, atol=1e-12 * max(self.dt, 1.0)):
                raise ValueError("time grid must be uniform with spacing dt")
        for name, col in self.data.items():
            col = np.asarray(col, dtype=float)
            if col.shape != self.t.shape:
                raise ValueError(f"channel {name!r} length mismatch")
            self.data[name] = col

    @property
    def truncated(self) -> bool:
        return self.truncated_step is not None

    @property
    def channels(self) -> list[str]:
        return list(self.data.keys())

    def __len__(self) -> int:
        return len(self.t)

    def channel(self, name: str) -> np.ndarray:
        return self.data[name]


class NewmarkSolver:
    """Newmark-beta stepper with the effective stiffness pre-factored.

    For a fixed (M, C, K, dt, gamma, beta) every per-step quantity except
    the effective force is constant, so repeated stepping reduces to a
    handful of small mat-vecs.  Defaults are the unconditionally stable
    average acceleration parameters.
    """

    def __init__(
        self,
        mats: StructuralMatrices,
        dt: float,
        gamma: float = 0.5,
        beta: float = 0.25,
    ):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if not (2.0 * beta >= gamma >= 0.5):
            warnings.warn(
                f"Newmark parameters gamma={gamma}, beta={beta} are outside the "
                "unconditional stability region 2*beta >= gamma >= 1/2",
                stacklevel=2,
            )
        self.mats = mats
        self.dt = dt
        self.gamma = gamma
        self.beta = beta
        self.a0 = 1.0 / (beta * dt * dt)
        self.a1 = gamma / (beta * dt)
        self.a2 = 1.0 / (beta * dt)
        self.a3 = 1.0 / (2.0 * beta) - 1.0
        self.a4 = gamma / beta - 1.0
        self.a5 = dt / 2.0 * (gamma / beta - 2.0)
        self.a6 = dt * (1.0 - gamma)
        self.a7 = gamma * dt
        k_eff = mats.K + self.a0 * mats.M + self.a1 * mats.C
        self.k_eff_inv = np.linalg.inv(k_eff)
        # Single-DOF systems step in scalar arithmetic.
        self._scalar = mats.M.shape == (1, 1)
        if self._scalar:
            self._m = float(mats.M[0, 0])
            self._c = float(mats.C[0, 0])
            self._ki = float(self.k_eff_inv[0, 0])

    def initial_acceleration(
        self, x: np.ndarray, v: np.ndarray, f: np.ndarray
    ) -> np.ndarray:
        m = self.mats
        return np.linalg.solve(m.M, f - m.C @ v - m.K @ x)

    def step_arrays(
        self,
        x: np.ndarray,
        v: np.ndarray,
        acc: np.ndarray,
        f_next: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self._scalar:
            x0, v0, acc0 = x[0], v[0], acc[0]
            f_eff = (
                f_next[0]
                + self._m * (self.a0 * x0 + self.a2 * v0 + self.a3 * acc0)
                + self._c * (self.a1 * x0 + self.a4 * v0 + self.a5 * acc0)
            )
            x_new = self._ki * f_eff
            acc_new = self.a0 * (x_new - x0) - self.a2 * v0 - self.a3 * acc0
            v_new = v0 + self.a6 * acc0 + self.a7 * acc_new
            if not math.isfinite(x_new):
                raise IntegrationError("non-finite Newmark state")
            return np.array([x_new]), np.array([v_new]), np.array([acc_new])
        m = self.mats
        f_eff = (
            f_next
            + m.M @ (self.a0 * x + self.a2 * v + self.a3 * acc)
            + m.C @ (self.a1 * x + self.a4 * v + self.a5 * acc)
        )
        x_new = self.k_eff_inv @ f_eff
        acc_new = self.a0 * (x_new - x) - self.a2 * v - self.a3 * acc
        v_new = v + self.a6 * acc + self.a7 * acc_new
        if not np.isfinite(x_new).all():
            raise IntegrationError("non-finite Newmark state")
        return x_new, v_new, acc_new


def newmark_step(
    s: MechState,
    f_now: np.ndarray,
    f_next: np.ndarray,
    mats: StructuralMatrices,
    dt: float,
    gamma: float = 0.5,
    beta: float = 0.25,
) -> MechState:
    """One Newmark-beta step of M x'' + C x' + K x = f.

    Uses the end-of-step force ``f_next`` in the implicit update
    (``f_now`` is accepted for interface symmetry with explicit
    schemes).  For long fixed-step runs prefer :class:`NewmarkSolver`,
    which hoists the constant factorization out of the loop.
    """
    solver = NewmarkSolver(mats, dt, gamma, beta)
    try:
        x_new, v_new, acc_new = solver.step_arrays(
            s.x, s.v, s.acc, np.asarray(f_next, dtype=float)
        )
    except IntegrationError:
        raise IntegrationError(f"non-finite Newmark state at t={s.t + dt}") from None
    return MechState(x=x_new, v=v_new, acc=acc_new, t=s.t + dt)


def rk4_step(
    deriv: Callable[[float, np.ndarray], np.ndarray],
    y: np.ndarray,
    t: float,
    dt: float,
) -> np.ndarray:
    """Classical fourth-order Runge-Kutta update of y' = deriv(t, y)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(deriv(t, y))
    k2 = np.asarray(deriv(t + 0.5 * dt, y + 0.5 * dt * k1))
    k3 = np.asarray(deriv(t + 0.5 * dt, y + 0.5 * dt * k2))
    k4 = np.asarray(deriv(t + dt, y + dt * k3))
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(out).all():
        raise IntegrationError(f"non-finite RK4 derivative output at t={t}")
    return out


def rk4_scalar_2nd(
    acc: Callable[[float, float, float], float],
    h: float,
    v: float,
    t: float,
    dt: float,
) -> tuple[float, float]:
    """Classical RK4 update of a scalar second-order ODE h'' = acc(t, h, h').

    Pure-float specialization of :func:`rk4_step` for single-DOF runs;
    used by both the oracle driver and the surrogate truth generator so
    the two trace identical floating-point trajectories.
    """
    k1h = v
    k1v = acc(t, h, v)
    th = t + 0.5 * dt
    k2h = v + 0.5 * dt * k1v
    k2v = acc(th, h + 0.5 * dt * k1h, k2h)
    k3h = v + 0.5 * dt * k2v
    k3v = acc(th, h + 0.5 * dt * k2h, k3h)
    k4h = v + dt * k3v
    k4v = acc(t + dt, h + dt * k3h, k4h)
    h_new = h + dt / 6.0 * (k1h + 2.0 * k2h + 2.0 * k3h + k4h)
    v_new = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    if not (math.isfinite(h_new) and math.isfinite(v_new)):
        raise IntegrationError(f"non-finite RK4 state at t={t}")
    return h_new, v_new


@dataclass(frozen=True)
class SecondOrderSystem:
    """Governing-equation bundle consumed by :func:`simulate`.

    ``force(t, x, v)`` is the applied generalized force vector,
    ``acc(t, x, v)`` the resulting acceleration.  For linear systems with
    state-proportional forces, ``newmark_mats``/``newmark_force`` provide
    the equivalent folded matrices (aero damping/stiffness moved into C
    and K) with a time-only residual force, so the implicit Newmark path
    never has to iterate on the force.  Single-DOF systems may supply
    ``acc_scalar``/``force_scalar`` float closures, which the RK4 driver
    prefers for speed.
    """

    n_dofs: int
    dof_labels: tuple[str, ...]
    acc: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    force: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    method: str = "rk4"
    newmark_mats: Optional[StructuralMatrices] = None
    newmark_force: Optional[Callable[[float], np.ndarray]] = None
    displacement_limit: Optional[np.ndarray] = None
    acc_scalar: Optional[Callable[[float, float, float], float]] = None
    force_scalar: Optional[Callable[[float, float, float], float]] = None


def simulate(
    system: SecondOrderSystem,
    init: MechState,
    dt: float,
    t_end: float,
    gamma: float = 0.5,
    beta: float = 0.25,
) -> TimeSeries:
    """Integrate a second-order system on a fixed grid.

    Produces floor(t_end/dt)+1 samples with channels ``x_<dof>``,
    ``xdot_<dof>`` and the applied force ``f_<dof>`` per DOF.  Divergent
    runs are truncated (remaining samples hold the last finite state)
    once any |x_i| exceeds the per-channel displacement limit, and the
    truncation step is flagged on the returned series.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    n_steps = int(np.floor(t_end / dt + 1e-9))
    n_samp = n_steps + 1
    nd = system.n_dofs
    labels = system.dof_labels
    xs = np.zeros((n_samp, nd))
    vs = np.zeros((n_samp, nd))
    fs = np.zeros((n_samp, nd))
    limit = system.displacement_limit
    truncated_step = None

    def truncate(k: int) -> None:
        # hold the last finite sample; divergence is data, not an error
        nonlocal truncated_step
        truncated_step = k
        xs[k:] = xs[k - 1]
        vs[k:] = vs[k - 1]
        fs[k:] = fs[k - 1]

    if system.method == "newmark":
        if system.newmark_mats is None:
            raise ValueError("newmark method requires folded matrices")
        ext = system.newmark_force or (lambda t: np.zeros(nd))
        solver = NewmarkSolver(system.newmark_mats, dt, gamma, beta)
        x, v = init.x.copy(), init.v.copy()
        acc = solver.initial_acceleration(x, v, np.asarray(ext(init.t), dtype=float))
        xs[0], vs[0] = x, v
        fs[0] = system.force(init.t, x, v)
        for k in range(1, n_samp):
            t_next = init.t + k * dt
            try:
                x, v, acc = solver.step_arrays(
                    x, v, acc, np.asarray(ext(t_next), dtype=float)
                )
            except IntegrationError:
                truncate(k)
                break
            xs[k], vs[k] = x, v
            fs[k] = system.force(t_next, x, v)
            if limit is not None and np.any(np.abs(x) > limit):
                truncated_step = k
                xs[k + 1 :] = x
                vs[k + 1 :] = v
                fs[k + 1 :] = fs[k]
                break
    elif system.method == "rk4" and nd == 1 and system.acc_scalar is not None:
        acc_s = system.acc_scalar
        force_s = system.force_scalar or (
            lambda t, h, v: float(system.force(t, np.array([h]), np.array([v]))[0])
        )
        lim = float(limit[0]) if limit is not None else None
        h, v = float(init.x[0]), float(init.v[0])
        xs[0, 0], vs[0, 0] = h, v
        fs[0, 0] = force_s(init.t, h, v)
        for k in range(1, n_samp):
            t_prev = init.t + (k - 1) * dt
            try:
                h, v = rk4_scalar_2nd(acc_s, h, v, t_prev, dt)
            except IntegrationError:
                truncate(k)
                break
            xs[k, 0], vs[k, 0] = h, v
            fs[k, 0] = force_s(t_prev + dt, h, v)
            if lim is not None and abs(h) > lim:
                truncated_step = k
                xs[k + 1 :, 0] = h
                vs[k + 1 :, 0] = v
                fs[k + 1 :, 0] = fs[k, 0]
                break
    elif system.method == "rk4":
        acc_fn = system.acc

        def deriv(t, y, _out_len=2 * nd):
            out = np.empty(_out_len)
            out[:nd] = y[nd:]
            out[nd:] = acc_fn(t, y[:nd], y[nd:])
            return out

        y = np.concatenate([init.x, init.v])
        xs[0], vs[0] = init.x, init.v
        fs[0] = system.force(init.t, init.x, init.v)
        for k in range(1, n_samp):
            t_prev = init.t + (k - 1) * dt
            try:
                y = rk4_step(deriv, y, t_prev, dt)
            except IntegrationError:
                truncate(k)
                break
            xs[k], vs[k] = y[:nd], y[nd:]
            fs[k] = system.force(init.t + k * dt, y[:nd], y[nd:])
            if limit is not None and np.any(np.abs(y[:nd]) > limit):
                truncated_step = k
                xs[k + 1 :] = y[:nd]
                vs[k + 1 :] = y[nd:]
                fs[k + 1 :] = fs[k]
                break
    else:
        raise ValueError(f"unknown integration method {system.method!r}")

    t = init.t + dt * np.arange(n_samp)
    data: dict[str, np.ndarray] = {}
    for i, lab in enumerate(labels):
        data[f"x_{lab}"] = xs[:, i]
        data[f"xdot_{lab}"] = vs[:, i]
        data[f"f_{lab}"] = fs[:, i]
    return TimeSeries(dt=dt, t=t, data=data, truncated_step=truncated_step)
