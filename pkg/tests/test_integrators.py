"""Oracle integrators: Newmark-beta, RK4 and the simulate driver."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rtahs.cases import default_config, oracle_system, with_aero
from rtahs.dynamics import DofId, ModalParams, assemble_matrices, build_state_space
from rtahs.integrators import (
    MechState,
    SecondOrderSystem,
    TimeSeries,
    newmark_step,
    rk4_scalar_2nd,
    rk4_step,
    simulate,
)


def sdof_mats(m=1.0, c=0.0, k=1.0):
    dofs = (DofId.HEAVE,)
    from rtahs.dynamics import StructuralMatrices

    return StructuralMatrices(
        dofs=dofs, M=np.array([[m]]), C=np.array([[c]]), K=np.array([[k]])
    )


class TestNewmark:
    def test_zero_everything_stays_zero(self):
        mats = sdof_mats()
        s = MechState(x=[0.0], v=[0.0], acc=[0.0], t=0.0)
        for _ in range(100):
            s = newmark_step(s, np.zeros(1), np.zeros(1), mats, 0.01)
        assert s.x[0] == 0.0 and s.v[0] == 0.0

    def test_undamped_amplitude_conservation(self):
        # Average acceleration conserves the discrete energy, so the
        # energy amplitude sqrt(x^2 + v^2/omega^2) stays put.
        mats = sdof_mats(m=1.0, c=0.0, k=1.0)
        s = MechState(x=[1.0], v=[0.0], acc=[-1.0], t=0.0)
        worst = 0.0
        for _ in range(10_000):
            s = newmark_step(s, np.zeros(1), np.zeros(1), mats, 0.01)
            amp = math.hypot(s.x[0], s.v[0])
            worst = max(worst, abs(amp - 1.0))
        assert worst <= 1e-6

    def test_damped_log_decrement(self):
        # Free decay of the reference single-DOF system: the measured
        # log-decrement over 10 cycles must match the analytic value.
        m, xi, om = 182.178, 0.005, 17.64
        p = ModalParams(DofId.HEAVE, m, xi, om)
        mats = assemble_matrices([p])
        dt = 1e-3
        x0 = 0.01
        s = MechState(
            x=[x0], v=[0.0], acc=[-(om**2) * x0], t=0.0
        )
        xs = [x0]
        n_steps = int(12 * 2 * math.pi / om / dt)
        for _ in range(n_steps):
            s = newmark_step(s, np.zeros(1), np.zeros(1), mats, dt)
            xs.append(s.x[0])
        xs = np.array(xs)
        peaks = []
        for i in range(1, len(xs) - 1):
            if xs[i] > xs[i - 1] and xs[i] >= xs[i + 1] and xs[i] > 0:
                peaks.append(xs[i])
        assert len(peaks) >= 11
        delta = math.log(peaks[0] / peaks[10]) / 10.0
        expected = 2 * math.pi * xi / math.sqrt(1 - xi**2)
        assert abs(delta - expected) / expected <= 0.01

    def test_stability_warning_outside_region(self):
        mats = sdof_mats()
        s = MechState(x=[1.0], v=[0.0], acc=[-1.0], t=0.0)
        with pytest.warns(UserWarning):
            newmark_step(s, np.zeros(1), np.zeros(1), mats, 0.01, gamma=0.3, beta=0.2)

    def test_invalid_dt(self):
        mats = sdof_mats()
        s = MechState(x=[0.0], v=[0.0], acc=[0.0], t=0.0)
        with pytest.raises(ValueError):
            newmark_step(s, np.zeros(1), np.zeros(1), mats, 0.0)


class TestRk4:
    def test_zero_derivative(self):
        y = rk4_step(lambda t, y: np.zeros(1), np.array([3.0]), 0.0, 0.1)
        assert y[0] == 3.0

    def test_exponential_decay_reference(self):
        y = rk4_step(lambda t, y: -y, np.array([1.0]), 0.0, 0.1)
        assert abs(y[0] - 0.90483742) <= 1e-7

    def test_order_four_convergence(self):
        # Global error at t=1 for y' = -y shrinks 16x per dt halving.
        def global_error(dt):
            y = np.array([1.0])
            n = round(1.0 / dt)
            for k in range(n):
                y = rk4_step(lambda t, y: -y, y, k * dt, dt)
            return abs(y[0] - math.exp(-1.0))

        e1 = global_error(0.02)
        e2 = global_error(0.01)
        assert 14.0 <= e1 / e2 <= 18.0

    def test_matches_zoh_map_within_dt4(self):
        # One RK4 step on the linearized reference system agrees with
        # the exact zero-order-hold transition to local O(dt^5).
        p = ModalParams(DofId.HEAVE, 182.178, 0.005, 17.64)
        ssm = build_state_space([p], dt=1e-3)
        y0 = np.array([0.01, 0.05])
        y_rk4 = rk4_step(lambda t, y: ssm.A @ y, y0, 0.0, 1e-3)
        y_exact = ssm.Phi @ y0
        assert np.max(np.abs(y_rk4 - y_exact)) <= 1e-9

    def test_scalar_kernel_matches_generic(self):
        def acc(t, h, v):
            return -4.0 * h - 0.3 * v + math.sin(t)

        def deriv(t, y):
            return np.array([y[1], acc(t, y[0], y[1])])

        h, v = 0.4, -0.2
        y = np.array([h, v])
        for k in range(50):
            h, v = rk4_scalar_2nd(acc, h, v, k * 0.01, 0.01)
            y = rk4_step(deriv, y, k * 0.01, 0.01)
        assert_allclose([h, v], y, rtol=1e-14, atol=1e-16)

    def test_nonfinite_derivative_raises(self):
        from rtahs.integrators import IntegrationError

        with pytest.raises(IntegrationError):
            rk4_step(lambda t, y: y * np.inf, np.array([1.0]), 0.0, 0.1)


class TestSimulate:
    def test_zero_force_zero_init(self):
        mats = sdof_mats()
        system = SecondOrderSystem(
            n_dofs=1,
            dof_labels=("heave",),
            acc=lambda t, x, v: np.linalg.solve(mats.M, -mats.C @ v - mats.K @ x),
            force=lambda t, x, v: np.zeros(1),
            method="newmark",
            newmark_mats=mats,
        )
        init = MechState(x=[0.0], v=[0.0], acc=[0.0], t=0.0)
        out = simulate(system, init, dt=0.01, t_end=1.0)
        assert len(out) == 101
        assert np.all(out.channel("x_heave") == 0.0)
        assert np.all(out.channel("f_heave") == 0.0)

    def test_case1_convergent_envelope_decays(self):
        cfg = default_config("case1-linear")
        system = oracle_system(cfg)
        init = MechState(x=[0.01], v=[0.0], acc=[0.0], t=0.0)
        out = simulate(system, init, dt=1e-3, t_end=20.0)
        x = out.channel("x_heave")
        early = np.max(np.abs(x[: len(x) // 4]))
        late = np.max(np.abs(x[-len(x) // 4 :]))
        assert late < 0.8 * early
        assert not out.truncated

    def test_case1_divergent_envelope_grows(self):
        cfg = with_aero(default_config("case1-linear"), Y1=11.966)
        system = oracle_system(cfg)
        init = MechState(x=[0.01], v=[0.0], acc=[0.0], t=0.0)
        out = simulate(system, init, dt=1e-3, t_end=20.0)
        x = out.channel("x_heave")
        early = np.max(np.abs(x[: len(x) // 4]))
        late = np.max(np.abs(x[-len(x) // 4 :]))
        assert late > 1.2 * early

    def test_divergence_truncation(self):
        cfg = with_aero(default_config("case1-linear"), Y1=400.0)
        system = oracle_system(cfg)
        init = MechState(x=[0.01], v=[0.0], acc=[0.0], t=0.0)
        out = simulate(system, init, dt=1e-3, t_end=20.0)
        assert out.truncated
        assert out.truncated_step is not None
        # samples after the truncation step hold the last state
        x = out.channel("x_heave")
        assert np.all(x[out.truncated_step :] == x[out.truncated_step])

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_nonfinite_state_truncates_instead_of_raising(self):
        system = SecondOrderSystem(
            n_dofs=1,
            dof_labels=("heave",),
            acc=lambda t, x, v: x * 1e300,  # overflows within a few steps
            force=lambda t, x, v: np.zeros(1),
            method="rk4",
        )
        init = MechState(x=[1.0], v=[0.0], acc=[0.0], t=0.0)
        out = simulate(system, init, dt=1.0, t_end=10.0)
        assert out.truncated
        x = out.channel("x_heave")
        assert np.isfinite(x).all()

    def test_bit_reproducibility(self):
        cfg = default_config("case1-nonlinear")
        system = oracle_system(cfg)
        init = MechState(x=[0.01], v=[0.0], acc=[0.0], t=0.0)
        a = simulate(system, init, dt=1e-3, t_end=2.0)
        b = simulate(system, init, dt=1e-3, t_end=2.0)
        assert np.array_equal(a.channel("x_heave"), b.channel("x_heave"))
        assert np.array_equal(a.channel("f_heave"), b.channel("f_heave"))

    def test_sample_count(self):
        mats = sdof_mats()
        system = SecondOrderSystem(
            n_dofs=1,
            dof_labels=("heave",),
            acc=lambda t, x, v: np.zeros(1),
            force=lambda t, x, v: np.zeros(1),
            method="newmark",
            newmark_mats=mats,
        )
        init = MechState(x=[0.0], v=[0.0], acc=[0.0], t=0.0)
        out = simulate(system, init, dt=0.25, t_end=1.0)
        assert len(out) == 5
        assert_allclose(out.t, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_timeseries_validation():
    with pytest.raises(ValueError):
        TimeSeries(dt=0.1, t=np.arange(3.0), data={"x": np.zeros(2)})
    with pytest.raises(ValueError):
        TimeSeries(dt=0.1, t=np.array([0.0, 0.1, 0.15]), data={"x": np.zeros(3)})
    with pytest.raises(ValueError):
        TimeSeries(dt=0.1, t=np.array([0.0, 0.1, 0.05]), data={"x": np.zeros(3)})


def test_mechstate_validation():
    with pytest.raises(ValueError):
        MechState(x=[0.0, 1.0], v=[0.0], acc=[0.0], t=0.0)
    with pytest.raises(ValueError):
        MechState(x=[np.nan], v=[0.0], acc=[0.0], t=0.0)
