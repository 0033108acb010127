"""Lockstep co-simulation: delay line, loss injection, loopback
sessions, and UDP/in-process equivalence."""

import math

import numpy as np
import pytest
from dataclasses import replace
from numpy.testing import assert_allclose

from rtahs.aero import linear_se_force
from rtahs.cases import EchoGenerator, StaticGenerator, default_config
from rtahs.cosim import (
    DelayLine,
    LossInjector,
    SessionError,
    SurrogateSession,
    apply_delay,
    run_udp_pair,
)
from rtahs.harness import build_estimator_session, lockstep_config, run_loop
from rtahs.metrics import compare_series


class TestDelayLine:
    def test_zero_delay_is_identity(self):
        d = DelayLine(0.0)
        for k in range(20):
            assert d.apply(0.1 * k, k) == k

    def test_hold_before_first_sample(self):
        d = DelayLine(0.5)
        assert d.apply(0.0, 10.0) == 10.0
        assert d.apply(0.1, 11.0) == 10.0
        assert d.apply(0.4, 12.0) == 10.0

    def test_sinusoid_phase_shift(self):
        om, tau, dt = 17.64, 0.1, 1e-3
        d = DelayLine(tau)
        n_delay = round(tau / dt)
        for k in range(1000):
            t = k * dt
            out = d.apply(t, math.sin(om * t))
            if k >= n_delay:
                expect = math.sin(om * (k - n_delay) * dt)
                assert out == pytest.approx(expect, abs=1e-9)

    def test_constant_signal_invariant(self):
        d = DelayLine(0.25)
        for k in range(100):
            assert d.apply(0.01 * k, 3.25) == 3.25

    def test_decreasing_time_rejected(self):
        d = DelayLine(0.1)
        d.apply(1.0, 1.0)
        with pytest.raises(ValueError):
            d.apply(0.5, 2.0)

    def test_functional_alias(self):
        d = DelayLine(0.0)
        assert apply_delay(d, 0.0, 42.0) == 42.0

    def test_negative_delay_rejected(self):
        with pytest.raises(ValueError):
            DelayLine(-0.1)

    def test_vector_samples(self):
        d = DelayLine(0.02)
        dt = 0.01
        outs = []
        for k in range(5):
            outs.append(d.apply(k * dt, np.array([float(k), -float(k)])))
        assert_allclose(outs[4], [2.0, -2.0])


class TestLossInjector:
    def test_zero_rate_never_drops(self):
        inj = LossInjector(0.0, seed=1)
        assert not any(inj.drop() for _ in range(1000))

    def test_deterministic_for_seed(self):
        a = [LossInjector(0.3, seed=5).drop() for _ in range(200)]
        b = [LossInjector(0.3, seed=5).drop() for _ in range(200)]
        assert a == b

    def test_rate_validation(self):
        with pytest.raises(ValueError):
            LossInjector(1.0)

    def test_approximate_rate(self):
        inj = LossInjector(0.1, seed=2)
        drops = sum(inj.drop() for _ in range(10_000))
        assert 800 <= drops <= 1200


class TestEchoGenerator:
    def test_commanded_sinusoid_force(self):
        cfg = default_config("case1-linear")
        aero, span = cfg.aero, cfg.span
        dt = 1e-3
        om = 17.64

        def force_eval(t, x, v):
            return np.array([span * linear_se_force(x[0], v[0], aero)])

        gen = EchoGenerator(force_eval, dt, 1, x0=np.array([0.0]))
        prev_cmd = 0.0
        for k in range(500):
            f, d = gen.outputs()
            cmd = gen.cmd[0]
            vel = (cmd - prev_cmd) / dt if k > 0 else 0.0
            assert f[0] == pytest.approx(
                span * linear_se_force(cmd, vel, aero), abs=1e-12
            )
            assert d[0] == cmd
            prev_cmd = cmd
            gen.receive_command(np.array([math.sin(om * (k + 1) * dt)]))
            gen.advance()


def zero_session(n_samples=50, estimator="kf"):
    cfg = default_config("case1-linear", estimator=estimator)
    cfg = replace(
        cfg,
        t_end=(n_samples - 1) * cfg.dt,
        x0_disp=(0.0,),
        x0_vel=(0.0,),
        surrogate=replace(cfg.surrogate, disp_noise_std=0.0, force_noise_std=0.0),
    )
    est = build_estimator_session(cfg)
    sur = SurrogateSession(StaticGenerator(1, cfg.dt), cfg.dt)
    return cfg, est, sur


class TestSessions:
    def test_zero_force_zero_init_all_zero_commands(self):
        cfg, est, sur = zero_session()
        series, sstats, pstats = run_udp_pair(lockstep_config(cfg), est, sur)
        assert np.all(series.channel("x_heave") == 0.0)
        assert np.all(series.channel("f_heave") == 0.0)
        assert sstats.retries == 0 and pstats.retries == 0

    def test_udp_equals_monolithic_case1(self):
        cfg = default_config("case1-linear", t_end=2.0)
        mono, _, _, _ = run_loop(cfg)
        udp, _, _, _ = run_loop(replace(cfg, mode="udp"))
        for ch in ("x_heave", "xdot_heave", "f_heave"):
            m = compare_series(mono, udp, ch)
            assert m.rms_error <= 1e-9 * max(1.0, np.abs(mono.channel(ch)).max())

    @pytest.mark.parametrize("case", ["case1-linear", "case1-nonlinear", "case2dof"])
    def test_mode_equivalence_all_cases(self, case):
        cfg = default_config(case, t_end=1.0)
        mono, _, _, _ = run_loop(cfg)
        udp, _, _, _ = run_loop(replace(cfg, mode="udp"))
        for d in cfg.dofs:
            ref = mono.channel(f"x_{d.label}")
            test = udp.channel(f"x_{d.label}")
            scale = max(np.sqrt(np.mean(ref**2)), 1e-30)
            nrms = np.sqrt(np.mean((ref - test) ** 2)) / scale
            assert nrms <= 1e-9

    def test_loss_recovery_trajectory_unchanged(self):
        cfg0, est0, sur0 = zero_session(n_samples=200)
        clean, _, _ = run_udp_pair(lockstep_config(cfg0), est0, sur0)

        cfg1, est1, sur1 = zero_session(n_samples=200)
        lossy, sstats, pstats = run_udp_pair(
            lockstep_config(cfg1),
            est1,
            sur1,
            server_loss=LossInjector(0.1, seed=3),
            surrogate_loss=LossInjector(0.1, seed=4),
        )
        assert sstats.lost > 0 or pstats.lost > 0
        assert pstats.retries > 0 or sstats.retries > 0
        assert np.array_equal(clean.channel("x_heave"), lossy.channel("x_heave"))
        assert len(lossy) == 200

    def test_lossless_statistics_conserve(self):
        cfg, est, sur = zero_session(n_samples=120)
        _, sstats, pstats = run_udp_pair(lockstep_config(cfg), est, sur)
        # every datagram one peer sent was consumed by the other side as
        # accepted, stale, duplicate, or undecodable
        assert pstats.sent == sstats.received + sstats.stale + sstats.duplicates + sstats.decode_errors
        assert sstats.sent == pstats.received + pstats.stale + pstats.duplicates + pstats.decode_errors
        assert pstats.lost == 0 and sstats.lost == 0

    def test_lossy_statistics_accounting(self):
        cfg, est, sur = zero_session(n_samples=150)
        _, sstats, pstats = run_udp_pair(
            lockstep_config(cfg),
            est,
            sur,
            server_loss=LossInjector(0.1, seed=6),
            surrogate_loss=LossInjector(0.1, seed=7),
        )
        # delivered >= consumed (a final shutdown resend may land on a
        # closed socket), and nothing is consumed that was not delivered
        for tx, rx in ((pstats, sstats), (sstats, pstats)):
            consumed = rx.received + rx.stale + rx.duplicates + rx.decode_errors
            assert consumed <= tx.delivered
            assert tx.delivered <= tx.sent

    def test_handshake_mismatch_raises(self):
        # server expects a different dt than the surrogate proposes
        import threading

        from rtahs.cosim import NumericalServer, SurrogateRunner

        cfg, est, sur = zero_session()
        bad = replace(lockstep_config(cfg), dt=cfg.dt * 2, timeout=0.02, max_retries=1)
        server = NumericalServer(lockstep_config(cfg), est)
        runner = SurrogateRunner(bad, sur, server.address)

        def surrogate_side():
            try:
                runner.run()
            except SessionError:
                pass  # expected: the server never acknowledges

        t = threading.Thread(target=surrogate_side, daemon=True)
        t.start()
        try:
            with pytest.raises(SessionError):
                server.run()
        finally:
            t.join(timeout=5.0)

    def test_server_preserves_partial_series_on_dead_peer(self):
        # A peer that completes the handshake and three exchanges, then
        # goes silent: the server errors out but keeps what it processed.
        import socket as socket_mod
        import threading

        from rtahs.cosim import NumericalServer
        from rtahs.wire import Frame, Handshake, MsgType, decode_frame, encode_frame

        cfg, est, sur = zero_session(n_samples=50)
        lcfg = replace(lockstep_config(cfg), timeout=0.02, max_retries=1)
        server = NumericalServer(lcfg, est)
        addr = server.address

        def half_session():
            sock = socket_mod.socket(socket_mod.AF_INET, socket_mod.SOCK_DGRAM)
            sock.settimeout(2.0)
            hs = Frame(
                msg_type=MsgType.HANDSHAKE,
                dof_count=1,
                seq=0,
                sim_time=0.0,
                handshake=Handshake(
                    dt=lcfg.dt,
                    t_end=lcfg.t_end,
                    dof_mask=lcfg.dof_mask,
                    estimator_id=lcfg.estimator_id,
                ),
            )
            sock.sendto(encode_frame(hs), addr)
            sock.recvfrom(65535)
            for k in range(3):
                meas = Frame(
                    msg_type=MsgType.MEASUREMENT,
                    dof_count=1,
                    seq=k + 1,
                    sim_time=k * lcfg.dt,
                    forces=(0.0,),
                    displacements=(0.0,),
                )
                sock.sendto(encode_frame(meas), addr)
                reply = decode_frame(sock.recvfrom(65535)[0])
                assert reply.msg_type == MsgType.COMMAND and reply.seq == k + 1
            sock.close()

        t = threading.Thread(target=half_session, daemon=True)
        t.start()
        with pytest.raises(SessionError) as err:
            server.run()
        t.join(timeout=5.0)
        assert err.value.partial_series is not None
        assert len(err.value.partial_series) == 3
        assert err.value.last_good_step == 2

    def test_surrogate_timeout_raises_session_error(self):
        cfg, est, sur = zero_session()
        lcfg = replace(lockstep_config(cfg), timeout=0.02, max_retries=1)
        from rtahs.cosim import SurrogateRunner

        runner = SurrogateRunner(lcfg, sur, ("127.0.0.1", 9))  # discard port
        with pytest.raises(SessionError):
            runner.run()


class TestDelayedLoop:
    def test_delay_applies_to_force_channel_only(self):
        cfg = default_config("case2dof", t_end=1.0)
        cfg_d = replace(cfg, surrogate=replace(cfg.surrogate, delay_tau=0.1))
        base, _, _, _ = run_loop(cfg)
        delayed, _, _, _ = run_loop(cfg_d)
        n_delay = round(0.1 / cfg.dt)
        f_base = base.channel("f_heave")
        f_del = delayed.channel("f_heave")
        # after the holding window the delayed force stream is the base
        # stream shifted by tau (identical surrogate trajectory and RNG)
        assert_allclose(f_del[n_delay:], f_base[: len(f_base) - n_delay], atol=1e-12)
        assert np.all(f_del[: n_delay + 1] == f_base[0])
