"""Lockstep co-simulation loop: a numerical-substructure server (the
estimator side) exchanging frames with a surrogate physical-substructure
client (the force-generator side) over UDP, with optional delay, noise
and packet-loss fault injection.

The loop is strictly alternating: the surrogate opens every step with a
MEASUREMENT and blocks until the matching COMMAND arrives, so with the
resend policy the coupled result is deterministic even though UDP is
not.  Both endpoints share their per-step numerical work with the
in-process runner, which is what makes the UDP-split and monolithic
loops agree to the last bit when no faults are injected.
"""

from __future__ import annotations

import random
import socket
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import DofId
from .estimators import (
    AdaptiveConfig,
    FilterState,
    TransitionModel,
    aekf_step,
    ekf_step,
    kf_step,
    update_only_step,
)
from .integrators import TimeSeries
from .wire import (
    ESTIMATOR_IDS,
    Frame,
    FrameDecodeError,
    Handshake,
    MsgType,
    decode_frame,
    encode_frame,
)

DEFAULT_TIMEOUT = 0.1
DEFAULT_RETRIES = 3


class SessionError(RuntimeError):
    """Lockstep session failed; ``last_good_step`` is the most recent
    fully processed exchange, if any, and ``partial_series`` holds
    whatever trajectory had been recorded when the session died."""

    def __init__(
        self,
        message: str,
        last_good_step: Optional[int] = None,
        partial_series=None,
    ):
        super().__init__(message)
        self.last_good_step = last_good_step
        self.partial_series = partial_series


class DelayLine:
    """Pure transport delay with zero-order hold.

    ``apply(t, sample)`` buffers the new sample and returns the newest
    buffered sample timestamped at or before ``t - tau``; before the
    delayed horizon reaches the first sample, that first sample is
    held.  Query times must be non-decreasing.
    """

    def __init__(self, tau: float):
        if tau < 0:
            raise ValueError(f"delay must be >= 0, got {tau}")
        self.tau = tau
        self._buf: deque = deque()
        self._last_t: Optional[float] = None

    def apply(self, t: float, sample):
        if self._last_t is not None and t < self._last_t:
            raise ValueError(f"query times must be non-decreasing ({t} < {self._last_t})")
        self._last_t = t
        self._buf.append((t, sample))
        # Slack absorbs accumulated grid rounding so that tau equal to a
        # whole number of sample intervals shifts by exactly that many
        # samples.
        horizon = t - self.tau + 1e-9 * max(1.0, abs(t))
        # Drop entries that can never be the answer again: everything
        # strictly older than the newest entry at or before the horizon.
        while len(self._buf) >= 2 and self._buf[1][0] <= horizon:
            self._buf.popleft()
        return self._buf[0][1]


def apply_delay(d: DelayLine, t: float, sample):
    """Functional alias for :meth:`DelayLine.apply`."""
    return d.apply(t, sample)


class LossInjector:
    """Deterministic (seeded) Bernoulli packet suppression."""

    def __init__(self, rate: float, seed: int = 0):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"loss rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._rng = random.Random(seed)

    def drop(self) -> bool:
        return self.rate > 0.0 and self._rng.random() < self.rate


@dataclass
class SessionStats:
    """Datagram accounting for one endpoint of a session."""

    sent: int = 0  # frames handed to the transport, including suppressed ones
    lost: int = 0  # frames suppressed by the loss injector
    received: int = 0  # valid frames accepted and processed
    stale: int = 0  # frames with a sequence number below expectation, dropped
    duplicates: int = 0  # repeats of the last processed sequence number
    decode_errors: int = 0
    retries: int = 0  # resends of our own last outbound frame
    timeouts: int = 0

    @property
    def delivered(self) -> int:
        return self.sent - self.lost


@dataclass
class LockstepConfig:
    """Session contract both endpoints must agree on at handshake."""

    dt: float
    t_end: float
    dofs: tuple[DofId, ...]
    estimator: str
    timeout: float = DEFAULT_TIMEOUT
    max_retries: int = DEFAULT_RETRIES

    @property
    def n_samples(self) -> int:
        return int(np.floor(self.t_end / self.dt + 1e-9)) + 1

    @property
    def dof_mask(self) -> int:
        mask = 0
        for d in self.dofs:
            mask |= 1 << int(d)
        return mask

    @property
    def estimator_id(self) -> int:
        return ESTIMATOR_IDS[self.estimator]

    def matches(self, hs: Handshake) -> bool:
        return (
            hs.dt == self.dt
            and hs.t_end == self.t_end
            and hs.dof_mask == self.dof_mask
            and hs.estimator_id == self.estimator_id
        )


class LockstepEndpoint:
    """One side of the alternating exchange: socket, expected sequence
    number and statistics."""

    def __init__(
        self,
        sock: socket.socket,
        peer: Optional[tuple[str, int]],
        timeout: float,
        max_retries: int,
        loss: Optional[LossInjector] = None,
    ):
        self.sock = sock
        self.peer = peer
        self.timeout = timeout
        self.max_retries = max_retries
        self.loss = loss
        self.stats = SessionStats()
        self.expected_seq = 0

    def send(self, frame: Frame) -> None:
        self.stats.sent += 1
        if self.loss is not None and self.loss.drop():
            self.stats.lost += 1
            return
        self.sock.sendto(encode_frame(frame), self.peer)

    def recv(self) -> Optional[Frame]:
        """One receive attempt within the timeout; returns None on
        timeout, skips undecodable datagrams."""
        deadline = self.timeout
        self.sock.settimeout(deadline)
        while True:
            try:
                data, addr = self.sock.recvfrom(65535)
            except socket.timeout:
                self.stats.timeouts += 1
                return None
            if self.peer is None:
                self.peer = addr
            try:
                return decode_frame(data)
            except FrameDecodeError:
                self.stats.decode_errors += 1
                continue

    def request(self, outbound: Frame, want_type: MsgType, want_seq: int) -> Frame:
        """Send ``outbound`` and wait for the matching reply, resending on
        timeout up to ``max_retries`` times."""
        self.send(outbound)
        attempts = 0
        while True:
            frame = self.recv()
            if frame is None:
                attempts += 1
                if attempts > self.max_retries:
                    raise SessionError(
                        f"no reply to {outbound.msg_type.name} seq {outbound.seq} "
                        f"after {self.max_retries} resends",
                        last_good_step=want_seq - 2,
                    )
                self.stats.retries += 1
                self.send(outbound)
                continue
            if frame.seq < want_seq:
                self.stats.stale += 1
                continue
            if frame.msg_type != want_type or frame.seq != want_seq:
                raise SessionError(
                    f"unexpected {frame.msg_type.name} seq {frame.seq} while "
                    f"waiting for {want_type.name} seq {want_seq}"
                )
            self.stats.received += 1
            return frame


class EstimatorSession:
    """Per-step numerical work of the estimator side, shared verbatim by
    the UDP server and the in-process runner.

    Step k fuses the measurement taken at t_k: the very first sample
    only updates the configured initial state, later samples are
    predicted forward with the previous step's force (held over the
    interval) before the update.  The commanded target is the posterior
    displacement estimate.
    """

    def __init__(
        self,
        model: TransitionModel,
        init: FilterState,
        estimator: str,
        dofs: tuple[DofId, ...],
        dt: float,
        n_samples: int,
        adaptive: Optional[AdaptiveConfig] = None,
        trace_covariance: bool = False,
    ):
        if estimator not in ESTIMATOR_IDS:
            raise ValueError(f"unknown estimator {estimator!r}")
        self.model = model
        self.fs = init
        self.estimator = estimator
        self.dofs = dofs
        self.dt = dt
        self.n_samples = n_samples
        self.adaptive = adaptive or AdaptiveConfig()
        self._prev_forces = np.zeros(len(dofs))
        n = len(dofs)
        self._xs = np.zeros((n_samples, n))
        self._vs = np.zeros((n_samples, n))
        self._fs_in = np.zeros((n_samples, n))
        self._steps_done = 0
        self.cov_min_eig: list[float] = [] if trace_covariance else None

    def process(self, k: int, forces: np.ndarray, displacements: np.ndarray) -> np.ndarray:
        """Fuse the k-th measurement and return the command displacements."""
        z = np.asarray(displacements, dtype=float)
        f = np.asarray(forces, dtype=float)
        if k == 0:
            self.fs = update_only_step(self.fs, z, self.model)
        elif self.estimator == "kf":
            self.fs = kf_step(self.fs, self._prev_forces, z, self.model)
        elif self.estimator == "ekf":
            self.fs = ekf_step(self.fs, self._prev_forces, z, self.model)
        else:
            self.fs = aekf_step(self.fs, self._prev_forces, z, self.model, self.adaptive)
        self._prev_forces = f
        self._xs[k] = self.fs.x[0::2]
        self._vs[k] = self.fs.x[1::2]
        self._fs_in[k] = f
        self._steps_done = k + 1
        if self.cov_min_eig is not None:
            self.cov_min_eig.append(float(np.linalg.eigvalsh(self.fs.P)[0]))
        return self._xs[k].copy()

    def series(self) -> TimeSeries:
        n = self._steps_done
        t = self.dt * np.arange(n)
        data: dict[str, np.ndarray] = {}
        for i, d in enumerate(self.dofs):
            data[f"x_{d.label}"] = self._xs[:n, i].copy()
            data[f"xdot_{d.label}"] = self._vs[:n, i].copy()
            data[f"f_{d.label}"] = self._fs_in[:n, i].copy()
        return TimeSeries(dt=self.dt, t=t, data=data)


class SurrogateSession:
    """Per-step work of the physical-substructure side: read the truth
    generator, add measurement noise, delay the force channel, and feed
    commands back to the generator."""

    def __init__(
        self,
        generator,
        dt: float,
        disp_noise_std: float = 0.0,
        force_noise_std: float = 0.0,
        delay_tau: float = 0.0,
        seed: int = 0,
    ):
        self.generator = generator
        self.dt = dt
        self.disp_noise_std = disp_noise_std
        self.force_noise_std = force_noise_std
        self.rng = np.random.default_rng(seed)
        self.delay = DelayLine(delay_tau) if delay_tau > 0 else None
        self._noise_block: Optional[np.ndarray] = None

    def prepare(self, n_samples: int, n_dofs: int) -> None:
        """Pre-draw the per-step noise block.  Block generation yields
        the same stream as per-step draws, so prepared and unprepared
        sessions measure identical values."""
        self._noise_block = self.rng.standard_normal((n_samples, 2 * n_dofs))

    def measure(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        forces, disps = self.generator.outputs()
        n = len(forces)
        if self._noise_block is not None:
            eps = self._noise_block[k]
        else:
            eps = self.rng.standard_normal(2 * n)
        forces = forces + self.force_noise_std * eps[:n]
        disps = disps + self.disp_noise_std * eps[n:]
        if self.delay is not None:
            forces = np.asarray(self.delay.apply(k * self.dt, forces))
        return forces, disps

    def apply_command(self, displacements: np.ndarray) -> None:
        self.generator.receive_command(np.asarray(displacements, dtype=float))

    def advance(self) -> None:
        self.generator.advance()


def run_in_process(
    est: EstimatorSession, sur: SurrogateSession, n_samples: int
) -> TimeSeries:
    """Monolithic loop: identical step semantics to the UDP pair, with
    the frames elided."""
    sur.prepare(n_samples, len(est.dofs))
    for k in range(n_samples):
        forces, disps = sur.measure(k)
        cmd = est.process(k, forces, disps)
        sur.apply_command(cmd)
        if k < n_samples - 1:
            sur.advance()
    return est.series()


class NumericalServer:
    """Estimator-side endpoint of the UDP-split loop.

    ``handshake_timeout`` bounds how long the freshly bound server waits
    for a peer to appear; once the session is running, silence is judged
    by the much tighter lockstep budget.
    """

    def __init__(
        self,
        cfg: LockstepConfig,
        session: EstimatorSession,
        bind: tuple[str, int] = ("127.0.0.1", 0),
        loss: Optional[LossInjector] = None,
        handshake_timeout: float = 60.0,
    ):
        self.cfg = cfg
        self.session = session
        self.handshake_timeout = handshake_timeout
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(bind)
        self.endpoint = LockstepEndpoint(
            self.sock, None, cfg.timeout, cfg.max_retries, loss
        )

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    @property
    def stats(self) -> SessionStats:
        return self.endpoint.stats

    def _wait_for(
        self,
        accept: Callable[[Frame], Optional[str]],
        step: int,
        max_timeouts: Optional[int] = None,
    ) -> Frame:
        """Wait for the next frame to process, honoring duplicates and
        staleness.  ``accept`` returns None to accept, "dup" to resend
        the last reply, "stale" to drop."""
        ep = self.endpoint
        if max_timeouts is None:
            max_timeouts = self.cfg.max_retries + 2
        attempts = 0
        while True:
            frame = ep.recv()
            if frame is None:
                attempts += 1
                if attempts >= max_timeouts:
                    raise SessionError(
                        "peer went silent", last_good_step=step - 1
                    )
                continue
            verdict = accept(frame)
            if verdict is None:
                ep.stats.received += 1
                return frame
            if verdict == "dup":
                ep.stats.duplicates += 1
                if self._last_reply is not None:
                    ep.stats.retries += 1
                    ep.send(self._last_reply)
                continue
            ep.stats.stale += 1

    def run(self) -> TimeSeries:
        try:
            return self._run()
        except SessionError as exc:
            if exc.partial_series is None:
                exc.partial_series = self.session.series()
            raise
        finally:
            self.sock.close()

    def _run(self) -> TimeSeries:
        cfg = self.cfg
        ep = self.endpoint
        n_samples = cfg.n_samples
        self._last_reply: Optional[Frame] = None

        def accept_handshake(frame: Frame) -> Optional[str]:
            if frame.msg_type == MsgType.HANDSHAKE and frame.seq == 0:
                return None
            return "stale"

        hs_budget = max(2, int(np.ceil(self.handshake_timeout / cfg.timeout)))
        hs_frame = self._wait_for(accept_handshake, step=0, max_timeouts=hs_budget)
        if not cfg.matches(hs_frame.handshake):
            raise SessionError(
                f"handshake mismatch: peer proposed {hs_frame.handshake}, "
                f"expected dt={cfg.dt}, t_end={cfg.t_end}, "
                f"mask={cfg.dof_mask}, estimator={cfg.estimator}"
            )
        reply = Frame(
            msg_type=MsgType.HANDSHAKE,
            dof_count=len(cfg.dofs),
            seq=0,
            sim_time=0.0,
            handshake=hs_frame.handshake,
        )
        ep.send(reply)
        self._last_reply = reply

        for k in range(n_samples):
            seq = k + 1
            ep.expected_seq = seq

            def accept_measurement(frame: Frame, _seq=seq) -> Optional[str]:
                if frame.msg_type == MsgType.HANDSHAKE:
                    return "dup"  # our handshake echo was lost
                if frame.msg_type != MsgType.MEASUREMENT:
                    return "stale"
                if frame.seq == _seq:
                    return None
                if frame.seq == _seq - 1:
                    return "dup"
                return "stale"

            meas = self._wait_for(accept_measurement, step=k)
            cmd = self.session.process(
                k, np.asarray(meas.forces), np.asarray(meas.displacements)
            )
            reply = Frame(
                msg_type=MsgType.COMMAND,
                dof_count=len(cfg.dofs),
                seq=seq,
                sim_time=k * cfg.dt,
                displacements=tuple(cmd),
            )
            ep.send(reply)
            self._last_reply = reply

        # Final SHUTDOWN exchange; losing it does not affect the data.
        final_seq = n_samples + 1

        def accept_shutdown(frame: Frame) -> Optional[str]:
            if frame.msg_type == MsgType.SHUTDOWN and frame.seq == final_seq:
                return None
            if frame.msg_type == MsgType.MEASUREMENT and frame.seq == n_samples:
                return "dup"
            return "stale"

        try:
            self._wait_for(accept_shutdown, step=n_samples)
            ep.send(
                Frame(
                    msg_type=MsgType.SHUTDOWN,
                    dof_count=len(cfg.dofs),
                    seq=final_seq,
                    sim_time=cfg.t_end,
                )
            )
        except SessionError:
            pass  # all exchanges complete; peer already gone
        finally:
            self.sock.close()
        return self.session.series()


class SurrogateRunner:
    """Force-generator-side endpoint of the UDP-split loop."""

    def __init__(
        self,
        cfg: LockstepConfig,
        session: SurrogateSession,
        connect: tuple[str, int],
        loss: Optional[LossInjector] = None,
    ):
        self.cfg = cfg
        self.session = session
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.endpoint = LockstepEndpoint(
            self.sock, connect, cfg.timeout, cfg.max_retries, loss
        )

    @property
    def stats(self) -> SessionStats:
        return self.endpoint.stats

    def run(self) -> None:
        cfg = self.cfg
        ep = self.endpoint
        n_dofs = len(cfg.dofs)
        hs = Frame(
            msg_type=MsgType.HANDSHAKE,
            dof_count=n_dofs,
            seq=0,
            sim_time=0.0,
            handshake=Handshake(
                dt=cfg.dt,
                t_end=cfg.t_end,
                dof_mask=cfg.dof_mask,
                estimator_id=cfg.estimator_id,
            ),
        )
        ep.request(hs, MsgType.HANDSHAKE, 0)
        self.session.prepare(cfg.n_samples, n_dofs)

        try:
            for k in range(cfg.n_samples):
                seq = k + 1
                ep.expected_seq = seq
                forces, disps = self.session.measure(k)
                meas = Frame(
                    msg_type=MsgType.MEASUREMENT,
                    dof_count=n_dofs,
                    seq=seq,
                    sim_time=k * cfg.dt,
                    forces=tuple(forces),
                    displacements=tuple(disps),
                )
                command = ep.request(meas, MsgType.COMMAND, seq)
                self.session.apply_command(np.asarray(command.displacements))
                if k < cfg.n_samples - 1:
                    self.session.advance()

            bye = Frame(
                msg_type=MsgType.SHUTDOWN,
                dof_count=n_dofs,
                seq=cfg.n_samples + 1,
                sim_time=cfg.t_end,
            )
            try:
                ep.request(bye, MsgType.SHUTDOWN, cfg.n_samples + 1)
            except SessionError:
                pass  # shutdown ack lost; loop already complete
        finally:
            self.sock.close()


def numerical_server(
    cfg: LockstepConfig,
    session: EstimatorSession,
    bind: tuple[str, int] = ("127.0.0.1", 0),
    loss: Optional[LossInjector] = None,
) -> TimeSeries:
    """Run the estimator side of a UDP session to completion."""
    return NumericalServer(cfg, session, bind, loss).run()


def surrogate_physical(
    cfg: LockstepConfig,
    session: SurrogateSession,
    connect: tuple[str, int],
    loss: Optional[LossInjector] = None,
) -> None:
    """Run the force-generator side of a UDP session to completion."""
    SurrogateRunner(cfg, session, connect, loss).run()


def run_udp_pair(
    cfg: LockstepConfig,
    est: EstimatorSession,
    sur: SurrogateSession,
    server_loss: Optional[LossInjector] = None,
    surrogate_loss: Optional[LossInjector] = None,
) -> tuple[TimeSeries, SessionStats, SessionStats]:
    """Run server and surrogate against each other on the loopback
    interface, the surrogate on a background thread.

    Returns (series, server stats, surrogate stats); exceptions from the
    surrogate thread are re-raised here.  The handshake grace period is
    short since both endpoints start together.
    """
    server = NumericalServer(
        cfg, est, ("127.0.0.1", 0), server_loss, handshake_timeout=5.0
    )
    runner = SurrogateRunner(cfg, sur, server.address, surrogate_loss)
    failure: list[BaseException] = []

    def _run_surrogate():
        try:
            runner.run()
        except BaseException as exc:  # propagate to the caller's thread
            failure.append(exc)

    thread = threading.Thread(target=_run_surrogate, name="surrogate", daemon=True)
    thread.start()
    try:
        series = server.run()
    finally:
        thread.join(timeout=10.0)
    if failure:
        raise failure[0]
    return series, server.stats, runner.stats
