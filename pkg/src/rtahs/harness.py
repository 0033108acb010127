"""Run orchestration: execute a configured case (in-process or over the
UDP pair), run the matching oracle, compute comparison metrics, and
write the CSV/summary artifacts."""

from __future__ import annotations

import io
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .cases import (
    CaseConfig,
    adaptive_config,
    filter_model,
    initial_filter_state,
    oracle_system,
    truth_generator,
)
from .cosim import (
    EstimatorSession,
    LockstepConfig,
    LossInjector,
    SessionStats,
    SurrogateSession,
    run_in_process,
    run_udp_pair,
)
from .integrators import MechState, TimeSeries, simulate
from .metrics import ComparisonMetrics, compare_series

# Floats are written with 17 significant digits so CSV artifacts are
# byte-reproducible and round-trip exactly.
FLOAT_FMT = "{:.17g}"


@dataclass
class CaseResult:
    config: CaseConfig
    rtahs: TimeSeries
    oracle: TimeSeries
    metrics: dict[str, ComparisonMetrics]
    elapsed: float
    server_stats: Optional[SessionStats] = None
    surrogate_stats: Optional[SessionStats] = None
    cov_min_eig: Optional[float] = None

    @property
    def truncated(self) -> bool:
        return self.rtahs.truncated or self.oracle.truncated


def build_estimator_session(cfg: CaseConfig, trace_covariance: bool = False) -> EstimatorSession:
    model = filter_model(cfg)
    return EstimatorSession(
        model=model,
        init=initial_filter_state(cfg, model),
        estimator=cfg.estimator,
        dofs=cfg.dofs,
        dt=cfg.dt,
        n_samples=cfg.n_samples,
        adaptive=adaptive_config(cfg),
        trace_covariance=trace_covariance,
    )


def build_surrogate_session(cfg: CaseConfig) -> SurrogateSession:
    return SurrogateSession(
        generator=truth_generator(cfg),
        dt=cfg.dt,
        disp_noise_std=cfg.surrogate.disp_noise_std,
        force_noise_std=cfg.surrogate.force_noise_std,
        delay_tau=cfg.surrogate.delay_tau,
        seed=cfg.seed,
    )


def lockstep_config(cfg: CaseConfig) -> LockstepConfig:
    return LockstepConfig(
        dt=cfg.dt,
        t_end=cfg.t_end,
        dofs=cfg.dofs,
        estimator=cfg.estimator,
        timeout=cfg.cosim.timeout,
        max_retries=cfg.cosim.max_retries,
    )


def run_loop(cfg: CaseConfig, trace_covariance: bool = False):
    """Run only the hybrid loop of a case; returns (series, server
    stats, surrogate stats, min covariance eigenvalue seen)."""
    est = build_estimator_session(cfg, trace_covariance=trace_covariance)
    sur = build_surrogate_session(cfg)
    if cfg.mode == "udp":
        loss_rate = cfg.cosim.loss_rate
        server_loss = LossInjector(loss_rate, seed=cfg.seed + 1) if loss_rate else None
        sur_loss = LossInjector(loss_rate, seed=cfg.seed + 2) if loss_rate else None
        series, sstats, pstats = run_udp_pair(
            lockstep_config(cfg), est, sur, server_loss, sur_loss
        )
    else:
        series = run_in_process(est, sur, cfg.n_samples)
        sstats = pstats = None
    min_eig = min(est.cov_min_eig) if est.cov_min_eig else None
    return series, sstats, pstats, min_eig


def run_oracle(cfg: CaseConfig) -> TimeSeries:
    """Run the high-fidelity reference integrator for a case."""
    system = oracle_system(cfg)
    init = MechState(
        x=np.asarray(cfg.x0_disp, float),
        v=np.asarray(cfg.x0_vel, float),
        acc=np.zeros(cfg.n_dofs),
        t=0.0,
    )
    return simulate(system, init, cfg.dt, cfg.t_end)


def run_case(cfg: CaseConfig, trace_covariance: bool = False) -> CaseResult:
    """Run the hybrid loop and the oracle, compare per displacement
    channel (oracle as reference), and bundle the artifacts."""
    start = time.perf_counter()
    rtahs, sstats, pstats, min_eig = run_loop(cfg, trace_covariance=trace_covariance)
    oracle = run_oracle(cfg)
    metrics = {}
    for d in cfg.dofs:
        channel = f"x_{d.label}"
        metrics[channel] = compare_series(oracle, rtahs, channel)
    return CaseResult(
        config=cfg,
        rtahs=rtahs,
        oracle=oracle,
        metrics=metrics,
        elapsed=time.perf_counter() - start,
        server_stats=sstats,
        surrogate_stats=pstats,
        cov_min_eig=min_eig,
    )


@dataclass
class DelayStudyRow:
    tau: float
    metrics: dict[str, ComparisonMetrics]
    adaptation: bool = True


def run_delay_study(
    cfg: CaseConfig, taus: list[float], compare_adaptation_off: bool = False
) -> list[DelayStudyRow]:
    """Run the case once per force-channel delay and report each run's
    deviation from the single undelayed reference of the study (per
    displacement channel).

    With ``compare_adaptation_off`` an extra row per nonzero delay runs
    the same filter with covariance matching switched off, against the
    same reference, quantifying what the adaptation buys under delay.
    """
    from dataclasses import replace

    for tau in taus:
        if tau < 0:
            raise ValueError(f"delay must be >= 0, got {tau}")
    base_cfg = replace(cfg, surrogate=replace(cfg.surrogate, delay_tau=0.0))
    reference, _, _, _ = run_loop(base_cfg)

    def one_run(run_cfg, tau, adaptation):
        series, _, _, _ = run_loop(run_cfg)
        metrics = {
            f"x_{d.label}": compare_series(reference, series, f"x_{d.label}")
            for d in cfg.dofs
        }
        return DelayStudyRow(tau=tau, metrics=metrics, adaptation=adaptation)

    rows = []
    for tau in taus:
        run_cfg = replace(cfg, surrogate=replace(cfg.surrogate, delay_tau=tau))
        rows.append(one_run(run_cfg, tau, cfg.filter.adapt_enabled))
        if compare_adaptation_off and tau > 0 and cfg.estimator == "aekf":
            off_cfg = replace(
                run_cfg, filter=replace(run_cfg.filter, adapt_enabled=False)
            )
            rows.append(one_run(off_cfg, tau, False))
    return rows


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def series_to_csv(series: TimeSeries) -> str:
    buf = io.StringIO()
    names = series.channels
    buf.write(",".join(["t"] + names) + "\n")
    cols = [series.t] + [series.data[n] for n in names]
    for row in zip(*cols):
        buf.write(",".join(FLOAT_FMT.format(v) for v in row) + "\n")
    return buf.getvalue()


def write_series(series: TimeSeries, path: Path) -> None:
    path.write_text(series_to_csv(series))


def read_series(path: Path) -> TimeSeries:
    """Load a CSV artifact back into a TimeSeries."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    if header[0] != "t":
        raise ValueError(f"{path}: first column must be t, got {header[0]!r}")
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    if rows.shape[0] < 2:
        raise ValueError(f"{path}: need at least two samples")
    t = rows[:, 0]
    steps = np.diff(t)
    dt = steps[0]
    if not np.allclose(steps, dt, rtol=0, atol=1e-9 * max(dt, 1.0)):
        raise ValueError(f"{path}: time grid is not uniform")
    data = {name: rows[:, i + 1] for i, name in enumerate(header[1:])}
    return TimeSeries(dt=float(dt), t=t, data=data)


def config_summary_items(cfg: CaseConfig) -> list[tuple[str, str]]:
    """Flat, stably ordered echo of every configuration field."""
    items: list[tuple[str, str]] = [
        ("case", cfg.case),
        ("estimator", cfg.estimator),
        ("mode", cfg.mode),
        ("dt", FLOAT_FMT.format(cfg.dt)),
        ("t_end", FLOAT_FMT.format(cfg.t_end)),
        ("seed", str(cfg.seed)),
        ("span", FLOAT_FMT.format(cfg.span)),
    ]
    for i, p in enumerate(sorted(cfg.modal, key=lambda p: p.dof)):
        base = f"modal.{p.dof.label}"
        items += [
            (f"{base}.inertia", FLOAT_FMT.format(p.inertia)),
            (f"{base}.damping_ratio", FLOAT_FMT.format(p.damping_ratio)),
            (f"{base}.circ_freq", FLOAT_FMT.format(p.circ_freq)),
            (f"x0.{p.dof.label}.disp", FLOAT_FMT.format(cfg.x0_disp[i])),
            (f"x0.{p.dof.label}.vel", FLOAT_FMT.format(cfg.x0_vel[i])),
        ]
    a = cfg.aero
    for name in ("rho", "U", "D", "B", "Y1", "Y2", "eps", "CL_tilde", "omega_vs", "psi"):
        items.append((f"aero.{name}", FLOAT_FMT.format(getattr(a, name))))
    if cfg.coupling is not None:
        for name, mat in (("E_d", cfg.coupling.E_d), ("E_s", cfg.coupling.E_s)):
            for r in range(2):
                for c in range(2):
                    items.append(
                        (f"coupling.{name}[{r}][{c}]", FLOAT_FMT.format(mat[r, c]))
                    )
    f = cfg.filter
    items += [
        ("filter.p0", FLOAT_FMT.format(f.p0)),
        ("filter.process_var", FLOAT_FMT.format(f.process_var)),
        ("filter.meas_var", FLOAT_FMT.format(f.meas_var)),
        ("filter.process_mean", FLOAT_FMT.format(f.process_mean)),
        ("filter.meas_mean", FLOAT_FMT.format(f.meas_mean)),
        ("filter.forgetting_factor", FLOAT_FMT.format(f.forgetting_factor)),
        ("filter.adapt_enabled", str(f.adapt_enabled).lower()),
        ("filter.q_update_form", f.q_update_form),
        ("filter.jacobian", f.jacobian),
        ("x_hat0", "truth" if cfg.x_hat0 is None else ",".join(map(str, cfg.x_hat0))),
    ]
    s = cfg.surrogate
    items += [
        ("surrogate.kind", s.kind),
        ("surrogate.disp_noise_std", FLOAT_FMT.format(s.disp_noise_std)),
        ("surrogate.force_noise_std", FLOAT_FMT.format(s.force_noise_std)),
        ("surrogate.delay_tau", FLOAT_FMT.format(s.delay_tau)),
    ]
    c = cfg.cosim
    items += [
        ("cosim.timeout", FLOAT_FMT.format(c.timeout)),
        ("cosim.max_retries", str(c.max_retries)),
        ("cosim.loss_rate", FLOAT_FMT.format(c.loss_rate)),
    ]
    return items


def metrics_summary_items(metrics: dict[str, ComparisonMetrics]) -> list[tuple[str, str]]:
    items = []
    for channel in sorted(metrics):
        m = metrics[channel]
        items += [
            (f"metrics.{channel}.rms_error", FLOAT_FMT.format(m.rms_error)),
            (f"metrics.{channel}.peak_error", FLOAT_FMT.format(m.peak_error)),
            (
                f"metrics.{channel}.normalized_rms",
                "undefined" if m.normalized_rms is None else FLOAT_FMT.format(m.normalized_rms),
            ),
            (f"metrics.{channel}.envelope", m.envelope),
        ]
    return items


def write_summary(result: CaseResult, path: Path) -> None:
    items = config_summary_items(result.config)
    items.append(("rtahs.samples", str(len(result.rtahs))))
    items.append(("rtahs.truncated", str(result.rtahs.truncated).lower()))
    items.append(("oracle.truncated", str(result.oracle.truncated).lower()))
    items += metrics_summary_items(result.metrics)
    if result.server_stats is not None:
        st = result.server_stats
        items += [
            ("session.server.sent", str(st.sent)),
            ("session.server.received", str(st.received)),
            ("session.server.retries", str(st.retries)),
            ("session.server.stale", str(st.stale)),
        ]
    if result.surrogate_stats is not None:
        st = result.surrogate_stats
        items += [
            ("session.surrogate.sent", str(st.sent)),
            ("session.surrogate.received", str(st.received)),
            ("session.surrogate.retries", str(st.retries)),
            ("session.surrogate.stale", str(st.stale)),
        ]
    path.write_text("".join(f"{k} = {v}\n" for k, v in items))


def write_case_artifacts(result: CaseResult, out_dir: Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "rtahs": out_dir / "rtahs.csv",
        "oracle": out_dir / "oracle.csv",
        "summary": out_dir / "summary.txt",
    }
    write_series(result.rtahs, paths["rtahs"])
    write_series(result.oracle, paths["oracle"])
    write_summary(result, paths["summary"])
    return paths
