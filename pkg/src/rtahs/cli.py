"""Command-line harness.

Subcommands: ``run`` (full case: loop + oracle + metrics + artifacts),
``serve``/``physical`` (one endpoint of a UDP session each), ``compare``
(metrics between two CSV artifacts), and ``delay-study``.

Exit codes: 0 success, 2 configuration error, 3 session error,
4 success with divergence-truncated series (informational).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SESSION = 3
EXIT_TRUNCATED = 4


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host, int(port)


def _load_case(args) -> "CaseConfig":
    from .cases import default_config
    from .config import load_config

    if getattr(args, "config", None):
        cfg = load_config(args.config)
        if getattr(args, "case", None) and args.case != cfg.case:
            cfg = default_config(args.case)
    elif getattr(args, "case", None):
        cfg = default_config(args.case)
    else:
        raise ValueError("either --case or --config is required")

    overrides = {}
    if getattr(args, "dt", None) is not None:
        overrides["dt"] = args.dt
    if getattr(args, "t_end", None) is not None:
        overrides["t_end"] = args.t_end
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        overrides["mode"] = args.mode
    if getattr(args, "estimator", None) is not None:
        overrides["estimator"] = args.estimator
    if overrides:
        cfg = replace(cfg, **overrides)
    if getattr(args, "delay", None) is not None:
        cfg = replace(cfg, surrogate=replace(cfg.surrogate, delay_tau=args.delay))
    return cfg


def _cmd_run(args) -> int:
    from .cosim import SessionError
    from .harness import run_case, write_case_artifacts, write_series

    cfg = _load_case(args)
    out = Path(args.out)
    try:
        result = run_case(cfg)
    except SessionError as exc:
        if exc.partial_series is not None and len(exc.partial_series) > 0:
            out.mkdir(parents=True, exist_ok=True)
            write_series(exc.partial_series, out / "rtahs.partial.csv")
            print(f"partial trajectory written to {out / 'rtahs.partial.csv'}", file=sys.stderr)
        raise
    paths = write_case_artifacts(result, out)
    for channel, m in sorted(result.metrics.items()):
        nrms = "undefined" if m.normalized_rms is None else f"{m.normalized_rms:.6g}"
        print(
            f"{channel}: rms_error={m.rms_error:.6g} peak_error={m.peak_error:.6g} "
            f"normalized_rms={nrms} envelope={m.envelope}"
        )
    print(f"artifacts written to {out}")
    if result.truncated:
        print("note: at least one series was divergence-truncated")
        return EXIT_TRUNCATED
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .cosim import NumericalServer
    from .harness import build_estimator_session, lockstep_config, write_series

    cfg = _load_case(args)
    server = NumericalServer(
        lockstep_config(cfg), build_estimator_session(cfg), bind=_parse_addr(args.bind)
    )
    print(f"numerical substructure listening on {server.address[0]}:{server.address[1]}")
    series = server.run()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_series(series, out / "rtahs.csv")
        print(f"trajectory written to {out / 'rtahs.csv'}")
    st = server.stats
    print(f"session complete: sent={st.sent} received={st.received} retries={st.retries}")
    return EXIT_OK


def _cmd_physical(args) -> int:
    from .cases import StaticGenerator, truth_generator
    from .cosim import SurrogateRunner, SurrogateSession
    from .harness import lockstep_config

    cfg = _load_case(args)
    if args.model == "zero":
        generator = StaticGenerator(cfg.n_dofs, cfg.dt)
    else:
        generator = truth_generator(cfg)
    session = SurrogateSession(
        generator=generator,
        dt=cfg.dt,
        disp_noise_std=cfg.surrogate.disp_noise_std,
        force_noise_std=cfg.surrogate.force_noise_std,
        delay_tau=cfg.surrogate.delay_tau,
        seed=cfg.seed,
    )
    runner = SurrogateRunner(lockstep_config(cfg), session, _parse_addr(args.connect))
    runner.run()
    st = runner.stats
    print(f"session complete: sent={st.sent} received={st.received} retries={st.retries}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    from .harness import read_series
    from .metrics import compare_series

    a = read_series(Path(args.a))
    b = read_series(Path(args.b))
    m = compare_series(a, b, args.channel)
    nrms = "undefined" if m.normalized_rms is None else f"{m.normalized_rms:.6g}"
    print(f"rms_error = {m.rms_error:.6g}")
    print(f"peak_error = {m.peak_error:.6g}")
    print(f"normalized_rms = {nrms}")
    print(f"envelope = {m.envelope}")
    return EXIT_OK


def _cmd_delay_study(args) -> int:
    from .harness import FLOAT_FMT, run_delay_study

    cfg = _load_case(args)
    taus = [float(v) for v in args.taus.split(",") if v != ""]
    rows = run_delay_study(cfg, taus, compare_adaptation_off=args.compare_adaptation_off)
    lines = ["tau,adaptation,channel,rms_error,peak_error,normalized_rms,envelope"]
    for row in rows:
        for channel, m in sorted(row.metrics.items()):
            nrms = "undefined" if m.normalized_rms is None else FLOAT_FMT.format(m.normalized_rms)
            lines.append(
                ",".join(
                    [
                        FLOAT_FMT.format(row.tau),
                        str(row.adaptation).lower(),
                        channel,
                        FLOAT_FMT.format(m.rms_error),
                        FLOAT_FMT.format(m.peak_error),
                        nrms,
                        m.envelope,
                    ]
                )
            )
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "delay_study.csv").write_text(table)
        print(f"table written to {out / 'delay_study.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtahs",
        description="Real-time aeroelastic hybrid simulation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a validation case (loop + oracle + metrics)")
    runp.add_argument("--case", choices=("case1-linear", "case1-nonlinear", "case2dof"))
    runp.add_argument("--config", help="YAML configuration file")
    runp.add_argument("--out", required=True, help="output directory for artifacts")
    runp.add_argument("--dt", type=float)
    runp.add_argument("--t-end", dest="t_end", type=float)
    runp.add_argument("--delay", type=float, help="force-channel delay in seconds")
    runp.add_argument("--seed", type=int)
    runp.add_argument("--mode", choices=("in-process", "udp"))
    runp.add_argument("--estimator", choices=("kf", "ekf", "aekf"))
    runp.set_defaults(func=_cmd_run)

    servep = sub.add_parser("serve", help="run the numerical-substructure UDP server")
    servep.add_argument("--bind", required=True, help="host:port to bind")
    servep.add_argument("--config", required=True)
    servep.add_argument("--out", help="directory for the trajectory CSV")
    servep.set_defaults(func=_cmd_serve)

    physp = sub.add_parser("physical", help="run the surrogate physical substructure")
    physp.add_argument("--connect", required=True, help="host:port of the server")
    physp.add_argument("--config", required=True)
    physp.add_argument("--model", default="case", help='"zero" or "case" (config-selected)')
    physp.set_defaults(func=_cmd_physical)

    cmpp = sub.add_parser("compare", help="compare two trajectory CSV files")
    cmpp.add_argument("a", help="reference CSV")
    cmpp.add_argument("b", help="test CSV")
    cmpp.add_argument("--channel", required=True, help="channel name, e.g. x_heave")
    cmpp.set_defaults(func=_cmd_compare)

    delayp = sub.add_parser("delay-study", help="sweep force-channel delays")
    delayp.add_argument("--config", required=True)
    delayp.add_argument("--taus", required=True, help="comma-separated delays in seconds")
    delayp.add_argument("--out", help="directory for the study table")
    delayp.add_argument(
        "--compare-adaptation-off",
        action="store_true",
        help="also run each delayed case with covariance matching disabled",
    )
    delayp.set_defaults(func=_cmd_delay_study)
    return parser


def main(argv=None) -> int:
    from .config import ConfigFileError
    from .cosim import SessionError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigFileError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SessionError as exc:
        print(f"session error: {exc}", file=sys.stderr)
        return EXIT_SESSION


if __name__ == "__main__":
    sys.exit(main())
