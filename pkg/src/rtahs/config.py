"""YAML configuration files for the harness.

A config file selects a shipped case and overrides any subset of its
fields; unknown keys are rejected.  The full schema (all values shown
are the ``case1-linear`` defaults):

.. code-block:: yaml

    case: case1-linear        # case1-linear | case1-nonlinear | case2dof
    estimator: kf             # kf | ekf | aekf
    dt: 0.001
    t_end: 50.0
    seed: 0
    mode: in-process          # in-process | udp
    span: 1.8                 # model span aggregating force per unit length
    structure:
      modal:                  # one entry per active DOF
        - dof: heave          # heave | transverse | torsion
          inertia: 182.178
          damping_ratio: 0.005
          circ_freq: 17.64
      x0:                     # true initial conditions per DOF
        heave: {disp: 0.01, vel: 0.0}
      x_hat0: truth           # "truth" or a flat [disp, vel, ...] state list
    aero:
      rho: 1.25
      U: 9.1
      D: 0.175
      B: 0.0
      Y1: 6.5
      Y2: -2.194
      eps: 0.5
      CL_tilde: -0.022
      omega_vs: 0.4477
      psi: -0.0128
    coupling:                 # case2dof only
      variant: convergent     # convergent | divergent | custom
      E_d: [[-0.9, 0.2], [0.02, -0.05]]   # with variant: custom
      E_s: [[0.0, 1.2], [0.08, 2.0]]
    filter:
      p0: 1.0e-10
      process_var: 1.0e-05
      meas_var: 1.0e-05
      process_mean: 0.0
      meas_mean: 0.0
      forgetting_factor: 0.96
      adapt_enabled: true
      q_update_form: linearized   # linearized | residual
      jacobian: analytic          # analytic | numeric
    surrogate:
      kind: integrator        # integrator | echo
      disp_noise_std: 1.0e-05
      force_noise_std: 1.0e-04
      delay_tau: 0.0
    cosim:
      timeout: 0.1
      max_retries: 3
      loss_rate: 0.0
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .aero import CoupledSeMatrices
from .cases import (
    CASE_IDS,
    COUPLING_CONVERGENT,
    COUPLING_DIVERGENT,
    CaseConfig,
    default_config,
)
from .dynamics import DofId, ModalParams


class ConfigFileError(ValueError):
    """Malformed or inconsistent configuration input."""


_TOP_KEYS = {
    "case",
    "estimator",
    "dt",
    "t_end",
    "seed",
    "mode",
    "span",
    "structure",
    "aero",
    "coupling",
    "filter",
    "surrogate",
    "cosim",
}


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigFileError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _parse_dof(name: str) -> DofId:
    try:
        return DofId[str(name).upper()]
    except KeyError:
        raise ConfigFileError(f"unknown DOF {name!r}") from None


def _replace_dataclass(obj, section: dict, where: str):
    _check_keys(section, set(obj.__dataclass_fields__), where)
    try:
        return replace(obj, **section)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(f"bad value in {where}: {exc}") from exc


def config_from_dict(raw: dict[str, Any]) -> CaseConfig:
    """Resolve a nested mapping (parsed YAML) into a CaseConfig, starting
    from the selected case's defaults."""
    if not isinstance(raw, dict):
        raise ConfigFileError("configuration root must be a mapping")
    _check_keys(raw, _TOP_KEYS, "configuration root")
    case = raw.get("case")
    if case not in CASE_IDS:
        raise ConfigFileError(f"case must be one of {CASE_IDS}, got {case!r}")
    try:
        cfg = default_config(case, raw.get("estimator"))
    except ValueError as exc:
        raise ConfigFileError(str(exc)) from exc

    top: dict[str, Any] = {}
    for key in ("dt", "t_end", "span"):
        if key in raw:
            top[key] = float(raw[key])
    if "seed" in raw:
        top["seed"] = int(raw["seed"])
    if "mode" in raw:
        top["mode"] = str(raw["mode"])

    if "structure" in raw:
        sec = raw["structure"]
        _check_keys(sec, {"modal", "x0", "x_hat0"}, "structure")
        if "modal" in sec:
            modal = []
            for entry in sec["modal"]:
                _check_keys(
                    entry,
                    {"dof", "inertia", "damping_ratio", "circ_freq"},
                    "structure.modal entry",
                )
                try:
                    modal.append(
                        ModalParams(
                            dof=_parse_dof(entry["dof"]),
                            inertia=float(entry["inertia"]),
                            damping_ratio=float(entry["damping_ratio"]),
                            circ_freq=float(entry["circ_freq"]),
                        )
                    )
                except (KeyError, ValueError) as exc:
                    raise ConfigFileError(f"bad modal entry: {exc}") from exc
            top["modal"] = tuple(sorted(modal, key=lambda p: p.dof))
        if "x0" in sec:
            modal = top.get("modal", cfg.modal)
            dofs = [p.dof for p in sorted(modal, key=lambda p: p.dof)]
            disp, vel = [], []
            x0 = sec["x0"]
            _check_keys(x0, {d.label for d in dofs}, "structure.x0")
            for d in dofs:
                entry = x0.get(d.label, {})
                _check_keys(entry, {"disp", "vel"}, f"structure.x0.{d.label}")
                disp.append(float(entry.get("disp", 0.0)))
                vel.append(float(entry.get("vel", 0.0)))
            top["x0_disp"] = tuple(disp)
            top["x0_vel"] = tuple(vel)
        if "x_hat0" in sec:
            val = sec["x_hat0"]
            if val == "truth":
                top["x_hat0"] = None
            else:
                top["x_hat0"] = tuple(float(v) for v in val)

    if "aero" in raw:
        sec = dict(raw["aero"])
        _check_keys(
            sec,
            {"rho", "U", "D", "B", "Y1", "Y2", "eps", "CL_tilde", "omega_vs", "psi"},
            "aero",
        )
        try:
            top["aero"] = replace(cfg.aero, **{k: float(v) for k, v in sec.items()})
        except ValueError as exc:
            raise ConfigFileError(f"bad aero value: {exc}") from exc

    if "coupling" in raw:
        sec = raw["coupling"]
        _check_keys(sec, {"variant", "E_d", "E_s"}, "coupling")
        variant = sec.get("variant", "custom")
        if variant == "convergent":
            top["coupling"] = COUPLING_CONVERGENT
        elif variant == "divergent":
            top["coupling"] = COUPLING_DIVERGENT
        elif variant == "custom":
            try:
                top["coupling"] = CoupledSeMatrices(
                    E_d=np.asarray(sec["E_d"], dtype=float),
                    E_s=np.asarray(sec["E_s"], dtype=float),
                )
            except (KeyError, ValueError) as exc:
                raise ConfigFileError(f"bad coupling matrices: {exc}") from exc
        else:
            raise ConfigFileError(f"unknown coupling variant {variant!r}")

    if "filter" in raw:
        top["filter"] = _replace_dataclass(cfg.filter, dict(raw["filter"]), "filter")
    if "surrogate" in raw:
        top["surrogate"] = _replace_dataclass(
            cfg.surrogate, dict(raw["surrogate"]), "surrogate"
        )
    if "cosim" in raw:
        top["cosim"] = _replace_dataclass(cfg.cosim, dict(raw["cosim"]), "cosim")

    try:
        return replace(cfg, **top)
    except ValueError as exc:
        raise ConfigFileError(str(exc)) from exc


def load_config(path: str | Path) -> CaseConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigFileError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigFileError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw or {})
