"""YAML configuration for cells, drive cycles and the FDI protocol.

A configuration file has five top-level sections; any key that is omitted
takes its value from the shipped ``data/default.yaml``::

    cell:        CellParameters fields (SI units)
    theta0:      {eps_s_neg, R_f, g_s, n_Li}
    x0:          [soc, c_ss_bar] at the start of the record
    ocp:         {positive: <curve>, negative: <curve>}, see ocp_from_config
    cycle:       {source: synthetic | <csv path>, max_c_rate, mean_c_rate, seed, ...}
    experiment:  ExperimentConfig fields

Relative paths inside a file are resolved against that file's directory.
"""
from __future__ import annotations

import copy
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .cycles import DriveCycle, load_drive_cycle, synthetic_drive_cycle
from .ehm import PARAM_NAMES, CellParameters, check_orientation, nominal_capacity_ah
from .errors import ConfigError
from .experiment import Bench, ExperimentConfig
from .ocp import ocp_from_config


def default_config_text() -> str:
    return resources.files("ehmfdi").joinpath("data/default.yaml").read_text()


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Default configuration, updated by the file at ``path`` and then ``overrides``."""
    cfg = yaml.safe_load(default_config_text())
    cfg["_base_dir"] = None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            user = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        unknown = set(user) - set(cfg)
        if unknown:
            raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
        cfg = _merge(cfg, user)
        cfg["_base_dir"] = str(path.parent.resolve())
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def _resolve(cfg: dict, p) -> Path:
    p = Path(p)
    if not p.is_absolute() and cfg.get("_base_dir"):
        p = Path(cfg["_base_dir"]) / p
    return p


def cell_from_config(cfg: dict) -> CellParameters:
    names = {f.name for f in fields(CellParameters)}
    section = dict(cfg.get("cell", {}))
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown cell parameter(s): {sorted(unknown)}")
    try:
        return CellParameters(**{k: float(v) for k, v in section.items()})
    except TypeError as exc:
        raise ConfigError(f"cell section: {exc}") from None


def theta_from_config(cfg: dict) -> np.ndarray:
    section = cfg.get("theta0", {})
    missing = [n for n in PARAM_NAMES if n not in section]
    if missing:
        raise ConfigError(f"theta0 is missing {missing}")
    return np.array([float(section[n]) for n in PARAM_NAMES])


def experiment_from_config(cfg: dict) -> ExperimentConfig:
    names = {f.name for f in fields(ExperimentConfig)}
    section = dict(cfg.get("experiment", {}))
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown experiment setting(s): {sorted(unknown)}")
    return ExperimentConfig(**section)


def cycle_from_config(cfg: dict, capacity_ah: float, n_samples: int, T_s: float,
                      path_override=None) -> DriveCycle:
    section = dict(cfg.get("cycle", {}))
    source = path_override or section.pop("source", "synthetic")
    section.pop("source", None)
    max_c = float(section.pop("max_c_rate", 10.0))
    if source == "synthetic":
        mean_c = float(section.pop("mean_c_rate", 1.8))
        if "taper" in section:
            section["taper"] = tuple(section["taper"])
        return synthetic_drive_cycle(capacity_ah, n_samples, T_s=T_s, max_c_rate=max_c,
                                     mean_c_rate=mean_c, **section)
    return load_drive_cycle(_resolve(cfg, source), max_c, capacity_ah, T_s=T_s,
                            n_samples=n_samples)


def bench_from_config(cfg: dict, cycle_path=None, check: bool = True) -> tuple[Bench, ExperimentConfig]:
    """Build the simulation bench and protocol settings from a loaded config."""
    params = cell_from_config(cfg)
    theta0 = theta_from_config(cfg)
    ocp_cfg = cfg.get("ocp", {})
    if "positive" not in ocp_cfg or "negative" not in ocp_cfg:
        raise ConfigError("ocp section needs 'positive' and 'negative' curves")
    curves = {}
    for side in ("positive", "negative"):
        c = dict(ocp_cfg[side])
        if "path" in c:
            c["path"] = str(_resolve(cfg, c["path"]))
        curves[side] = ocp_from_config(c)
    if check:
        check_orientation(theta0, params, curves["positive"], curves["negative"])
    exp = experiment_from_config(cfg)
    cap = nominal_capacity_ah(theta0, params)
    cycle = cycle_from_config(cfg, cap, exp.N, params.T_s, cycle_path)
    x0 = np.asarray(cfg.get("x0", [0.97, 0.97]), dtype=float)
    if x0.shape != (2,):
        raise ConfigError("x0 must be a pair [soc, c_ss_bar]")
    return Bench(theta0, params, curves["positive"], curves["negative"], x0, cycle), exp


def default_bench(**experiment_overrides) -> tuple[Bench, ExperimentConfig]:
    """Bench and protocol of the shipped default configuration."""
    cfg = load_config(overrides={"experiment": experiment_overrides} if experiment_overrides else None)
    return bench_from_config(cfg)
