"""End-to-end FDI experiments: plant simulation, filtering, statistics, Monte Carlo.

The plant trajectory of a scenario is deterministic, so it is simulated once;
each replicate only adds its own measurement-noise realization.  Replicates
are processed in batches through one vectorized filter loop.  Per-replicate
noise streams are spawned from the master seed with :class:`numpy.random.SeedSequence`,
so results do not depend on the batch size or on the order of evaluation.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cycles import DriveCycle
from .ehm import (PARAM_NAMES, CellParameters, Trajectory, _theta, nominal_capacity_ah,
                  output_voltage, simulate)
from .errors import ConfigError, EhmError
from .local_fdi import FdiReport, LocalStatistics, chi2_quantile, run_tests
from .ocp import OcpCurve
from .sensitivity import second_order_sensitivity, sensitivity_trajectory
from .ukf import EhmModel, UkfConfig, run_ukf

log = logging.getLogger(__name__)

FAULT_KINDS = ("none", "param_relative", "side_reaction")


@dataclass(frozen=True)
class FaultSpec:
    """What differs between the plant and the nominal model."""

    kind: str = "none"
    target: str | None = None
    delta_rel: float = 0.0
    j_sr0_override: float | None = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ConfigError(f"fault kind must be one of {FAULT_KINDS}, got {self.kind!r}")
        if self.kind == "param_relative":
            if self.target not in PARAM_NAMES:
                raise ConfigError(f"fault target must be one of {PARAM_NAMES}, got {self.target!r}")
            if self.delta_rel == 0 or not math.isfinite(self.delta_rel):
                raise ConfigError("param_relative fault needs a finite non-zero delta_rel")
            if self.delta_rel <= -1:
                raise ConfigError("delta_rel must be greater than -1")
        if self.kind == "side_reaction" and self.j_sr0_override is not None:
            if not self.j_sr0_override > 0:
                raise ConfigError("j_sr0 override must be positive")

    @classmethod
    def none(cls) -> "FaultSpec":
        return cls()

    @classmethod
    def parameter(cls, target: str, delta_rel: float) -> "FaultSpec":
        return cls("param_relative", target, float(delta_rel))

    @classmethod
    def side_reaction(cls, j_sr0: float | None = None) -> "FaultSpec":
        return cls("side_reaction", j_sr0_override=j_sr0)

    @property
    def label(self) -> str:
        if self.kind == "param_relative":
            return f"{self.target}{self.delta_rel * 100:+g}%"
        if self.kind == "side_reaction":
            j = "default" if self.j_sr0_override is None else f"{self.j_sr0_override:g}"
            return f"side_reaction(j_sr0={j})"
        return "none"

    def plant(self, theta0, params: CellParameters):
        """Plant ``(theta, params, side_reaction)`` for this fault."""
        theta = _theta(theta0).copy()
        if self.kind == "param_relative":
            theta[PARAM_NAMES.index(self.target)] *= 1.0 + self.delta_rel
        if self.kind == "side_reaction":
            if self.j_sr0_override is not None:
                params = params.with_updates(j_sr0=self.j_sr0_override)
            return theta, params, True
        return theta, params, False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentConfig:
    """Protocol settings shared by all scenarios."""

    N: int = 8400
    discard: int = 200
    n_runs: int = 100
    noise_var: float = 1e-5
    seed: int = 0
    n_i: int = 12
    alpha_fa: float = 0.01
    init_state_error_rel: float = -0.05
    Q: float = 1e-8
    P0: float = 1e-3
    ukf_alpha: float = 0.1
    ukf_beta: float = 2.0
    ukf_kappa: float | None = None
    batch_size: int = 100

    def __post_init__(self):
        if not (self.N > self.discard >= 0):
            raise ConfigError("need N > discard >= 0")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if not self.noise_var > 0:
            raise ConfigError("noise_var must be positive")
        if not 0 <= self.n_i < self.N - self.discard:
            raise ConfigError("n_i must be non-negative and smaller than the retained samples")
        if not 0 < self.alpha_fa < 1:
            raise ConfigError("alpha_fa must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")

    @property
    def thresholds(self) -> tuple[float, float]:
        return (chi2_quantile(len(PARAM_NAMES), 1.0 - self.alpha_fa),
                chi2_quantile(1, 1.0 - self.alpha_fa))

    def ukf_config(self, x0) -> UkfConfig:
        x0 = np.asarray(x0, dtype=float)
        return UkfConfig(Q_x=self.Q * np.eye(2), R_x=[[self.noise_var]], P_x0=self.P0 * np.eye(2),
                         x0_hat=(1.0 + self.init_state_error_rel) * x0,
                         alpha=self.ukf_alpha, beta_w=self.ukf_beta, kappa=self.ukf_kappa)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Bench:
    """Nominal cell, its OCPs, initial state and the input record."""

    theta0: np.ndarray
    params: CellParameters
    ocp_pos: OcpCurve
    ocp_neg: OcpCurve
    x0: np.ndarray
    cycle: DriveCycle

    def __post_init__(self):
        self.theta0 = _theta(self.theta0)
        self.x0 = np.asarray(self.x0, dtype=float)

    @property
    def capacity_ah(self) -> float:
        return nominal_capacity_ah(self.theta0, self.params)

    def current(self, N: int) -> np.ndarray:
        if len(self.cycle) < N:
            raise ConfigError(f"drive cycle has {len(self.cycle)} samples, N={N} requested")
        return self.cycle.current[:N]


def simulate_plant(bench: Bench, fault: FaultSpec, N: int) -> Trajectory:
    """Noise-free plant response to the first ``N`` samples of the cycle."""
    theta, params, sr = fault.plant(bench.theta0, bench.params)
    try:
        return simulate(theta, params, bench.ocp_pos, bench.ocp_neg, bench.current(N),
                        bench.x0, side_reaction=sr)
    except EhmError as exc:
        raise type(exc)(f"plant simulation for fault {fault.label}: {exc}") from exc


def noise_streams(seed: int, n_runs: int) -> list[np.random.SeedSequence]:
    """Independent per-replicate seed sequences derived from the master seed."""
    return np.random.SeedSequence(seed).spawn(n_runs)


def measurement_noise(streams, N: int, noise_var: float) -> np.ndarray:
    return np.stack([np.random.default_rng(s).standard_normal(N) for s in streams]) * math.sqrt(noise_var)


def local_statistics(bench: Bench, cfg: ExperimentConfig, y) -> tuple[list[LocalStatistics], dict]:
    """Filter a batch of measured voltages and build the local statistics of each."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    N = y.shape[1]
    u = bench.current(N)
    model = EhmModel(bench.theta0, bench.params, bench.ocp_pos, bench.ocp_neg)
    run = run_ukf(model, u, y, cfg.ukf_config(bench.x0))
    # dynamics Jacobians at the posterior, output Jacobians at the prediction
    sb = sensitivity_trajectory(bench.theta0, bench.params, bench.ocp_pos, bench.ocp_neg, u,
                                run.x_post, run.x_prior)
    s_yy = second_order_sensitivity(bench.theta0, bench.params, bench.ocp_pos, bench.ocp_neg, u,
                                    run.x_post, run.x_prior, s_x=sb.s_x)
    keep = slice(cfg.discard, None)
    stats = [LocalStatistics.from_series(sb.s_y[b, keep], s_yy[b, keep], run.innovation[b, keep],
                                         cfg.n_i)
             for b in range(y.shape[0])]
    extra = {"rms_innovation": np.sqrt(np.mean(run.innovation[:, keep] ** 2, axis=1)),
             "ukf": run}
    return stats, extra


def _metadata(cfg: ExperimentConfig, fault: FaultSpec, run_index: int, seed: int, bench: Bench):
    return {"fault": fault.to_dict(), "fault_label": fault.label, "seed": seed,
            "run_index": run_index, "N": cfg.N, "discard": cfg.discard, "n_i": cfg.n_i,
            "noise_var": cfg.noise_var, "cycle": bench.cycle.metadata.get("label", "")}


def run_batch(bench: Bench, cfg: ExperimentConfig, fault: FaultSpec, run_indices,
              plant: Trajectory | None = None, keep_traces: bool = False):
    """Reports for the replicates ``run_indices`` of one scenario."""
    plant = simulate_plant(bench, fault, cfg.N) if plant is None else plant
    streams = noise_streams(cfg.seed, max(run_indices) + 1)
    idx = list(run_indices)
    y = plant.y[None, :] + measurement_noise([streams[i] for i in idx], cfg.N, cfg.noise_var)
    try:
        stats, extra = local_statistics(bench, cfg, y)
    except EhmError as exc:
        raise type(exc)(f"fault {fault.label}, runs {idx[0]}..{idx[-1]}: {exc}") from exc
    reports = []
    for j, (i, st) in enumerate(zip(idx, stats)):
        meta = _metadata(cfg, fault, i, cfg.seed, bench)
        meta["rms_innovation"] = float(extra["rms_innovation"][j])
        reports.append(run_tests(st, cfg.alpha_fa, meta))
    return (reports, extra["ukf"]) if keep_traces else reports


def run_experiment(cfg: ExperimentConfig, fault: FaultSpec, bench: Bench,
                   run_index: int = 0) -> FdiReport:
    """One replicate: plant, noise, filter, statistics, tests."""
    return run_batch(bench, cfg, fault, [run_index])[0]


@dataclass
class McSummary:
    """Averages over the replicates of one scenario."""

    fault: FaultSpec
    reports: list = field(repr=False)
    failures: list = field(default_factory=list)

    @property
    def n_runs(self) -> int:
        return len(self.reports)

    @property
    def chi2_global(self) -> np.ndarray:
        return np.array([r.chi2_global for r in self.reports])

    @property
    def chi2_minmax(self) -> np.ndarray:
        return np.array([r.chi2_minmax for r in self.reports])

    @property
    def mean_global(self) -> float:
        return float(np.mean(self.chi2_global))

    @property
    def mean_minmax(self) -> np.ndarray:
        return self.chi2_minmax.mean(axis=0)

    @property
    def detection_rate(self) -> float:
        return float(np.mean([r.detected for r in self.reports]))

    @property
    def isolation_rates(self) -> np.ndarray:
        return np.mean([r.isolated for r in self.reports], axis=0)

    @property
    def thresholds(self) -> tuple[float, float]:
        r = self.reports[0]
        return r.threshold_global, r.threshold_minmax

    def to_dict(self, include_runs: bool = True) -> dict:
        out = {
            "fault": self.fault.to_dict(),
            "fault_label": self.fault.label,
            "n_runs": self.n_runs,
            "mean_chi2_global": self.mean_global,
            "mean_chi2_minmax": dict(zip(PARAM_NAMES, map(float, self.mean_minmax))),
            "detection_rate": self.detection_rate,
            "isolation_rates": dict(zip(PARAM_NAMES, map(float, self.isolation_rates))),
            "thresholds": {"global": self.thresholds[0], "minmax": self.thresholds[1]},
            "failures": list(self.failures),
        }
        if include_runs:
            out["runs"] = [r.to_dict() for r in self.reports]
        return out

    def write(self, directory, stem: str | None = None) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or "summary_" + _slug(self.fault.label)
        js = directory / f"{stem}.json"
        js.write_text(json.dumps(self.to_dict(), indent=2, default=_to_builtin))
        txt = directory / f"{stem}.txt"
        txt.write_text(summary_table([self]) + "\n")
        return [js, txt]


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in text)


def _to_builtin(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def run_monte_carlo(cfg: ExperimentConfig, fault: FaultSpec, bench: Bench,
                    fail_fast: bool = True) -> McSummary:
    """``cfg.n_runs`` seeded replicates of one scenario, processed in batches."""
    plant = simulate_plant(bench, fault, cfg.N)
    reports, failures = [], []
    for start in range(0, cfg.n_runs, cfg.batch_size):
        idx = list(range(start, min(start + cfg.batch_size, cfg.n_runs)))
        try:
            reports.extend(run_batch(bench, cfg, fault, idx, plant))
        except (EhmError, np.linalg.LinAlgError) as exc:
            if fail_fast:
                raise
            # retry one replicate at a time so that only the offending runs are lost
            for i in idx:
                try:
                    reports.extend(run_batch(bench, cfg, fault, [i], plant))
                except (EhmError, np.linalg.LinAlgError) as exc_i:
                    failures.append({"run_index": i, "error": f"{type(exc_i).__name__}: {exc_i}"})
            log.warning("batch %d..%d had failures: %s", idx[0], idx[-1], exc)
        log.info("%s: %d/%d runs", fault.label, len(reports), cfg.n_runs)
    if not reports:
        raise RuntimeError(f"every replicate of {fault.label} failed")
    return McSummary(fault, reports, failures)


def summary_table(summaries) -> str:
    """Plain-text table with one column per scenario: global test then minmax rows."""
    cols = [s.fault.label for s in summaries]
    width = max(12, *(len(c) + 2 for c in cols))
    thr_g, thr_a = summaries[0].thresholds
    lines = [f"{'test':<14}" + "".join(f"{c:>{width}}" for c in cols)]
    lines.append("-" * len(lines[0]))
    lines.append(f"{'chi2 global':<14}" + "".join(f"{s.mean_global:>{width}.3f}" for s in summaries))
    for j, name in enumerate(PARAM_NAMES):
        lines.append(f"{'minmax ' + name:<14}"
                     + "".join(f"{s.mean_minmax[j]:>{width}.3f}" for s in summaries))
    lines.append(f"{'FD rate':<14}" + "".join(f"{s.detection_rate:>{width}.2f}" for s in summaries))
    lines.append(f"thresholds: global {thr_g:.2f}, minmax {thr_a:.2f}; "
                 f"runs per scenario: {', '.join(str(s.n_runs) for s in summaries)}")
    return "\n".join(lines)


# --------------------------------------------------------------------------- physics checks

def constant_discharge(bench: Bench, fault: FaultSpec, c_rate: float = 0.5,
                       v_cut: float | None = None, soc_floor: float = 0.02):
    """Full-charge constant-current discharge of the plant.

    Returns ``(capacity_ah, voltage)``.  The discharge stops at ``v_cut`` or
    when the negative-electrode surface concentration reaches ``soc_floor``;
    the final sample is interpolated to the exact crossing.
    """
    theta, params, sr = fault.plant(bench.theta0, bench.params)
    I = c_rate * bench.capacity_ah
    n_max = int(math.ceil(1.2 * 3600.0 / (c_rate * params.T_s)))
    from .ehm import EhmSimulator   # local import keeps the module graph flat
    sim = EhmSimulator(theta, params, bench.ocp_pos, bench.ocp_neg, bench.x0, side_reaction=sr)
    volts = []
    for k in range(n_max):
        x = sim.x.copy()
        try:
            v = sim.step(I)
        except EhmError:
            break
        volts.append(v)
        if (v_cut is not None and v < v_cut) or sim.x[1] < soc_floor:
            if v_cut is not None and v < v_cut and len(volts) > 1:
                frac = (volts[-2] - v_cut) / (volts[-2] - v)
                return I * params.T_s * (k + frac) / 3600.0, np.array(volts)
            if sim.x[1] < soc_floor:
                frac = (x[1] - soc_floor) / (x[1] - sim.x[1])
                return I * params.T_s * (k + frac) / 3600.0, np.array(volts)
            break
    return I * params.T_s * len(volts) / 3600.0, np.array(volts)


def differential_resistance(bench: Bench, fault: FaultSpec, current: float,
                            rel_step: float = 1e-3) -> float:
    """-dV/dI of the plant at the initial state and the given load current [ohm]."""
    from .ehm import EhmSimulator
    theta, params, sr = fault.plant(bench.theta0, bench.params)
    h = rel_step * abs(current) if current else rel_step
    v = []
    for i in (current + h, current - h):
        sim = EhmSimulator(theta, params, bench.ocp_pos, bench.ocp_neg, bench.x0,
                           side_reaction=sr)
        v.append(sim.step(i))
    return -(v[0] - v[1]) / (2.0 * h)


def fault_physics(bench: Bench, fault: FaultSpec, c_rate: float = 0.5,
                  v_cut: float | None = None) -> dict:
    """Capacity fade and ohmic-drop change of a fault at a constant discharge rate.

    The ohmic drop is the differential resistance at the start of the
    discharge times the discharge current, so its change is the resistance
    increase expressed as a voltage, relative to the healthy terminal voltage.
    """
    cap_h, v_h = constant_discharge(bench, FaultSpec.none(), c_rate, v_cut)
    cap_f, v_f = constant_discharge(bench, fault, c_rate, v_cut)
    current = c_rate * bench.capacity_ah
    drop_h = current * differential_resistance(bench, FaultSpec.none(), current)
    drop_f = current * differential_resistance(bench, fault, current)
    return {
        "capacity_healthy_ah": cap_h,
        "capacity_faulty_ah": cap_f,
        "capacity_fade_pct": 100.0 * (cap_h - cap_f) / cap_h,
        "ohmic_drop_healthy_v": drop_h,
        "ohmic_drop_change_pct": 100.0 * abs(drop_f - drop_h) / abs(v_h[0]),
    }
