"""Drive-cycle current profiles.

Positive current discharges the cell.  A record is built from one discharge
profile that is alternately played forward (discharge) and sign-inverted
(charge) until the requested number of samples is reached.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass
class DriveCycle:
    """Uniformly sampled current record, ``time`` in s and ``current`` in A."""

    time: np.ndarray
    current: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.current = np.asarray(self.current, dtype=float)
        if self.time.shape != self.current.shape or self.time.ndim != 1:
            raise ValueError("time and current must be 1-D arrays of equal length")
        if self.time.size > 1 and not np.all(np.diff(self.time) > 0):
            raise ValueError("time stamps must be strictly increasing")

    def __len__(self) -> int:
        return self.current.size

    def truncate(self, n: int) -> "DriveCycle":
        if n > len(self):
            raise ValueError(f"cycle has {len(self)} samples, {n} requested")
        return DriveCycle(self.time[:n], self.current[:n], dict(self.metadata))

    def write_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.time, self.current]), delimiter=",",
                   header="time_s,current_a", comments="", fmt="%.10g")


def read_current_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``time_s,current_a`` CSV; a header line is optional."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"drive cycle file not found: {path}")
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                t, i = float(parts[0]), float(parts[1])
            except (ValueError, IndexError):
                if not rows and lineno == 1:
                    continue          # header
                raise ConfigError(f"{path}:{lineno}: cannot parse {line!r}") from None
            rows.append((t, i))
    if not rows:
        raise ConfigError(f"{path}: no samples")
    data = np.array(rows)
    return data[:, 0], data[:, 1]


def _alternate(profile: np.ndarray, n_samples: int) -> np.ndarray:
    reps = int(np.ceil(n_samples / profile.size))
    halves = [profile if r % 2 == 0 else -profile for r in range(reps)]
    return np.concatenate(halves)[:n_samples]


def load_drive_cycle(path, max_c_rate: float, capacity_ah: float, T_s: float = 1.0,
                     n_samples: int | None = None, label: str | None = None) -> DriveCycle:
    """Load, resample and scale a measured current profile.

    The profile is linearly interpolated onto a ``T_s`` grid and scaled so its
    peak magnitude is ``max_c_rate * capacity_ah``.  When ``n_samples`` is
    given it is played as discharge, then inverted as charge, alternately,
    until that many samples exist.
    """
    t, i = read_current_csv(path)
    if t.size < 2:
        raise ConfigError(f"{path}: at least two samples are required")
    if not np.all(np.diff(t) > 0):
        raise ConfigError(f"{path}: time stamps must be strictly increasing")
    grid = np.arange(t[0], t[-1] + 0.5 * T_s, T_s)
    grid = grid[grid <= t[-1] + 1e-9 * max(1.0, abs(t[-1]))]
    current = np.interp(grid, t, i)
    peak = np.max(np.abs(current))
    if peak == 0:
        raise ConfigError(f"{path}: zero-amplitude current profile")
    current = current * (max_c_rate * capacity_ah / peak)
    meta = {
        "label": label or Path(path).stem,
        "source": str(path),
        "max_c_rate": max_c_rate,
        "mean_c_rate": float(np.mean(current) / capacity_ah),
        "capacity_ah": capacity_ah,
        "half_cycle_samples": int(current.size),
    }
    if n_samples is not None:
        current = _alternate(current, n_samples)
    time = np.arange(current.size) * T_s
    return DriveCycle(time, current, meta)


def _pulse_train(rng, n: int, regen_fraction: float):
    """Segments of 2 to 40 samples: uniform draws in [0, 1) or negative regen levels."""
    levels, regen = [], []
    while len(levels) < n:
        length = int(rng.integers(2, 41))
        is_regen = rng.random() < regen_fraction
        draw = rng.uniform(0.05, 0.4) if is_regen else rng.uniform(0.0, 1.0)
        levels.extend([draw] * length)
        regen.extend([is_regen] * length)
    return np.asarray(levels[:n]), np.asarray(regen[:n])


def synthetic_drive_cycle(capacity_ah: float, n_samples: int, *, T_s: float = 1.0,
                          max_c_rate: float = 10.0, mean_c_rate: float = 1.8,
                          soc_swing: float = 0.72, seed: int = 0,
                          regen_fraction: float = 0.15,
                          taper: tuple[float, float] = (0.0, 0.15)) -> DriveCycle:
    """Persistently exciting stand-in for a scaled urban drive cycle.

    A seeded pseudo-random pulse train (segments of 2 to 40 samples, some of
    them regenerative) rides on a slow ramp.  ``taper`` gives the fractions of
    the half cycle over which the ramp rises from zero at its start and falls
    back to zero at its end.  The default tapers only the end, so a charge
    half (the inverted profile) finishes gently at high SOC, where the
    surface concentration would otherwise overshoot.
    Traction levels are drawn as ``U**q``; the exponent ``q`` is solved by
    bisection so that, after scaling the peak to ``max_c_rate``, the mean is
    exactly ``mean_c_rate``.  The half-cycle length moves the SOC by
    ``soc_swing`` at that mean.
    """
    if not 0 < mean_c_rate < max_c_rate:
        raise ConfigError("need 0 < mean_c_rate < max_c_rate")
    t_in, t_out = taper
    if not (0.0 <= t_in < 0.5 and 0.0 <= t_out < 0.5):
        raise ConfigError("taper fractions must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    n_half = int(round(soc_swing * 3600.0 / (mean_c_rate * T_s)))
    draws, regen = _pulse_train(rng, n_half, regen_fraction)
    s = np.linspace(0.0, 1.0, n_half)
    ramp = np.ones(n_half)
    if t_in > 0:
        ramp = ramp * np.sin(0.5 * np.pi * np.clip(s / t_in, 0.0, 1.0)) ** 2
    if t_out > 0:
        ramp = ramp * np.sin(0.5 * np.pi * np.clip((1.0 - s) / t_out, 0.0, 1.0)) ** 2

    def shape(q):
        p = ramp * np.where(regen, -draws, draws ** q)
        return p / p.max()

    target = mean_c_rate / max_c_rate
    lo, hi = 1e-3, 1.0
    while shape(hi).mean() > target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e4:
            raise ConfigError("cannot reach the requested mean/peak ratio")
    if shape(lo).mean() < target:
        raise ConfigError("cannot reach the requested mean/peak ratio")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if shape(mid).mean() > target:
            lo = mid
        else:
            hi = mid
    pattern = shape(0.5 * (lo + hi))
    # remove the last bisection residual with a tiny affine correction
    pattern = pattern + (target - pattern.mean()) * ramp / ramp.mean()
    profile = capacity_ah * max_c_rate * pattern / pattern.max()
    current = _alternate(profile, n_samples)
    time = np.arange(n_samples) * T_s
    meta = {
        "label": "synthetic-prbs",
        "seed": seed,
        "max_c_rate": max_c_rate,
        "mean_c_rate": float(np.mean(profile) / capacity_ah),
        "capacity_ah": capacity_ah,
        "half_cycle_samples": n_half,
    }
    return DriveCycle(time, current, meta)
