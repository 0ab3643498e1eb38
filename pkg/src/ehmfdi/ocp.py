"""Open-circuit potential curves.

Electrode OCPs are empirical, so the model only depends on the small
:class:`OcpCurve` interface: a value and a first derivative on the open
stoichiometry interval (0, 1).  Two implementations are provided:

* :class:`AffineLogisticOcp` -- an analytic affine-plus-logistic shape whose
  values and slopes are cheap to compute by hand.  The shipped default cell
  uses two of these.
* :class:`TabulatedOcp` -- a cubic spline through user-supplied (x, U) points,
  for fitted curves of a real chemistry.
"""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import expit

from .errors import ConfigError, DomainError


class OcpCurve:
    """Open-circuit potential U(x) of one electrode, x the normalized stoichiometry."""

    identifier: str = "ocp"

    def evaluate(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.evaluate(x)


def _check_open_unit(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all((x > 0.0) & (x < 1.0)):
        raise DomainError(f"stoichiometry outside (0, 1): {np.min(x)!r}..{np.max(x)!r}")
    return x


@dataclass(frozen=True)
class AffineLogisticOcp(OcpCurve):
    """``U(x) = offset + slope*x + sum_i amp_i * expit(-(x - center_i)/width_i)``.

    Each logistic term is a smooth downward step of height ``amp_i`` located at
    ``center_i``; with positive amplitudes and a non-positive slope the curve is
    strictly decreasing, which is the orientation of both graphite and
    layered-oxide electrodes.
    """

    offset: float
    slope: float
    steps: tuple[tuple[float, float, float], ...] = ()
    identifier: str = "affine-logistic"

    def __post_init__(self):
        for amp, center, width in self.steps:
            if width <= 0.0:
                raise ConfigError(f"logistic width must be positive, got {width}")

    def evaluate(self, x):
        x = _check_open_unit(x)
        out = self.offset + self.slope * x
        for amp, center, width in self.steps:
            out = out + amp * expit(-(x - center) / width)
        return out

    def derivative(self, x):
        x = _check_open_unit(x)
        out = np.full_like(x, self.slope)
        for amp, center, width in self.steps:
            s = expit(-(x - center) / width)
            out = out - (amp / width) * s * (1.0 - s)
        return out


@dataclass(frozen=True, eq=False)
class TabulatedOcp(OcpCurve):
    """Natural cubic spline through tabulated (stoichiometry, potential) pairs.

    Evaluation is restricted to the tabulated range; extrapolating an
    empirical fit is refused with a :class:`DomainError`.
    """

    x: np.ndarray
    U: np.ndarray
    identifier: str = "tabulated"
    _spline: CubicSpline = field(init=False, repr=False)
    _dspline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        U = np.asarray(self.U, dtype=float)
        if x.ndim != 1 or x.shape != U.shape or x.size < 4:
            raise ConfigError("tabulated OCP needs matching 1-D x and U with at least 4 points")
        if not np.all(np.diff(x) > 0):
            raise ConfigError("tabulated OCP stoichiometries must be strictly increasing")
        if x[0] < 0.0 or x[-1] > 1.0 or not np.all(np.isfinite(U)):
            raise ConfigError("tabulated OCP must lie within [0, 1] and be finite")
        spline = CubicSpline(x, U, bc_type="natural")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "_spline", spline)
        object.__setattr__(self, "_dspline", spline.derivative())

    def _check(self, x):
        x = _check_open_unit(x)
        if np.any(x < self.x[0]) or np.any(x > self.x[-1]):
            raise DomainError(
                f"stoichiometry outside tabulated range [{self.x[0]}, {self.x[-1]}]"
            )
        return x

    def evaluate(self, x):
        return self._spline(self._check(x))

    def derivative(self, x):
        return self._dspline(self._check(x))


def ocp_from_config(cfg: Mapping) -> OcpCurve:
    """Build a curve from a config section.

    Recognised ``kind`` values are ``affine_logistic`` (keys ``offset``,
    ``slope``, ``steps`` as ``[amp, center, width]`` triples) and ``table``
    (keys ``x`` and ``U``, or ``path`` to a two-column CSV).
    """
    kind = cfg.get("kind")
    name = str(cfg.get("identifier", kind))
    if kind == "affine_logistic":
        try:
            steps = tuple(tuple(float(v) for v in s) for s in cfg.get("steps", ()))
            if any(len(s) != 3 for s in steps):
                raise ConfigError("each logistic step needs [amp, center, width]")
            return AffineLogisticOcp(float(cfg["offset"]), float(cfg["slope"]), steps, name)
        except KeyError as exc:
            raise ConfigError(f"affine_logistic OCP is missing key {exc}") from None
    if kind == "table":
        if "path" in cfg:
            data = np.loadtxt(cfg["path"], delimiter=",", ndmin=2, comments="#")
            return TabulatedOcp(data[:, 0], data[:, 1], name)
        if "x" not in cfg or "U" not in cfg:
            raise ConfigError("table OCP needs either 'path' or both 'x' and 'U'")
        return TabulatedOcp(np.asarray(cfg["x"], float), np.asarray(cfg["U"], float), name)
    raise ConfigError(f"unknown OCP kind {kind!r}; expected 'affine_logistic' or 'table'")


def ocp_to_config(curve: OcpCurve) -> dict:
    if isinstance(curve, AffineLogisticOcp):
        return {
            "kind": "affine_logistic",
            "identifier": curve.identifier,
            "offset": curve.offset,
            "slope": curve.slope,
            "steps": [list(s) for s in curve.steps],
        }
    if isinstance(curve, TabulatedOcp):
        return {"kind": "table", "identifier": curve.identifier,
                "x": curve.x.tolist(), "U": curve.U.tolist()}
    raise TypeError(f"cannot serialise {type(curve).__name__}")

