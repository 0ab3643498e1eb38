"""Equivalent-hydraulic model (EHM) of a lithium-ion cell.

Discrete-time, two-state reduced-order model of the negative electrode,
``x = [soc, c_ss_bar]``, with the positive electrode collapsed onto the
negative one through the lithium balance.  Four aging-related parameters are
monitored::

    theta = [eps_s_neg, R_f, g_s, n_Li]

Conventions
-----------
* ``u`` is the applied current per unit cross-sectional area [A m^-2];
  positive ``u`` discharges the cell (negative-electrode SOC decreases).
  With the default ``A = 1 m^2`` it coincides with the terminal current in A.
* Time indexing follows ``x(k+1) = f(x(k), u(k))`` and ``y(k) = h(x(k), u(k))``.
* The film term of the output enters as ``+ (theta_2/theta_1) * d_1 * u``.

All functions broadcast over leading dimensions of the state array
(``x[..., 0]`` is the SOC, ``x[..., 1]`` the surface concentration), which is
what the sigma-point filter relies on.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import ConfigError, ConvergenceError, DomainError
from .ocp import OcpCurve

PARAM_NAMES = ("eps_s_neg", "R_f", "g_s", "n_Li")
STOICH_GUARD = 1e-6


@dataclass(frozen=True)
class CellParameters:
    """Electrochemical constants of one cell (SI units)."""

    A: float
    c_s_max_pos: float
    c_s_max_neg: float
    c_e: float
    F: float
    j_sr0: float
    k_n_pos: float
    k_n_neg: float
    L_pos: float
    L_neg: float
    R_pos: float
    R_neg: float
    R_g: float
    T_ref: float
    alpha0: float
    beta: float
    eps_s_pos: float
    U_sr: float
    T_s: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "U_sr":
                if not np.isfinite(v):
                    raise ConfigError("U_sr must be finite")
                continue
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"cell parameter {f.name} must be strictly positive, got {v}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0.0 < self.eps_s_pos <= 1.0:
            raise ConfigError(f"eps_s_pos must lie in (0, 1], got {self.eps_s_pos}")

    @property
    def a1(self) -> float:
        return 1.0 / (self.beta * (1.0 - self.beta))

    @property
    def b1(self) -> float:
        return 1.0 / (self.c_s_max_neg * self.F * self.L_neg)

    @property
    def b2(self) -> float:
        return self.b1 / (1.0 - self.beta)

    @property
    def d1(self) -> float:
        return self.R_neg / (3.0 * self.L_neg)

    @property
    def rho(self) -> float:
        return -self.c_s_max_neg * self.L_neg / (self.c_s_max_pos * self.L_pos * self.eps_s_pos)

    @property
    def sigma(self) -> float:
        return 1.0 / (self.c_s_max_pos * self.L_pos * self.eps_s_pos * self.A)

    @property
    def thermal_voltage(self) -> float:
        """``R_g T_ref / (alpha0 F)`` [V]."""
        return self.R_g * self.T_ref / (self.alpha0 * self.F)

    def with_updates(self, **changes) -> "CellParameters":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ThetaVector:
    """The four monitored parameters."""

    eps_s_neg: float
    R_f: float
    g_s: float
    n_Li: float

    def __post_init__(self):
        arr = self.as_array()
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ConfigError(f"theta components must be strictly positive, got {arr}")
        if self.eps_s_neg > 1.0:
            raise ConfigError(f"eps_s_neg must not exceed 1, got {self.eps_s_neg}")

    def as_array(self) -> np.ndarray:
        return np.array([self.eps_s_neg, self.R_f, self.g_s, self.n_Li], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ThetaVector":
        v = np.asarray(values, dtype=float).reshape(4)
        return cls(*map(float, v))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SideReactionState:
    """Cumulative capacity loss [Ah] and the latest side-reaction current [A m^-2]."""

    q_loss: float = 0.0
    d: float = 0.0


def _theta(theta) -> np.ndarray:
    if isinstance(theta, ThetaVector):
        return theta.as_array()
    th = np.asarray(theta, dtype=float)
    if th.shape != (4,):
        raise ValueError(f"theta must have 4 components, got shape {th.shape}")
    return th


def nominal_capacity_ah(theta, params: CellParameters) -> float:
    """Charge between negative-electrode SOC 0 and 1 [Ah]."""
    th = _theta(theta)
    return th[0] * params.c_s_max_neg * params.L_neg * params.A * params.F / 3600.0


# --------------------------------------------------------------------------- state

def state_matrices(theta, params: CellParameters) -> tuple[np.ndarray, np.ndarray]:
    """State-transition matrix ``A`` (2x2) and input vector ``B`` (2,).

    Rows of ``A`` sum to one; ``B`` is negative so that a positive
    (discharge) current lowers both states.
    """
    th = _theta(theta)
    if th[0] == 0:
        raise DomainError("eps_s_neg must be non-zero")
    c = params.T_s * th[2] * params.a1
    A = np.array([[1.0, 0.0], [c, 1.0 - c]])
    B = -(params.T_s / th[0]) * np.array([params.b1, params.b2])
    return A, B


def step_healthy(state, u, theta, params: CellParameters) -> np.ndarray:
    """One step of the linear state equation, ``A x + B u``."""
    A, B = state_matrices(theta, params)
    x = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    return x @ A.T + u[..., None] * B


def positive_stoichiometry(soc_neg, theta, params: CellParameters, n_li=None):
    """Positive-electrode stoichiometry from the lithium balance.

    ``n_li`` overrides ``theta[3]``; it is used for the depleted inventory
    under a side reaction.
    """
    th = _theta(theta)
    n = th[3] if n_li is None else n_li
    x_pos = th[0] * params.rho * np.asarray(soc_neg, dtype=float) + n * params.sigma
    if not np.all((x_pos > 0.0) & (x_pos < 1.0)):
        raise DomainError(
            "lithium balance gives positive stoichiometry outside (0, 1): "
            f"{np.min(x_pos):.6g}..{np.max(x_pos):.6g}"
        )
    return x_pos


def exchange_current_density(x, electrode: str, params: CellParameters):
    x = np.asarray(x, dtype=float)
    if not np.all((x >= STOICH_GUARD) & (x <= 1.0 - STOICH_GUARD)):
        raise DomainError(
            f"{electrode} stoichiometry outside [{STOICH_GUARD}, {1 - STOICH_GUARD}]: "
            f"{np.min(x):.6g}..{np.max(x):.6g}"
        )
    if electrode == "pos":
        k, cmax = params.k_n_pos, params.c_s_max_pos
    elif electrode == "neg":
        k, cmax = params.k_n_neg, params.c_s_max_neg
    else:
        raise ValueError(f"electrode must be 'pos' or 'neg', got {electrode!r}")
    return k * cmax * np.sqrt(params.c_e) * np.sqrt(x * (1.0 - x))


def _overpotential_argument(x, u, electrode, eps, params):
    j0 = exchange_current_density(x, electrode, params)
    if electrode == "pos":
        sign, R, L = -1.0, params.R_pos, params.L_pos
    else:
        sign, R, L = 1.0, params.R_neg, params.L_neg
    return sign * R * np.asarray(u, dtype=float) / (6.0 * eps * L * j0)


def surface_overpotential(x_stoich, u, electrode: str, theta, params: CellParameters):
    """Butler-Volmer surface overpotential [V] (symmetric, inverted with asinh)."""
    th = _theta(theta)
    eps = params.eps_s_pos if electrode == "pos" else th[0]
    q = _overpotential_argument(x_stoich, u, electrode, eps, params)
    return params.thermal_voltage * np.arcsinh(q)


# --------------------------------------------------------------------------- output

def output_voltage(state, u, theta, params: CellParameters,
                   ocp_pos: OcpCurve, ocp_neg: OcpCurve, n_li=None):
    """Terminal voltage of the healthy cell."""
    th = _theta(theta)
    x = np.asarray(state, dtype=float)
    soc, css = x[..., 0], x[..., 1]
    x_pos = positive_stoichiometry(soc, th, params, n_li)
    return (surface_overpotential(x_pos, u, "pos", th, params)
            - surface_overpotential(css, u, "neg", th, params)
            + ocp_pos.evaluate(x_pos) - ocp_neg.evaluate(css)
            + (th[1] / th[0]) * params.d1 * np.asarray(u, dtype=float))


def output_voltage_faulty(state, u, z, theta, params: CellParameters,
                          ocp_pos: OcpCurve, ocp_neg: OcpCurve, n_li=None):
    """Terminal voltage under a side reaction.

    The positive electrode and the film carry the total current ``z``; the
    negative-electrode kinetics only see the intercalation current ``u``.
    """
    th = _theta(theta)
    x = np.asarray(state, dtype=float)
    soc, css = x[..., 0], x[..., 1]
    x_pos = positive_stoichiometry(soc, th, params, n_li)
    return (surface_overpotential(x_pos, z, "pos", th, params)
            - surface_overpotential(css, u, "neg", th, params)
            + ocp_pos.evaluate(x_pos) - ocp_neg.evaluate(css)
            + (th[1] / th[0]) * params.d1 * np.asarray(z, dtype=float))


# --------------------------------------------------------------------------- side reaction

def side_reaction_residual(css, u, d, theta, params: CellParameters, ocp_neg: OcpCurve):
    """Kirchhoff condition ``g = U- + eta-(u) - U_sr - eta_sr(d)`` [V]."""
    arg = -params.R_neg * d / (3.0 * params.L_neg * params.j_sr0)
    if np.any(arg <= 0):
        raise DomainError("side-reaction current must be strictly negative")
    eta_sr = -params.thermal_voltage * np.log(arg)
    return (ocp_neg.evaluate(css) + surface_overpotential(css, u, "neg", theta, params)
            - params.U_sr - eta_sr)


def solve_side_reaction(state, z: float, theta, params: CellParameters, ocp_neg: OcpCurve,
                        tol: float = 1e-10, max_iter: int = 100) -> tuple[float, float]:
    """Split the total current ``z`` into intercalation ``u`` and side current ``d < 0``.

    Substituting ``u = z - d`` and ``d = -exp(s)`` turns the Kirchhoff
    condition into a scalar equation in ``s`` that is strictly increasing, so
    a safeguarded Newton iteration on a bracket always converges.
    """
    th = _theta(theta)
    css = float(np.asarray(state, dtype=float)[1])
    vt = params.thermal_voltage
    u_ocp = float(ocp_neg.evaluate(css))
    j0 = float(exchange_current_density(css, "neg", params))
    kappa = params.R_neg / (6.0 * th[0] * params.L_neg * j0)
    log_c = np.log(params.R_neg / (3.0 * params.L_neg * params.j_sr0))
    base = u_ocp - params.U_sr + vt * log_c

    def g(s):
        q = kappa * (z + np.exp(s))
        return base + vt * np.arcsinh(q) + vt * s

    def dg(s):
        e = np.exp(s)
        q = kappa * (z + e)
        return vt * kappa * e / np.sqrt(1.0 + q * q) + vt

    # Bracket: g is increasing in s; expand until the sign changes.
    scale = max(abs(z), 1.0)
    lo, hi = np.log(1e-300), np.log(10.0 * scale)
    g_lo, g_hi = g(lo), g(hi)
    n_expand = 0
    while g_hi < 0:
        hi += 10.0
        g_hi = g(hi)
        n_expand += 1
        if n_expand > 60 or not np.isfinite(g_hi):
            raise DomainError("cannot bracket the side-reaction current")
    if g_lo > 0:
        raise DomainError("side-reaction current below representable range")

    # Tafel-regime initial guess, clipped into the bracket.
    s = np.clip(-(base + vt * np.arcsinh(kappa * z)) / vt, lo, hi)
    for _ in range(max_iter):
        val = g(s)
        if abs(val) <= tol:
            d = -np.exp(s)
            return z - d, d
        if val > 0:
            hi = s
        else:
            lo = s
        step = s - val / dg(s)
        s = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo < 1e-15 * max(1.0, abs(s)):
            break
    val = g(s)
    if abs(val) <= tol:
        d = -np.exp(s)
        return z - d, d
    raise ConvergenceError(f"side-reaction solve did not converge (|g| = {abs(val):.3e} V)")


def step_capacity_loss(sr: SideReactionState, d: float, params: CellParameters) -> SideReactionState:
    """Accumulate the capacity consumed by one sample of side current."""
    if d > 0:
        raise DomainError("side-reaction current must be non-positive")
    return SideReactionState(q_loss=sr.q_loss - params.A * params.T_s * d / 3600.0, d=d)


def lithium_inventory(theta, sr: SideReactionState, params: CellParameters) -> float:
    """Remaining cyclable lithium ``n_Li - 3600 q_loss / F`` [mol]."""
    return float(_theta(theta)[3] - 3600.0 * sr.q_loss / params.F)


# --------------------------------------------------------------------------- simulation

@dataclass
class Trajectory:
    """Simulated record of ``N`` samples; ``x`` carries one extra final state."""

    x: np.ndarray          # (N+1, 2)
    y: np.ndarray          # (N,)
    z: np.ndarray          # (N,) terminal current
    u: np.ndarray          # (N,) intercalation current
    d: np.ndarray          # (N,) side-reaction current
    q_loss: np.ndarray     # (N,) capacity lost before each sample [Ah]
    n_li: np.ndarray       # (N,) lithium inventory used in each output [mol]


def simulate(theta, params: CellParameters, ocp_pos: OcpCurve, ocp_neg: OcpCurve,
             current, x0, side_reaction: bool = False) -> Trajectory:
    """Open-loop simulation over a current record.

    With a side reaction each sample first splits the terminal current at the
    present state, then the output is evaluated with the inventory depleted
    by all earlier samples.
    """
    th = _theta(theta)
    z = np.asarray(current, dtype=float).ravel()
    n = z.size
    x = np.empty((n + 1, 2))
    x[0] = np.asarray(x0, dtype=float)
    A, B = state_matrices(th, params)
    if not side_reaction:
        for k in range(n):
            x[k + 1] = A @ x[k] + B * z[k]
        y = output_voltage(x[:-1], z, th, params, ocp_pos, ocp_neg)
        zeros = np.zeros(n)
        return Trajectory(x, y, z.copy(), z.copy(), zeros, zeros.copy(), np.full(n, th[3]))

    u = np.empty(n)
    d = np.empty(n)
    q = np.empty(n)
    n_li = np.empty(n)
    y = np.empty(n)
    sr = SideReactionState()
    for k in range(n):
        q[k] = sr.q_loss
        n_li[k] = lithium_inventory(th, sr, params)
        u[k], d[k] = solve_side_reaction(x[k], z[k], th, params, ocp_neg)
        y[k] = output_voltage_faulty(x[k], u[k], z[k], th, params, ocp_pos, ocp_neg,
                                     n_li=n_li[k])
        sr = step_capacity_loss(sr, d[k], params)
        x[k + 1] = A @ x[k] + B * u[k]
    return Trajectory(x, y, z.copy(), u, d, q, n_li)


class EhmSimulator:
    """Stateful single-owner stepper around the model functions.

    Use one instance per thread of execution; the parameter objects it holds
    are immutable and may be shared.
    """

    def __init__(self, theta, params: CellParameters, ocp_pos: OcpCurve, ocp_neg: OcpCurve,
                 x0, side_reaction: bool = False):
        self.theta = _theta(theta)
        self.params = params
        self.ocp_pos = ocp_pos
        self.ocp_neg = ocp_neg
        self.x = np.asarray(x0, dtype=float).copy()
        self.side_reaction = side_reaction
        self.sr = SideReactionState()
        self._A, self._B = state_matrices(self.theta, params)

    @property
    def n_li(self) -> float:
        return lithium_inventory(self.theta, self.sr, self.params)

    def step(self, z: float) -> float:
        """Return the voltage at the present sample under current ``z``, then advance."""
        if self.side_reaction:
            u, d = solve_side_reaction(self.x, z, self.theta, self.params, self.ocp_neg)
            y = output_voltage_faulty(self.x, u, z, self.theta, self.params,
                                      self.ocp_pos, self.ocp_neg, n_li=self.n_li)
            self.sr = step_capacity_loss(self.sr, d, self.params)
        else:
            u = z
            y = output_voltage(self.x, z, self.theta, self.params, self.ocp_pos, self.ocp_neg)
        self.x = self._A @ self.x + self._B * u
        return float(y)


def check_orientation(theta, params: CellParameters, ocp_pos: OcpCurve, ocp_neg: OcpCurve,
                      x0=(0.6, 0.6)) -> None:
    """One-step sanity simulation of the sign convention.

    A positive current must lower the negative-electrode SOC and the
    open-circuit voltage; otherwise the OCP curves are oriented against the
    current convention and a :class:`ConfigError` is raised.
    """
    th = _theta(theta)
    x0 = np.asarray(x0, dtype=float)
    cap = nominal_capacity_ah(th, params)
    u = 0.01 * cap * 3600.0 / (params.A * params.T_s)   # 1 % of capacity in one sample
    x1 = step_healthy(x0, u, th, params)
    if not x1[0] < x0[0]:
        raise ConfigError("positive current does not discharge the negative electrode")
    ocv0 = output_voltage(x0, 0.0, th, params, ocp_pos, ocp_neg)
    ocv1 = output_voltage(x1, 0.0, th, params, ocp_pos, ocp_neg)
    if not ocv1 < ocv0:
        raise ConfigError(
            "open-circuit voltage rises under discharge; check the OCP curve orientation "
            "(both electrode potentials should decrease with lithiation)"
        )
