"""Parameter sensitivities of the EHM and identifiability diagnostics.

First-order sensitivities follow the discrete sensitivity system

    s_x(k+1) = A(theta) s_x(k) + df/dtheta(x(k), u(k))
    s_y(k)   = dh/dx(x(k), u(k)) s_x(k) + dh/dtheta(x(k), u(k))

with all Jacobians in closed form.  Second-order output sensitivities are
central differences of the first-order system.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .ehm import PARAM_NAMES, CellParameters, _theta, positive_stoichiometry, state_matrices
from .ehm import exchange_current_density as _j0
from .errors import DegenerateColumnError
from .ocp import OcpCurve


@dataclass
class SensitivityBundle:
    """Sensitivities along one trajectory of ``N`` samples."""

    s_x: np.ndarray            # (N+1, 2, 4)
    s_y: np.ndarray            # (N, 4)
    s_yy: np.ndarray | None = None   # (N, 4, 4)


def _eta_partials(x, q, vt):
    """d(eta)/dx for ``eta = vt*asinh(q)`` with ``q`` proportional to 1/sqrt(x(1-x))."""
    return vt / np.sqrt(1.0 + q * q) * (-q * (1.0 - 2.0 * x) / (2.0 * x * (1.0 - x)))


def output_jacobians(state, u, theta, params: CellParameters,
                     ocp_pos: OcpCurve, ocp_neg: OcpCurve):
    """Closed-form ``dh/dx`` (..., 2) and ``dh/dtheta`` (..., 4) of the healthy output."""
    th = _theta(theta)
    x = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    soc, css = x[..., 0], x[..., 1]
    vt = params.thermal_voltage

    xp = positive_stoichiometry(soc, th, params)
    qp = -params.R_pos * u / (6.0 * params.eps_s_pos * params.L_pos * _j0(xp, "pos", params))
    gp = _eta_partials(xp, qp, vt) + ocp_pos.derivative(xp)

    qn = params.R_neg * u / (6.0 * th[0] * params.L_neg * _j0(css, "neg", params))
    gn = _eta_partials(css, qn, vt) + ocp_neg.derivative(css)
    deta_n_deps = vt / np.sqrt(1.0 + qn * qn) * (-qn / th[0])

    dhdx = np.stack(np.broadcast_arrays(gp * th[0] * params.rho, -gn), axis=-1)
    d1 = params.d1
    dhdth = np.stack(np.broadcast_arrays(
        gp * params.rho * soc - deta_n_deps - th[1] * d1 * u / th[0] ** 2,
        d1 * u / th[0],
        np.zeros_like(gp),
        gp * params.sigma,
    ), axis=-1)
    return dhdx, dhdth


def state_parameter_jacobian(state, u, theta, params: CellParameters) -> np.ndarray:
    """``df/dtheta`` (..., 2, 4) of the linear state equation."""
    th = _theta(theta)
    x = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], u.shape)
    out = np.zeros(shape + (2, 4))
    scale = params.T_s / th[0] ** 2
    out[..., 0, 0] = scale * params.b1 * u
    out[..., 1, 0] = scale * params.b2 * u
    out[..., 1, 2] = params.T_s * params.a1 * (x[..., 0] - x[..., 1])
    return out


def propagate_sensitivity(state, s_x, u, theta, params: CellParameters,
                          ocp_pos: OcpCurve, ocp_neg: OcpCurve):
    """One step of the sensitivity system: returns ``(s_x(k+1), s_y(k))``."""
    A, _ = state_matrices(theta, params)
    s_x = np.asarray(s_x, dtype=float)
    dhdx, dhdth = output_jacobians(state, u, theta, params, ocp_pos, ocp_neg)
    s_y = np.einsum("...i,...ij->...j", dhdx, s_x) + dhdth
    s_next = np.einsum("ij,...jk->...ik", A, s_x) + state_parameter_jacobian(state, u, theta, params)
    return s_next, s_y


def sensitivity_trajectory(theta, params: CellParameters, ocp_pos: OcpCurve, ocp_neg: OcpCurve,
                           u, x_f, x_h=None) -> SensitivityBundle:
    """First-order sensitivities along a given state path.

    ``x_f[..., k, :]`` is the state at which ``df/dtheta`` is evaluated for the
    transition ``k -> k+1`` and ``x_h[..., k, :]`` the state for the output
    Jacobians at sample ``k`` (defaults to ``x_f``).  For an open-loop
    simulation both are ``traj.x[:-1]``; along a filter they are the
    posterior and prior estimates.  Leading batch axes are supported and the
    initial state sensitivity is zero.
    """
    th = _theta(theta)
    u = np.asarray(u, dtype=float)
    x_f = np.asarray(x_f, dtype=float)
    x_h = x_f if x_h is None else np.asarray(x_h, dtype=float)

    g = state_parameter_jacobian(x_f, u, th, params)          # (..., N, 2, 4)
    c = params.T_s * th[2] * params.a1
    n = g.shape[-3]
    s_x = np.zeros(g.shape[:-3] + (n + 1, 2, 4))
    s_x[..., 1:, 0, :] = np.cumsum(g[..., 0, :], axis=-2)
    # s2(k+1) = (1-c) s2(k) + c s1(k) + g2(k)
    drive = c * s_x[..., :-1, 0, :] + g[..., 1, :]
    s_x[..., 1:, 1, :] = lfilter([1.0], [1.0, -(1.0 - c)], drive, axis=-2)

    dhdx, dhdth = output_jacobians(x_h, u, th, params, ocp_pos, ocp_neg)
    s_y = np.einsum("...i,...ij->...j", dhdx, s_x[..., :-1, :, :]) + dhdth
    return SensitivityBundle(s_x=s_x, s_y=s_y)


def central_difference_jacobian(grad_fn, theta, rel_step: float = 1e-5):
    """Central differences of a vector-valued ``grad_fn(theta) -> (..., 4)``.

    Returns ``(..., 4, 4)`` with ``out[..., i, j] = d grad_i / d theta_j``;
    the step for component ``j`` is ``rel_step * |theta_j|``.
    """
    th = _theta(theta)
    cols = []
    for j in range(th.size):
        h = rel_step * max(abs(th[j]), np.finfo(float).tiny)
        tp, tm = th.copy(), th.copy()
        tp[j] += h
        tm[j] -= h
        cols.append((np.asarray(grad_fn(tp, j, h)) - np.asarray(grad_fn(tm, j, -h))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def second_order_sensitivity(theta, params: CellParameters, ocp_pos: OcpCurve, ocp_neg: OcpCurve,
                             u, x_f, x_h=None, s_x=None, rel_step: float = 1e-5,
                             return_asymmetry: bool = False):
    """Second-order output sensitivities ``d2y/dtheta2`` per sample, (..., N, 4, 4).

    The first-order system is re-run at ``theta +/- h_j e_j`` with the state
    path shifted to first order by ``+/- h_j s_x[:, :, j]`` so the state's own
    parameter dependence is carried into the difference.  The result is
    symmetrized; with ``return_asymmetry`` the relative Frobenius asymmetry of
    the raw difference quotient is returned as well.
    """
    th = _theta(theta)
    x_f = np.asarray(x_f, dtype=float)
    x_h = x_f if x_h is None else np.asarray(x_h, dtype=float)
    if s_x is None:
        s_x = sensitivity_trajectory(th, params, ocp_pos, ocp_neg, u, x_f, x_h).s_x
    s_path = s_x[..., :-1, :, :]

    def grad(t, j, h):
        shift = h * s_path[..., j]
        return sensitivity_trajectory(t, params, ocp_pos, ocp_neg, u,
                                      x_f + shift, x_h + shift).s_y

    raw = central_difference_jacobian(grad, th, rel_step)
    sym = 0.5 * (raw + np.swapaxes(raw, -1, -2))
    if return_asymmetry:
        asym = np.linalg.norm(raw - np.swapaxes(raw, -1, -2)) / max(np.linalg.norm(raw), 1e-300)
        return sym, float(asym)
    return sym


@dataclass
class IdentifiabilityReport:
    """Column-norm / correlation decomposition ``S^T S = D^T C D``."""

    S_y: np.ndarray        # (N, 4) sensitivity columns used for D and C
    D: np.ndarray          # (4, 4) diagonal
    C: np.ndarray          # (4, 4)
    names: tuple[str, ...] = PARAM_NAMES

    @property
    def norms(self) -> np.ndarray:
        return np.diag(self.D).copy()

    def ranking(self) -> list[str]:
        """Parameter names sorted from most to least sensitive."""
        return [self.names[i] for i in np.argsort(-self.norms, kind="stable")]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "D": self.norms.tolist(), "C": self.C.tolist()}

    def write(self, directory, traces: bool = True) -> list[Path]:
        """Write ``D.csv``, ``C.csv`` and (optionally) ``sensitivity_traces.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        path = directory / "D.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "norm"])
            for name, v in zip(self.names, self.norms):
                w.writerow([name, repr(float(v))])
        written.append(path)
        path = directory / "C.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["", *self.names])
            for name, row in zip(self.names, self.C):
                w.writerow([name, *(repr(float(v)) for v in row)])
        written.append(path)
        if traces:
            path = directory / "sensitivity_traces.csv"
            np.savetxt(path, np.column_stack([np.arange(len(self.S_y)), self.S_y]),
                       delimiter=",", header="k," + ",".join(self.names), comments="")
            written.append(path)
        return written


def identifiability_report(S_y, theta=None, names=PARAM_NAMES) -> IdentifiabilityReport:
    """Build ``D`` and ``C`` from stacked output sensitivities ``S_y`` (N x n).

    When ``theta`` is given each raw column is scaled by its parameter value,
    i.e. the relative sensitivities ``theta_j dy/dtheta_j`` are analysed.
    """
    S = np.asarray(S_y, dtype=float)
    if S.ndim != 2 or S.shape[0] < S.shape[1]:
        raise ValueError(f"S_y must be N x n with N >= n, got shape {S.shape}")
    if theta is not None:
        S = S * np.asarray(theta, dtype=float)[None, :]
    norms = np.linalg.norm(S, axis=0)
    if np.any(norms == 0):
        bad = [names[i] for i in np.flatnonzero(norms == 0)]
        raise DegenerateColumnError(f"zero sensitivity column(s): {', '.join(bad)}")
    C = (S.T @ S) / np.outer(norms, norms)
    np.fill_diagonal(C, 1.0)
    return IdentifiabilityReport(S_y=S, D=np.diag(norms), C=C, names=tuple(names))
