"""Augmented-state unscented Kalman filter.

The filter works on the stacked vector ``[x; w; v]`` (state, process noise,
measurement noise), so ``L = 2 n_x + n_y``.  Noise sigma components are added
after the state and output maps.  Every array operation carries a leading
batch axis, which lets many independent noise realizations run through one
Python loop.

Time indexing matches the model: a step consumes the current that drove the
previous transition (``u(k-1)``) for the time update and the present current
``u(k)`` for the output map.

Sigma points that cross the edge of the model's state domain are clamped
back inside before the output map (the count is kept in ``n_projected``);
an estimate that leaves the domain is a divergence.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ehm import STOICH_GUARD, CellParameters, _theta, output_voltage, step_healthy
from .errors import ConfigError, DivergenceError, NotPositiveDefiniteError
from .ocp import OcpCurve

COV_CLIP = -1e-10


@dataclass
class UkfConfig:
    """Tuning of the filter.  ``Q_x``, ``R_x`` and ``P_x0`` must be SPD."""

    Q_x: np.ndarray
    R_x: np.ndarray
    P_x0: np.ndarray
    x0_hat: np.ndarray
    alpha: float = 0.1
    beta_w: float = 2.0
    kappa: float | None = None      # None means 3 - L

    def __post_init__(self):
        self.Q_x = np.atleast_2d(np.asarray(self.Q_x, dtype=float))
        self.R_x = np.atleast_2d(np.asarray(self.R_x, dtype=float))
        self.P_x0 = np.atleast_2d(np.asarray(self.P_x0, dtype=float))
        self.x0_hat = np.asarray(self.x0_hat, dtype=float)
        n = self.x0_hat.shape[-1]
        if self.Q_x.shape != (n, n) or self.P_x0.shape != (n, n) or self.R_x.shape != (1, 1):
            raise ConfigError("covariance shapes do not match the state dimension")
        for name in ("Q_x", "R_x", "P_x0"):
            m = getattr(self, name)
            if not np.allclose(m, m.T, rtol=0, atol=1e-14 * max(1.0, np.abs(m).max())):
                raise ConfigError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(m).min() <= 0:
                raise ConfigError(f"{name} must be positive definite")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.kappa is None:
            self.kappa = 3.0 - self.L
        if self.L + self.lam <= 0:
            raise ConfigError(f"L + lambda = {self.L + self.lam:g} must be positive")

    @property
    def n_x(self) -> int:
        return self.x0_hat.shape[-1]

    @property
    def L(self) -> int:
        return 2 * self.n_x + 1

    @property
    def lam(self) -> float:
        return self.alpha ** 2 * (self.L + self.kappa) - self.L


def ukf_weights(config: UkfConfig):
    """Mean weights, covariance weights and the spread ``gamma``."""
    L, lam = config.L, config.lam
    if L + lam <= 0:
        raise ConfigError("L + lambda must be positive")
    w = 1.0 / (2.0 * (L + lam))
    W_m = np.full(2 * L + 1, w)
    W_c = W_m.copy()
    W_m[0] = lam / (L + lam)
    W_c[0] = lam / (L + lam) + 1.0 - config.alpha ** 2 + config.beta_w
    return W_m, W_c, float(np.sqrt(L + lam))


class EhmModel:
    """State and output maps of the healthy EHM at fixed ``theta``."""

    def __init__(self, theta, params: CellParameters, ocp_pos: OcpCurve, ocp_neg: OcpCurve):
        self.theta = _theta(theta)
        self.params = params
        self.ocp_pos = ocp_pos
        self.ocp_neg = ocp_neg

    def f(self, x, u):
        return step_healthy(x, u, self.theta, self.params)

    def h(self, x, u):
        return output_voltage(x, u, self.theta, self.params, self.ocp_pos, self.ocp_neg)

    def in_domain(self, x) -> np.ndarray:
        return np.all((x > 0.0) & (x < 1.0), axis=-1)

    def project(self, x) -> np.ndarray:
        """Clamp sigma points into the open unit square where ``h`` is defined."""
        return np.clip(x, STOICH_GUARD, 1.0 - STOICH_GUARD)


class LinearModel:
    """``x(k+1) = F x(k) + G u(k)``, ``y(k) = H x(k) + J u(k)``; used as an oracle."""

    def __init__(self, F, G, H, J=0.0):
        self.F = np.asarray(F, dtype=float)
        self.G = np.asarray(G, dtype=float)
        self.H = np.asarray(H, dtype=float)
        self.J = float(J)

    def f(self, x, u):
        return x @ self.F.T + np.asarray(u, dtype=float)[..., None] * self.G

    def h(self, x, u):
        return x @ self.H + self.J * np.asarray(u, dtype=float)

    def in_domain(self, x):
        return np.all(np.isfinite(x), axis=-1)

    def project(self, x):
        return x


@dataclass
class UkfState:
    """Filter state for a batch of ``B`` independent runs."""

    x_hat: np.ndarray                  # (B, n)
    P_x: np.ndarray                    # (B, n, n)
    u_prev: np.ndarray | None = None   # (B,) current of the previous sample
    last_innovation: np.ndarray | None = None
    last_y_hat: np.ndarray | None = None
    x_prior: np.ndarray | None = None  # (B, n) prediction before the update
    k: int = 0
    n_projected: int = 0               # sigma points clamped into the domain so far

    @classmethod
    def initial(cls, config: UkfConfig, batch: int = 1) -> "UkfState":
        x0 = np.broadcast_to(config.x0_hat, (batch, config.n_x)).copy()
        P0 = np.broadcast_to(config.P_x0, (batch, config.n_x, config.n_x)).copy()
        return cls(x_hat=x0, P_x=P0)


def _symmetrize(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def _cholesky(P):
    """Batched lower Cholesky factor with one jittered retry."""
    P = _symmetrize(P)
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        n = P.shape[-1]
        jitter = 1e-12 * np.trace(P, axis1=-2, axis2=-1)[..., None, None] / n
        try:
            return np.linalg.cholesky(P + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError("state covariance is not positive definite") from None


def _project_psd(P):
    P = _symmetrize(P)
    n = P.shape[-1]
    if n == 2:
        # closed-form smallest eigenvalue of a symmetric 2x2 block
        a, b, c = P[..., 0, 0], P[..., 0, 1], P[..., 1, 1]
        lam_min = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)
    else:
        lam_min = np.linalg.eigvalsh(P)[..., 0]
    if np.any(lam_min < COV_CLIP):
        raise DivergenceError(f"covariance eigenvalue {lam_min.min():.3g} below {COV_CLIP}")
    if np.any(lam_min < 0):
        w, V = np.linalg.eigh(P)
        P = np.einsum("...ij,...j,...kj->...ik", V, np.clip(w, 0.0, None), V)
    return P


def ukf_step(state: UkfState, u, y_meas, model, config: UkfConfig,
             weights=None) -> UkfState:
    """Advance every run by one sample and absorb the measurement ``y_meas``.

    On the first call (``state.u_prev is None``) there is no transition; the
    prior is the initial estimate itself.
    """
    W_m, W_c, gamma = ukf_weights(config) if weights is None else weights
    n = config.n_x
    x_hat, P = state.x_hat, state.P_x
    B = x_hat.shape[0]
    u = np.broadcast_to(np.asarray(u, dtype=float), (B,))
    y_meas = np.broadcast_to(np.asarray(y_meas, dtype=float), (B,))

    S = _cholesky(P) * gamma                              # (B, n, n)
    sq_q = np.linalg.cholesky(config.Q_x) * gamma         # (n, n)
    sq_r = float(np.sqrt(config.R_x[0, 0])) * gamma

    # sigma-point layout: 0 | +x block | +w block | +v | -x block | -w block | -v
    X = np.repeat(x_hat[:, None, :], 2 * config.L + 1, axis=1)
    X[:, 1:n + 1, :] += np.swapaxes(S, 1, 2)
    X[:, config.L + 1:config.L + n + 1, :] -= np.swapaxes(S, 1, 2)
    Wn = np.zeros((2 * config.L + 1, n))
    Wn[n + 1:2 * n + 1] = sq_q.T
    Wn[config.L + n + 1:config.L + 2 * n + 1] = -sq_q.T
    Vn = np.zeros(2 * config.L + 1)
    Vn[config.L] = sq_r
    Vn[2 * config.L] = -sq_r

    if state.u_prev is None:
        X_prior = X
    else:
        X_prior = model.f(X, state.u_prev[:, None]) + Wn
    # sigma points that cross the domain edge are clamped; the estimate itself is checked below
    X_proj = model.project(X_prior)
    n_proj = state.n_projected + int(np.count_nonzero(np.any(X_proj != X_prior, axis=-1)))
    X_prior = X_proj
    x_prior = np.einsum("l,bli->bi", W_m, X_prior)
    dX = X_prior - x_prior[:, None, :]
    P_prior = np.einsum("l,bli,blj->bij", W_c, dX, dX)

    if not np.all(model.in_domain(X_prior)):
        raise DivergenceError(f"non-finite sigma points at sample {state.k}")
    Y = model.h(X_prior, u[:, None]) + Vn
    y_hat = Y @ W_m
    dY = Y - y_hat[:, None]
    P_y = np.einsum("l,bl,bl->b", W_c, dY, dY)
    P_xy = np.einsum("l,bli,bl->bi", W_c, dX, dY)
    if np.any(P_y <= 0):
        raise DivergenceError(f"non-positive innovation variance at sample {state.k}")
    K = P_xy / P_y[:, None]
    r = y_meas - y_hat
    x_new = x_prior + K * r[:, None]
    P_new = _project_psd(P_prior - P_y[:, None, None] * K[:, :, None] * K[:, None, :])
    if not np.all(model.in_domain(x_new)):
        raise DivergenceError(f"state estimate left the valid domain at sample {state.k}")
    return UkfState(x_hat=x_new, P_x=P_new, u_prev=u.copy(), last_innovation=r,
                    last_y_hat=y_hat, x_prior=x_prior, k=state.k + 1, n_projected=n_proj)


@dataclass
class UkfRun:
    """Per-sample filter output, arrays shaped (B, N, ...)."""

    x_post: np.ndarray
    x_prior: np.ndarray
    P_diag: np.ndarray
    y_hat: np.ndarray
    innovation: np.ndarray
    meta: dict = field(default_factory=dict)

    def write_trace(self, path, run: int = 0) -> Path:
        """Dump one run as CSV (estimate, covariance diagonal, innovation)."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "soc_hat", "css_hat", "P_soc", "P_css", "y_hat", "innovation"])
            for k in range(self.innovation.shape[1]):
                w.writerow([k, *map(repr, map(float, self.x_post[run, k])),
                            *map(repr, map(float, self.P_diag[run, k])),
                            repr(float(self.y_hat[run, k])), repr(float(self.innovation[run, k]))])
        return path


def run_ukf(model, u, y, config: UkfConfig) -> UkfRun:
    """Filter ``y`` (shape (N,) or (B, N)) driven by the current record ``u`` (N,)."""
    u = np.asarray(u, dtype=float)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    B, N = y.shape
    if u.shape != (N,):
        raise ValueError(f"current has shape {u.shape}, expected ({N},)")
    weights = ukf_weights(config)
    n = config.n_x
    x_post = np.empty((B, N, n))
    x_prior = np.empty((B, N, n))
    P_diag = np.empty((B, N, n))
    y_hat = np.empty((B, N))
    innov = np.empty((B, N))
    st = UkfState.initial(config, B)
    for k in range(N):
        try:
            st = ukf_step(st, u[k], y[:, k], model, config, weights)
        except (DivergenceError, NotPositiveDefiniteError) as exc:
            raise type(exc)(f"{exc} (sample {k})") from exc
        x_post[:, k] = st.x_hat
        x_prior[:, k] = st.x_prior
        P_diag[:, k] = np.diagonal(st.P_x, axis1=1, axis2=2)
        y_hat[:, k] = st.last_y_hat
        innov[:, k] = st.last_innovation
    return UkfRun(x_post, x_prior, P_diag, y_hat, innov, meta={"n_projected": st.n_projected})
