"""Local-approach χ² tests on filter innovations.

Primary residuals ``H_k = s_y(k)^T r(k)`` are summed into the normalized
residual ``zeta = sum(H) / sqrt(N)``.  Under the nominal parameters ``zeta``
is asymptotically ``N(0, Sigma)``; a small change ``eta / sqrt(N)`` shifts its
mean to ``M eta``.  The global test and the per-parameter minmax tests below
are the standard statistics for this Gaussian problem.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg as sla

from .ehm import PARAM_NAMES
from .errors import ConvergenceError, NotPositiveDefiniteError

COND_LIMIT = 1e12


# --------------------------------------------------------------------------- χ² quantile

def _lower_gamma_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by its power series (x < a + 1)."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(1000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_gamma_cf(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction (x >= a + 1)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_cdf(x: float, dof: int) -> float:
    """CDF of the central χ² distribution."""
    if x <= 0.0:
        return 0.0
    a, t = 0.5 * dof, 0.5 * x
    if t < a + 1.0:
        return _lower_gamma_series(a, t)
    return 1.0 - _upper_gamma_cf(a, t)


def _chi2_pdf(x: float, dof: int) -> float:
    a = 0.5 * dof
    return math.exp((a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - math.lgamma(a))


def chi2_quantile(dof: int, p: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """``p``-quantile of χ² with ``dof`` degrees of freedom.

    Newton iterations on the CDF, kept inside a bisection bracket that is
    tightened at every step.
    """
    if int(dof) != dof or dof < 1:
        raise ValueError(f"dof must be a positive integer, got {dof}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < p:
        lo, hi = hi, 2.0 * hi
    # Wilson-Hilferty starting point
    z = math.sqrt(2.0) * _erfinv(2.0 * p - 1.0)
    k = float(dof)
    x = k * (1.0 - 2.0 / (9.0 * k) + z * math.sqrt(2.0 / (9.0 * k))) ** 3
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f = chi2_cdf(x, dof) - p
        if f < 0:
            lo = x
        else:
            hi = x
        pdf = _chi2_pdf(x, dof)
        step = f / pdf if pdf > 0 else math.inf
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * abs(x_new):
            return x_new
        x = x_new
    raise ConvergenceError(f"chi2_quantile({dof}, {p}) did not converge")


def _erfinv(y: float) -> float:
    """Inverse error function, rough (used only for a starting guess)."""
    a = 0.147
    ln = math.log(max(1.0 - y * y, 1e-300))
    t = 2.0 / (math.pi * a) + 0.5 * ln
    return math.copysign(math.sqrt(math.sqrt(t * t - ln / a) - t), y)


# --------------------------------------------------------------------------- residuals

def primary_residual(s_y, r):
    """``H = s_y^T r`` for one sample or a stack of samples."""
    s_y = np.asarray(s_y, dtype=float)
    return s_y * np.asarray(r, dtype=float)[..., None]


def normalized_residual(H):
    """``zeta = sum_k H_k / sqrt(N)`` over the sample axis (second to last)."""
    H = np.asarray(H, dtype=float)
    N = H.shape[-2]
    if N < 1:
        raise ValueError("need at least one residual")
    return H.sum(axis=-2) / math.sqrt(N)


def estimate_sigma(H, n_i: int = 12, check_pd: bool = True):
    """Lag-window estimate of the limiting covariance of ``zeta``.

    ``Sigma = (1/N) sum H_k H_k^T + sum_{i=1..n_i} (1/(N-i)) sum_k (H_k H_{k+i}^T + H_{k+i} H_k^T)``.
    A leading batch axis is allowed.  With ``check_pd`` (default) a
    non-positive-definite estimate raises ``NotPositiveDefiniteError``.
    """
    H = np.asarray(H, dtype=float)
    N = H.shape[-2]
    if not 0 <= n_i < N:
        raise ValueError(f"need 0 <= n_i < N, got n_i={n_i}, N={N}")
    S = np.einsum("...ki,...kj->...ij", H, H) / N
    for i in range(1, n_i + 1):
        G = np.einsum("...ki,...kj->...ij", H[..., :-i, :], H[..., i:, :]) / (N - i)
        S = S + G + np.swapaxes(G, -1, -2)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    if check_pd and np.any(np.linalg.eigvalsh(S)[..., 0] <= 0):
        raise NotPositiveDefiniteError(
            f"Sigma estimate with n_i={n_i} is not positive definite; try a different lag count")
    return S


def estimate_m(s_y, s_yy, r):
    """``M = (1/N) sum_k [ -s_y(k)^T s_y(k) + r(k) s_yy(k) ]``."""
    s_y = np.asarray(s_y, dtype=float)
    s_yy = np.asarray(s_yy, dtype=float)
    r = np.asarray(r, dtype=float)
    N = s_y.shape[-2]
    M = (-np.einsum("...ki,...kj->...ij", s_y, s_y)
         + np.einsum("...k,...kij->...ij", r, s_yy)) / N
    sv = np.linalg.svd(M, compute_uv=False)
    if np.any(sv[..., -1] < 1e-10 * sv[..., 0]):
        warnings.warn("sensitivity matrix M is numerically rank deficient", RuntimeWarning,
                      stacklevel=2)
    return M


# --------------------------------------------------------------------------- tests

@dataclass
class LocalStatistics:
    zeta: np.ndarray       # (4,)
    Sigma: np.ndarray      # (4, 4)
    M: np.ndarray          # (4, 4)
    N_eff: int

    @classmethod
    def from_series(cls, s_y, s_yy, r, n_i: int = 12, M=None) -> "LocalStatistics":
        """Statistics from aligned sensitivity and innovation series (after discard)."""
        H = primary_residual(s_y, r)
        Sigma = estimate_sigma(H, n_i)
        if M is None:
            M = estimate_m(s_y, s_yy, r)
        return cls(normalized_residual(H), Sigma, np.asarray(M, float), int(H.shape[-2]))


def _cho(Sigma):
    Sigma = np.asarray(Sigma, dtype=float)
    if np.linalg.cond(Sigma) > COND_LIMIT:
        raise np.linalg.LinAlgError("Sigma is too ill-conditioned for a reliable solve")
    try:
        return sla.cho_factor(Sigma, lower=True)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("Sigma is not positive definite") from None


def _fisher(stats: LocalStatistics):
    """``F = M^T Sigma^-1 M`` and ``zt = M^T Sigma^-1 zeta``."""
    c = _cho(stats.Sigma)
    Si_M = sla.cho_solve(c, stats.M)
    F = stats.M.T @ Si_M
    zt = Si_M.T @ stats.zeta
    return 0.5 * (F + F.T), zt


def _quad_solve(F, v):
    if np.linalg.cond(F) > COND_LIMIT:
        raise np.linalg.LinAlgError("Fisher matrix is too ill-conditioned for a reliable solve")
    return float(v @ np.linalg.solve(F, v))


def global_statistic(stats: LocalStatistics) -> float:
    """``zeta^T Sigma^-1 M (M^T Sigma^-1 M)^-1 M^T Sigma^-1 zeta``."""
    F, zt = _fisher(stats)
    return max(_quad_solve(F, zt), 0.0)


def chi2_detect(stats: LocalStatistics, threshold: float | None = None):
    thr = chi2_quantile(len(stats.zeta), 0.99) if threshold is None else threshold
    val = global_statistic(stats)
    return val, bool(val > thr)


def minmax_statistic(stats: LocalStatistics, a) -> float:
    """Minmax statistic of the parameter subset ``a`` (index or list of indices)."""
    F, zt = _fisher(stats)
    idx_a = np.atleast_1d(np.asarray(a, dtype=int))
    idx_b = np.setdiff1d(np.arange(F.shape[0]), idx_a)
    za = zt[idx_a]
    Faa = F[np.ix_(idx_a, idx_a)]
    if idx_b.size:
        Fab = F[np.ix_(idx_a, idx_b)]
        Fbb = F[np.ix_(idx_b, idx_b)]
        if np.linalg.cond(Fbb) > COND_LIMIT:
            raise np.linalg.LinAlgError("nuisance block of the Fisher matrix is singular")
        za = za - Fab @ np.linalg.solve(Fbb, zt[idx_b])
        Faa = Faa - Fab @ np.linalg.solve(Fbb, Fab.T)
    return max(_quad_solve(np.atleast_2d(Faa), np.atleast_1d(za)), 0.0)


def minmax_isolate(stats: LocalStatistics, a: int, threshold: float | None = None):
    thr = chi2_quantile(1, 0.99) if threshold is None else threshold
    val = minmax_statistic(stats, a)
    return val, bool(val > thr)


@dataclass
class FdiReport:
    """Outcome of the global and per-parameter tests for one record."""

    chi2_global: float
    chi2_minmax: np.ndarray
    threshold_global: float
    threshold_minmax: float
    stats: LocalStatistics
    names: tuple[str, ...] = PARAM_NAMES
    metadata: dict = field(default_factory=dict)

    @property
    def detected(self) -> bool:
        return self.chi2_global > self.threshold_global

    @property
    def isolated(self) -> np.ndarray:
        return self.chi2_minmax > self.threshold_minmax

    @property
    def most_likely(self) -> str | None:
        """Heuristic: the flagged parameter with the largest minmax statistic."""
        if not self.isolated.any():
            return None
        vals = np.where(self.isolated, self.chi2_minmax, -np.inf)
        return self.names[int(np.argmax(vals))]

    @property
    def dof(self) -> tuple[int, int]:
        return len(self.names), 1

    def to_dict(self) -> dict:
        return {
            "chi2_global": self.chi2_global,
            "chi2_minmax": dict(zip(self.names, map(float, self.chi2_minmax))),
            "thresholds": {"global": self.threshold_global, "minmax": self.threshold_minmax},
            "dof": list(self.dof),
            "decisions": {
                "detected": self.detected,
                "isolated": dict(zip(self.names, map(bool, self.isolated))),
                "most_likely_heuristic": self.most_likely,
            },
            "zeta": self.stats.zeta.tolist(),
            "Sigma": self.stats.Sigma.tolist(),
            "M": self.stats.M.tolist(),
            "N_eff": self.stats.N_eff,
            "metadata": self.metadata,
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, default=_json_default))
        return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def run_tests(stats: LocalStatistics, alpha_fa: float = 0.01, metadata=None) -> FdiReport:
    """Global test plus one minmax test per parameter at false-alarm level ``alpha_fa``."""
    n = len(stats.zeta)
    thr_g = chi2_quantile(n, 1.0 - alpha_fa)
    thr_a = chi2_quantile(1, 1.0 - alpha_fa)
    g = global_statistic(stats)
    mm = np.array([minmax_statistic(stats, a) for a in range(n)])
    return FdiReport(g, mm, thr_g, thr_a, stats, metadata=dict(metadata or {}))
