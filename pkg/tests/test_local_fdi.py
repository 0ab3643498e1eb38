import json

import numpy as np
import pytest
from scipy import stats as sps

from ehmfdi.errors import NotPositiveDefiniteError
from ehmfdi.local_fdi import (FdiReport, LocalStatistics, chi2_cdf, chi2_detect, chi2_quantile,
                              estimate_m, estimate_sigma, global_statistic, minmax_isolate,
                              minmax_statistic, normalized_residual, primary_residual, run_tests)


def random_spd(rng, n=4, cond=30.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.geomspace(1.0, cond, n)) @ Q.T


def schur_minmax(zeta, Sigma, M, a):
    """Efficient-score statistic written out with explicit Fisher blocks."""
    F = M.T @ np.linalg.solve(Sigma, M)
    g = M.T @ np.linalg.solve(Sigma, zeta)
    b = [i for i in range(len(zeta)) if i != a]
    Fs = F[a, a] - F[a, b] @ np.linalg.solve(F[np.ix_(b, b)], F[b, a])
    gs = g[a] - F[a, b] @ np.linalg.solve(F[np.ix_(b, b)], g[b])
    return gs ** 2 / Fs


class TestQuantiles:
    def test_reference_thresholds(self):
        assert 13.27 <= chi2_quantile(4, 0.99) <= 13.29
        assert 6.63 <= chi2_quantile(1, 0.99) <= 6.64

    @pytest.mark.parametrize("dof", [1, 2, 3, 4, 7, 20, 150])
    @pytest.mark.parametrize("p", [1e-8, 0.01, 0.5, 0.95, 0.99, 0.999999])
    def test_against_scipy(self, dof, p):
        assert chi2_quantile(dof, p) == pytest.approx(sps.chi2.ppf(p, dof), rel=1e-9)

    def test_cdf_inverts_quantile(self):
        for dof in (1, 4, 9):
            for p in (0.1, 0.7, 0.99):
                assert chi2_cdf(chi2_quantile(dof, p), dof) == pytest.approx(p, abs=1e-12)

    def test_cdf_edges(self):
        assert chi2_cdf(0.0, 3) == 0.0
        assert chi2_cdf(1e4, 3) == pytest.approx(1.0)

    @pytest.mark.parametrize("dof,p", [(0, 0.5), (4, 0.0), (4, 1.0), (2.5, 0.5)])
    def test_bad_arguments(self, dof, p):
        with pytest.raises(ValueError):
            chi2_quantile(dof, p)


class TestEstimators:
    def test_constant_toy_sequence(self):
        H = np.tile([1.0, 0.0, 0.0, 0.0], (3, 1))
        expected = np.zeros((4, 4))
        expected[0, 0] = 3.0
        assert np.array_equal(estimate_sigma(H, 1, check_pd=False), expected)
        with pytest.raises(NotPositiveDefiniteError, match="lag"):
            estimate_sigma(H, 1)

    def test_zero_lags_is_second_moment(self):
        H = np.random.default_rng(1).standard_normal((200, 4))
        assert np.allclose(estimate_sigma(H, 0), H.T @ H / 200, rtol=1e-13)

    def test_batched(self):
        H = np.random.default_rng(2).standard_normal((3, 3000, 4))
        S = estimate_sigma(H, 12)
        assert np.allclose(S[1], estimate_sigma(H[1], 12))

    def test_lag_bounds(self):
        with pytest.raises(ValueError):
            estimate_sigma(np.ones((5, 4)), 5)

    def test_residual_shapes(self):
        s_y = np.arange(12.0).reshape(3, 4)
        H = primary_residual(s_y, [1.0, -1.0, 2.0])
        assert np.array_equal(H[1], -s_y[1])
        assert np.allclose(normalized_residual(H), H.sum(axis=0) / np.sqrt(3))

    def test_m_formula(self):
        rng = np.random.default_rng(3)
        s_y = rng.standard_normal((50, 4))
        s_yy = rng.standard_normal((50, 4, 4))
        r = rng.standard_normal(50)
        expected = sum(-np.outer(s_y[k], s_y[k]) + r[k] * s_yy[k] for k in range(50)) / 50
        assert np.allclose(estimate_m(s_y, s_yy, r), expected, rtol=1e-12)

    def test_m_rank_warning(self):
        s_y = np.ones((20, 4))
        with pytest.warns(RuntimeWarning, match="rank"):
            estimate_m(s_y, np.zeros((20, 4, 4)), np.zeros(20))


class TestStatistics:
    def setup_method(self):
        rng = np.random.default_rng(10)
        self.Sigma = random_spd(rng)
        self.M = random_spd(rng, cond=10.0) + 0.3 * rng.standard_normal((4, 4))
        self.zeta = rng.standard_normal(4)
        self.stats = LocalStatistics(self.zeta, self.Sigma, self.M, 1000)

    def test_square_m_reduces_to_mahalanobis(self):
        expected = self.zeta @ np.linalg.solve(self.Sigma, self.zeta)
        assert global_statistic(self.stats) == pytest.approx(expected, rel=1e-8)

    def test_all_parameters_of_interest_equals_global(self):
        full = minmax_statistic(self.stats, [0, 1, 2, 3])
        assert full == pytest.approx(global_statistic(self.stats), rel=1e-8)

    def test_minmax_matches_schur_formula(self):
        for a in range(4):
            assert minmax_statistic(self.stats, a) == pytest.approx(
                schur_minmax(self.zeta, self.Sigma, self.M, a), rel=1e-8)

    def test_minmax_bounded_by_global(self):
        g = global_statistic(self.stats)
        assert all(minmax_statistic(self.stats, a) <= g * (1 + 1e-12) for a in range(4))

    def test_tall_m_projection(self):
        rng = np.random.default_rng(4)
        M = rng.standard_normal((4, 2))
        st = LocalStatistics(self.zeta, self.Sigma, M, 100)
        F = M.T @ np.linalg.solve(self.Sigma, M)
        g = M.T @ np.linalg.solve(self.Sigma, self.zeta)
        assert global_statistic(st) == pytest.approx(g @ np.linalg.solve(F, g), rel=1e-10)

    def test_ill_conditioned_sigma(self):
        S = np.diag([1.0, 1.0, 1.0, 1e-14])
        with pytest.raises(np.linalg.LinAlgError):
            global_statistic(LocalStatistics(self.zeta, S, self.M, 10))

    def test_decisions(self):
        val, flag = chi2_detect(self.stats, threshold=0.0)
        assert flag and val > 0
        val, flag = minmax_isolate(self.stats, 2, threshold=1e9)
        assert not flag


class TestGaussianOracle:
    """Statistics on synthetic zeta with known Sigma and M."""

    def setup_method(self):
        rng = np.random.default_rng(20)
        self.rng = rng
        self.Sigma = random_spd(rng)
        self.M = rng.standard_normal((4, 4)) + 2 * np.eye(4)
        self.L = np.linalg.cholesky(self.Sigma)

    def draw(self, n, mean=np.zeros(4)):
        return mean + self.rng.standard_normal((n, 4)) @ self.L.T

    def test_false_alarm_rate(self):
        thr = chi2_quantile(4, 0.99)
        g = np.array([global_statistic(LocalStatistics(z, self.Sigma, self.M, 1))
                      for z in self.draw(5000)])
        assert abs(np.mean(g > thr) - 0.01) <= 0.007

    def test_null_distributions(self):
        zs = self.draw(2000)
        g = [global_statistic(LocalStatistics(z, self.Sigma, self.M, 1)) for z in zs]
        m = [minmax_statistic(LocalStatistics(z, self.Sigma, self.M, 1), 1) for z in zs]
        assert sps.kstest(g, lambda x: [chi2_cdf(v, 4) for v in np.atleast_1d(x)]).pvalue > 1e-3
        assert sps.kstest(m, "chi2", args=(1,)).pvalue > 1e-3

    def test_noncentrality(self):
        delta = np.array([0.5, -0.3, 0.0, 0.2])
        F = self.M.T @ np.linalg.solve(self.Sigma, self.M)
        lam = delta @ F @ delta
        g = [global_statistic(LocalStatistics(z, self.Sigma, self.M, 1))
             for z in self.draw(3000, self.M @ delta)]
        assert np.mean(g) == pytest.approx(4 + lam, abs=4 * np.sqrt(2 * (4 + 2 * lam) / 3000))


class TestReport:
    def test_run_tests_and_json(self, tmp_path):
        rng = np.random.default_rng(5)
        st = LocalStatistics(np.array([9.0, 0.1, 0.0, 0.1]), np.eye(4), -np.eye(4), 500)
        rep = run_tests(st, metadata={"seed": 3})
        assert rep.detected and rep.isolated.tolist() == [True, False, False, False]
        assert rep.most_likely == "eps_s_neg"
        data = json.loads(rep.write_json(tmp_path / "r.json").read_text())
        assert data["decisions"]["isolated"]["eps_s_neg"] is True
        assert data["metadata"]["seed"] == 3 and data["dof"] == [4, 1]
        assert data["chi2_global"] == pytest.approx(81.02)

    def test_no_flag_no_heuristic(self):
        st = LocalStatistics(np.zeros(4), np.eye(4), np.eye(4), 10)
        rep = run_tests(st)
        assert not rep.detected and rep.most_likely is None

    def test_thresholds_follow_alpha(self):
        st = LocalStatistics(np.zeros(4), np.eye(4), np.eye(4), 10)
        rep = run_tests(st, alpha_fa=0.05)
        assert rep.threshold_global == pytest.approx(sps.chi2.ppf(0.95, 4))
        assert isinstance(rep, FdiReport)

    def test_from_series(self):
        rng = np.random.default_rng(6)
        s_y = rng.standard_normal((400, 4))
        s_yy = np.zeros((400, 4, 4))
        r = rng.standard_normal(400)
        st = LocalStatistics.from_series(s_y, s_yy, r, n_i=3)
        assert st.N_eff == 400
        assert np.allclose(st.M, -s_y.T @ s_y / 400)
        assert np.allclose(st.zeta, (s_y * r[:, None]).sum(0) / 20)
