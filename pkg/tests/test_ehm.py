import math

import numpy as np
import pytest

from ehmfdi.ehm import (CellParameters, EhmSimulator, SideReactionState, ThetaVector,
                        check_orientation, exchange_current_density, lithium_inventory,
                        nominal_capacity_ah, output_voltage, output_voltage_faulty,
                        positive_stoichiometry, side_reaction_residual, simulate,
                        solve_side_reaction, state_matrices, step_capacity_loss, step_healthy,
                        surface_overpotential)
from ehmfdi.errors import ConfigError, DomainError
from ehmfdi.ocp import AffineLogisticOcp

from conftest import CELL


def reference_voltage(x, u, theta, p, ocp_pos, ocp_neg, z=None, n_li=None):
    """Scalar, line-by-line evaluation of the terminal voltage."""
    z = u if z is None else z
    eps, R_f, g_s, n = theta
    n = n if n_li is None else n_li
    vt = p.R_g * p.T_ref / (p.alpha0 * p.F)
    rho = -p.c_s_max_neg * p.L_neg / (p.c_s_max_pos * p.L_pos * p.eps_s_pos)
    sigma = 1.0 / (p.c_s_max_pos * p.L_pos * p.eps_s_pos * p.A)
    xp = eps * rho * x[0] + n * sigma
    j0p = p.k_n_pos * p.c_s_max_pos * math.sqrt(p.c_e) * math.sqrt(xp * (1 - xp))
    j0n = p.k_n_neg * p.c_s_max_neg * math.sqrt(p.c_e) * math.sqrt(x[1] * (1 - x[1]))
    eta_p = vt * math.asinh(-p.R_pos * z / (6 * p.eps_s_pos * p.L_pos * j0p))
    eta_n = vt * math.asinh(p.R_neg * u / (6 * eps * p.L_neg * j0n))
    d1 = p.R_neg / (3 * p.L_neg)
    return (eta_p - eta_n + float(ocp_pos(xp)) - float(ocp_neg(x[1]))
            + R_f / eps * d1 * z)


class TestParameters:
    def test_rejects_nonpositive(self):
        bad = dict(CELL, L_neg=0.0)
        with pytest.raises(ConfigError):
            CellParameters(**bad)

    def test_beta_range(self):
        with pytest.raises(ConfigError):
            CellParameters(**dict(CELL, beta=1.0))

    def test_derived_constants(self, params):
        assert params.a1 == pytest.approx(1 / (0.2 * 0.8))
        assert params.b2 == pytest.approx(params.b1 / 0.8)
        assert params.rho < 0 and params.sigma > 0
        assert params.thermal_voltage == pytest.approx(0.051387, rel=1e-4)

    def test_theta_vector_roundtrip(self):
        tv = ThetaVector.from_array([0.6, 0.01, 0.003, 2.0])
        assert np.array_equal(tv.as_array(), [0.6, 0.01, 0.003, 2.0])
        with pytest.raises(ConfigError):
            ThetaVector(0.6, -0.01, 0.003, 2.0)

    def test_capacity_formula(self, params, theta):
        expected = 0.6 * 24983.0 * 1e-4 * 1.0 * 96485.33 / 3600
        assert nominal_capacity_ah(theta, params) == pytest.approx(expected)


class TestStateEquation:
    def test_rows_sum_to_one(self, params, theta):
        A, B = state_matrices(theta, params)
        assert np.array_equal(A.sum(axis=1), [1.0, 1.0])
        assert np.all(B < 0)

    def test_frozen_diffusion(self, params, theta):
        th = theta.copy()
        th[2] = 0.0
        A, _ = state_matrices(th, params)
        assert np.array_equal(A, np.eye(2))

    def test_equilibrium_is_fixed(self, params, theta):
        x = np.array([0.42, 0.42])
        for _ in range(50):
            x = step_healthy(x, 0.0, theta, params)
        assert np.array_equal(x, [0.42, 0.42])

    def test_relaxation_toward_soc(self, params, theta):
        x = step_healthy(np.array([0.5, 0.4]), 0.0, theta, params)
        assert x[0] == 0.5
        assert 0.4 < x[1] < 0.5

    def test_constant_current_closed_form(self, params, theta):
        u, k = 12.5, 300
        x = np.array([0.9, 0.9])
        for _ in range(k):
            x = step_healthy(x, u, theta, params)
        expected = 0.9 - k * params.T_s * params.b1 / theta[0] * u
        assert x[0] == pytest.approx(expected, rel=1e-13)

    def test_batched_matches_single(self, params, theta):
        xs = np.array([[0.5, 0.45], [0.8, 0.81]])
        us = np.array([3.0, -7.0])
        batch = step_healthy(xs, us, theta, params)
        for i in range(2):
            assert np.allclose(batch[i], step_healthy(xs[i], us[i], theta, params), rtol=0,
                               atol=1e-15)


class TestOutput:
    def test_open_circuit(self, params, theta, ocps):
        x = np.array([0.7, 0.65])
        xp = positive_stoichiometry(0.7, theta, params)
        ocv = float(ocps[0](xp) - ocps[1](0.65))
        assert output_voltage(x, 0.0, theta, params, *ocps) == ocv

    def test_matches_scalar_reference(self, params, theta, ocps):
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.uniform(0.2, 0.95, 2)
            u = rng.uniform(-300, 300)
            assert output_voltage(x, u, theta, params, *ocps) == pytest.approx(
                reference_voltage(x, u, theta, params, *ocps), abs=1e-12)

    def test_film_term_is_only_rf_dependence(self, params, theta, ocps):
        x, u = np.array([0.6, 0.55]), 40.0
        th2 = theta.copy()
        th2[1] *= 2
        dv = output_voltage(x, u, th2, params, *ocps) - output_voltage(x, u, theta, params, *ocps)
        assert dv == pytest.approx(theta[1] / theta[0] * params.d1 * u, rel=1e-10)

    def test_overpotential_odd_in_current(self, params, theta):
        a = surface_overpotential(0.4, 25.0, "neg", theta, params)
        b = surface_overpotential(0.4, -25.0, "neg", theta, params)
        assert a == -b and a > 0
        assert surface_overpotential(0.4, 0.0, "neg", theta, params) == 0.0

    def test_stoichiometry_guard(self, params):
        with pytest.raises(DomainError):
            exchange_current_density(1.0, "neg", params)
        with pytest.raises(DomainError):
            exchange_current_density(5e-7, "pos", params)
        assert exchange_current_density(1e-6, "neg", params) > 0

    def test_lithium_balance(self, params, theta):
        a = positive_stoichiometry(0.5, theta, params)
        b = positive_stoichiometry(0.6, theta, params)
        assert b < a
        c = positive_stoichiometry(0.5, theta, params, n_li=theta[3] + 0.01)
        assert c - a == pytest.approx(params.sigma * 0.01, rel=1e-9)

    def test_orientation_check(self, params, theta, ocps):
        check_orientation(theta, params, *ocps)
        rising = AffineLogisticOcp(3.0, 1.5)
        with pytest.raises(ConfigError):
            check_orientation(theta, params, rising, ocps[1])


class TestSideReaction:
    def test_kirchhoff_and_residual(self, params, theta, ocp_neg):
        for z in (-200.0, -5.0, 0.0, 3.0, 150.0):
            x = np.array([0.8, 0.82])
            u, d = solve_side_reaction(x, z, theta, params, ocp_neg)
            assert d < 0
            assert abs(z - u - d) <= 1e-12 * max(1.0, abs(z))
            assert abs(side_reaction_residual(0.82, u, d, theta, params, ocp_neg)) <= 1e-10

    def test_vanishing_exchange_current(self, params, theta, ocp_neg):
        tiny = params.with_updates(j_sr0=1e-30)
        u, d = solve_side_reaction(np.array([0.8, 0.8]), 10.0, theta, tiny, ocp_neg)
        assert -1e-20 < d < 0
        assert u == pytest.approx(10.0, abs=1e-18)

    def test_side_current_grows_during_charge(self, params, theta, ocp_neg):
        x = np.array([0.9, 0.9])
        _, d_dis = solve_side_reaction(x, 100.0, theta, params, ocp_neg)
        _, d_chg = solve_side_reaction(x, -100.0, theta, params, ocp_neg)
        assert abs(d_chg) > abs(d_dis)

    def test_small_against_drive_current(self, params, theta, ocps, cycle):
        tr = simulate(theta, params, *ocps, cycle.current[:2000], [0.97, 0.97], side_reaction=True)
        assert np.max(np.abs(tr.d)) < 1e-3 * np.max(np.abs(tr.z))

    def test_capacity_bookkeeping(self, params, theta):
        sr = SideReactionState()
        assert step_capacity_loss(sr, 0.0, params).q_loss == 0.0
        for _ in range(10):
            sr = step_capacity_loss(sr, -0.36, params)
        assert sr.q_loss == pytest.approx(10 * 0.36 / 3600)
        with pytest.raises(DomainError):
            step_capacity_loss(sr, 0.1, params)
        assert lithium_inventory(theta, sr, params) == pytest.approx(
            theta[3] - 3600 * sr.q_loss / params.F)

    def test_inventory_trace(self, params, theta, ocps, cycle):
        tr = simulate(theta, params, *ocps, cycle.current[:500], [0.97, 0.97], side_reaction=True)
        assert np.all(np.diff(tr.n_li) < 0)
        assert np.array_equal(tr.n_li, theta[3] - 3600.0 / params.F * tr.q_loss)

    def test_faulty_output_reduces_to_healthy(self, params, theta, ocps):
        x = np.array([0.6, 0.58])
        assert output_voltage_faulty(x, 20.0, 20.0, theta, params, *ocps) == \
            output_voltage(x, 20.0, theta, params, *ocps)

    def test_faulty_output_reference(self, params, theta, ocps):
        x = np.array([0.6, 0.58])
        v = output_voltage_faulty(x, 19.5, 20.0, theta, params, *ocps, n_li=1.999)
        assert v == pytest.approx(reference_voltage(x, 19.5, theta, params, *ocps, z=20.0,
                                                    n_li=1.999), abs=1e-12)

    def test_negligible_side_reaction_matches_healthy(self, params, theta, ocps, cycle):
        tiny = params.with_updates(j_sr0=1e-30)
        u = cycle.current[:400]
        a = simulate(theta, tiny, *ocps, u, [0.9, 0.9], side_reaction=True)
        b = simulate(theta, tiny, *ocps, u, [0.9, 0.9])
        assert np.max(np.abs(a.y - b.y)) < 1e-10


class TestSimulation:
    def test_loop_matches_stepper(self, params, theta, ocps, short_current):
        tr = simulate(theta, params, *ocps, short_current, [0.97, 0.97])
        sim = EhmSimulator(theta, params, *ocps, [0.97, 0.97])
        ys = np.array([sim.step(z) for z in short_current])
        assert np.allclose(ys, tr.y, rtol=0, atol=1e-13)
        assert np.allclose(sim.x, tr.x[-1], rtol=0, atol=1e-15)

    def test_stepper_with_side_reaction(self, params, theta, ocps, short_current):
        tr = simulate(theta, params, *ocps, short_current, [0.97, 0.97], side_reaction=True)
        sim = EhmSimulator(theta, params, *ocps, [0.97, 0.97], side_reaction=True)
        ys = np.array([sim.step(z) for z in short_current])
        assert np.allclose(ys, tr.y, rtol=0, atol=1e-12)

    def test_indexing_convention(self, params, theta, ocps):
        # the first output sees the initial state, the first current only moves the next state
        tr = simulate(theta, params, *ocps, [50.0, 0.0], [0.8, 0.8])
        assert tr.y[0] == output_voltage(np.array([0.8, 0.8]), 50.0, theta, params, *ocps)
        assert np.array_equal(tr.x[1], step_healthy(np.array([0.8, 0.8]), 50.0, theta, params))

    def test_domain_error_on_overdischarge(self, params, theta, ocps):
        cap = nominal_capacity_ah(theta, params)
        with pytest.raises(DomainError):
            simulate(theta, params, *ocps, np.full(4000, cap), [0.5, 0.5])
