import numpy as np
import pytest

from ehmfdi.cycles import synthetic_drive_cycle
from ehmfdi.ehm import CellParameters, nominal_capacity_ah
from ehmfdi.ocp import AffineLogisticOcp

CELL = dict(A=1.0, c_s_max_pos=51218.0, c_s_max_neg=24983.0, c_e=1000.0, F=96485.33,
            j_sr0=1.5e-6, k_n_pos=1e-5, k_n_neg=1e-5, L_pos=1e-4, L_neg=1e-4,
            R_pos=1e-5, R_neg=1e-5, R_g=8.314, T_ref=298.15, alpha0=0.5, beta=0.2,
            eps_s_pos=0.5, U_sr=0.4, T_s=1.0)


@pytest.fixture
def params():
    return CellParameters(**CELL)


@pytest.fixture
def theta():
    return np.array([0.6, 0.01, 0.003, 2.0])


@pytest.fixture
def ocp_pos():
    return AffineLogisticOcp(4.2, -0.6, ((0.3, 0.25, 0.05),), "test-pos")


@pytest.fixture
def ocp_neg():
    return AffineLogisticOcp(0.25, -0.2, ((0.8, 0.0, 0.05),), "test-neg")


@pytest.fixture
def ocps(ocp_pos, ocp_neg):
    return ocp_pos, ocp_neg


@pytest.fixture
def cycle(params, theta):
    cap = nominal_capacity_ah(theta, params)
    return synthetic_drive_cycle(cap, 8400, seed=3)


@pytest.fixture
def short_current(cycle):
    return cycle.current[:600]
