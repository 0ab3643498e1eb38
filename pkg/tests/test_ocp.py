import numpy as np
import pytest

from ehmfdi.errors import ConfigError, DomainError
from ehmfdi.ocp import AffineLogisticOcp, TabulatedOcp, ocp_from_config, ocp_to_config


class TestAffineLogistic:
    def test_hand_values(self):
        c = AffineLogisticOcp(4.0, -0.5, ((0.2, 0.5, 0.1),))
        # at the step centre the logistic equals 1/2
        assert c(0.5) == pytest.approx(4.0 - 0.25 + 0.1)
        assert c.derivative(0.5) == pytest.approx(-0.5 - 0.2 / 0.1 * 0.25)

    def test_derivative_matches_difference(self):
        c = AffineLogisticOcp(0.3, -0.2, ((0.8, 0.02, 0.04), (0.1, 0.6, 0.03)))
        x = np.linspace(0.05, 0.95, 37)
        h = 1e-6
        fd = (c(x + h) - c(x - h)) / (2 * h)
        assert np.allclose(c.derivative(x), fd, rtol=1e-6, atol=1e-8)

    def test_domain(self):
        c = AffineLogisticOcp(4.0, -0.5)
        with pytest.raises(DomainError):
            c(1.0)
        with pytest.raises(DomainError):
            c.derivative(np.array([0.5, -0.1]))

    def test_bad_width(self):
        with pytest.raises(ConfigError):
            AffineLogisticOcp(4.0, -0.5, ((0.1, 0.5, 0.0),))


class TestTabulated:
    def test_reproduces_cubic(self):
        x = np.linspace(0.0, 1.0, 41)
        curve = TabulatedOcp(x, 4.0 - 0.3 * x)
        assert curve(0.37) == pytest.approx(4.0 - 0.3 * 0.37, abs=1e-12)
        assert curve.derivative(0.37) == pytest.approx(-0.3, abs=1e-10)

    def test_refuses_extrapolation(self):
        curve = TabulatedOcp([0.1, 0.3, 0.5, 0.7, 0.9], [4.1, 4.0, 3.9, 3.8, 3.7])
        with pytest.raises(DomainError):
            curve(0.95)

    def test_validation(self):
        with pytest.raises(ConfigError):
            TabulatedOcp([0.1, 0.3, 0.2, 0.7], [4.1, 4.0, 3.9, 3.8])
        with pytest.raises(ConfigError):
            TabulatedOcp([0.1, 0.3], [4.1, 4.0])


class TestConfig:
    def test_roundtrip_affine(self):
        c = AffineLogisticOcp(0.3, -0.2, ((0.8, 0.02, 0.04),), "neg")
        again = ocp_from_config(ocp_to_config(c))
        assert again == c

    def test_table_from_csv(self, tmp_path):
        p = tmp_path / "ocp.csv"
        x = np.linspace(0.05, 0.95, 10)
        np.savetxt(p, np.column_stack([x, 4.2 - 0.5 * x]), delimiter=",")
        curve = ocp_from_config({"kind": "table", "path": str(p)})
        assert curve(0.5) == pytest.approx(3.95, abs=1e-9)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            ocp_from_config({"kind": "polynomial"})

    def test_missing_key(self):
        with pytest.raises(ConfigError, match="offset"):
            ocp_from_config({"kind": "affine_logistic", "slope": -0.1})
