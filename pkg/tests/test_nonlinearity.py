import numpy as np
import pytest

from kslab.errors import ConfigError
from kslab.nonlinearity import CutoffPressure, pressure, pressure_prime
from oracles import central_difference_scalar


class TestPressure:
    def test_quadratic_case(self):
        assert pressure(1.0, 2.0) == 2.0

    def test_cubic_case(self):
        assert pressure(2.0, 3.0) == pytest.approx(6.0, rel=1e-15)

    def test_vacuum(self):
        for m in (2.0, 3.0, 4.5):
            assert pressure(0.0, m) == 0.0

    def test_invalid_exponent(self):
        with pytest.raises(ValueError):
            pressure(1.0, 1.0)
        with pytest.raises(ValueError):
            pressure_prime(1.0, 0.5)


class TestCutoffRegions:
    def test_low_cap(self):
        cp = CutoffPressure(2.0, 0.01)
        assert cp.value(0.005) == pytest.approx(0.02, rel=1e-15)

    def test_middle_coincidence_value(self):
        cp = CutoffPressure(2.0, 0.01)
        assert cp.value(0.5) == 1.0

    def test_high_cap(self):
        cp = CutoffPressure(2.0, 0.01)
        assert cp.value(300.0) == pytest.approx(400.0, rel=1e-15)

    @pytest.mark.parametrize("m,lam", [(2.0, 0.05), (3.0, 0.1), (4.0, 0.02)])
    def test_coincidence_exact(self, m, lam):
        cp = CutoffPressure(m, lam)
        rng = np.random.default_rng(3)
        r = rng.uniform(2 * lam, 1 / lam, size=1000)
        assert np.array_equal(cp.value(r), pressure(r, m))

    def test_validation(self):
        with pytest.raises(ConfigError):
            CutoffPressure(2.5, 0.1)
        with pytest.raises(ConfigError):
            CutoffPressure(2.0, 0.6)
        with pytest.raises(ConfigError):
            CutoffPressure(2.0, 0.0)


class TestDerivatives:
    def test_prime_flat_regions(self):
        cp = CutoffPressure(2.0, 0.1)
        assert cp.prime(0.05) == 0.0
        assert cp.prime(50.0) == 0.0

    def test_prime_middle_m2(self):
        cp = CutoffPressure(2.0, 0.1)
        assert cp.prime(1.0) == 2.0

    def test_second_flat_and_middle(self):
        cp = CutoffPressure(2.0, 0.1)
        assert cp.second(0.05) == 0.0
        assert cp.second(1.0) == 0.0
        cp3 = CutoffPressure(3.0, 0.1)
        assert cp3.second(1.0) == pytest.approx(3.0, rel=1e-14)

    @pytest.mark.parametrize("m,lam", [(2.0, 0.05), (3.0, 0.08)])
    def test_prime_matches_finite_difference_in_bands(self, m, lam):
        cp = CutoffPressure(m, lam)
        rng = np.random.default_rng(11)
        bands = [(lam, 2 * lam), (1 / lam, 2 / lam)]
        for lo, hi in bands:
            for _ in range(20):
                r = rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo))
                step = 1e-7 * (hi - lo)
                fd = central_difference_scalar(cp.value, r, step)
                assert cp.prime(r) == pytest.approx(fd, rel=1e-6, abs=1e-12)

    @pytest.mark.parametrize("m,lam", [(2.0, 0.05), (3.0, 0.08)])
    def test_second_matches_finite_difference_in_bands(self, m, lam):
        cp = CutoffPressure(m, lam)
        rng = np.random.default_rng(12)
        for lo, hi in [(lam, 2 * lam), (1 / lam, 2 / lam)]:
            for _ in range(10):
                r = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo))
                step = 1e-6 * (hi - lo)
                fd = central_difference_scalar(cp.prime, r, step)
                assert cp.second(r) == pytest.approx(fd, rel=1e-5, abs=1e-10)


class TestSmoothness:
    @pytest.mark.parametrize("m,lam", [(2.0, 0.1), (3.0, 0.1), (5.0, 0.05)])
    def test_band_edges_match_to_third_order(self, m, lam):
        cp = CutoffPressure(m, lam)
        pp = np.polynomial.polynomial
        third_scale = max(
            np.max(np.abs(pp.polyval(np.linspace(0, 1, 200), pp.polyder(cp.low_coeffs, 3)))) / lam**3,
            np.max(np.abs(pp.polyval(np.linspace(0, 1, 200), pp.polyder(cp.high_coeffs, 3)))) * lam**3,
            1e-9,
        )
        band_pts = np.concatenate(
            [np.linspace(lam, 2 * lam, 200), np.linspace(1 / lam, 2 / lam, 200)]
        )
        for edge in (lam, 2 * lam, 1 / lam, 2 / lam):
            for fn in (cp.value, cp.prime, cp.second):
                left = fn(edge - 1e-12 * max(edge, 1.0))
                right = fn(edge + 1e-12 * max(edge, 1.0))
                scale = max(float(np.max(np.abs(fn(band_pts)))), 1e-9)
                assert abs(left - right) <= 1e-9 * scale
            # third derivative via one-sided differences of the second;
            # the step is small enough that the O(h) bias stays below the
            # tolerance relative to the blend's own third-derivative scale
            h = 4e-9 * max(edge, 1.0)
            d3_left = (cp.second(edge) - cp.second(edge - h)) / h
            d3_right = (cp.second(edge + h) - cp.second(edge)) / h
            assert abs(d3_left - d3_right) <= 1e-6 * third_scale

    @pytest.mark.parametrize("m,lam", [(2.0, 0.1), (2.0, 0.01), (3.0, 0.1), (4.0, 0.05), (7.0, 0.02)])
    def test_monotone_on_fine_grid(self, m, lam):
        cp = CutoffPressure(m, lam)
        r = np.geomspace(lam / 10, 3 / lam, 20000)
        vals = cp.value(r)
        assert np.all(np.diff(vals) >= -1e-12 * np.max(np.abs(vals)))
        assert np.all(cp.prime(r) >= -1e-12 * np.max(cp.prime(r)))

    @pytest.mark.parametrize("m,lam", [(2.0, 0.1), (3.0, 0.05)])
    def test_global_lipschitz_bound(self, m, lam):
        # blends may overshoot the endpoint slopes by a bounded factor
        cp = CutoffPressure(m, lam)
        r = np.geomspace(lam / 10, 3 / lam, 50000)
        mid = np.geomspace(lam, 2 / lam, 10000)
        bound = (1.0 + 1.1) * np.max(m * mid ** (m - 2.0))
        assert np.max(cp.prime(r)) <= bound


class TestHermiteData:
    def test_endpoint_derivative_matching(self):
        # the blend interpolates value and three derivatives of its targets
        m, lam = 3.0, 0.08
        cp = CutoffPressure(m, lam)
        c = m / (m - 1)
        # lower band right end: p and derivatives at 2 lam
        r = 2 * lam
        assert cp.value(r) == pytest.approx(c * r ** (m - 1), rel=1e-11)
        assert cp.prime(r) == pytest.approx(m * r ** (m - 2), rel=1e-9)
        assert cp.second(r) == pytest.approx(m * (m - 2) * r ** (m - 3), rel=1e-7)
        # upper band right end: flat cap
        r = 2 / lam
        assert cp.value(r) == pytest.approx(c * r ** (m - 1), rel=1e-12)
        assert cp.prime(r) == 0.0
