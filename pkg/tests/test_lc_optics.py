import numpy as np
import pytest

from slmspec import synthetic
from slmspec.errors import DataError, NumericError, UsageError
from slmspec.lc_optics import (FilterBank, GammaCurve, RetardanceCurve,
                               build_filter_bank, design_gamma_curve,
                               fit_retardance_from_spectrum, jones_transmittance,
                               lc_transmittance, load_filter_bank,
                               load_gamma_curve, load_retardance_curve,
                               save_filter_bank, save_gamma_curve,
                               save_retardance_curve)


class TestTransmittance:
    def test_integer_wave_dark(self):
        assert lc_transmittance(1000.0, 500.0) == pytest.approx(0.0, abs=1e-12)

    def test_half_wave_bright(self):
        assert lc_transmittance(750.0, 500.0) == pytest.approx(1.0, abs=1e-12)

    def test_quarter_point(self):
        assert lc_transmittance(625.0, 500.0) == pytest.approx(0.5, abs=1e-12)

    def test_zero_retardance_blocks_everything(self):
        lam = np.linspace(380, 1010, 64)
        assert np.allclose(lc_transmittance(0.0, lam), 0.0, atol=1e-15)

    def test_bounds_and_periodicity(self, rng):
        ret = rng.uniform(0, 4000, 300)
        lam = rng.uniform(380, 1010, 300)
        t = lc_transmittance(ret, lam)
        assert np.all((t >= 0) & (t <= 1))
        assert np.allclose(lc_transmittance(ret + lam, lam), t, atol=1e-9)

    def test_sinusoidal_in_wavenumber(self, grid31):
        sigma = grid31.wavenumbers
        ret = 1750.0
        expect = 0.5 * (1 - np.cos(2 * np.pi * ret * sigma))
        assert np.allclose(lc_transmittance(ret, grid31.wavelengths_nm), expect,
                           atol=1e-9)

    def test_input_validation(self):
        with pytest.raises(UsageError):
            lc_transmittance(-1.0, 500.0)
        with pytest.raises(UsageError):
            lc_transmittance(100.0, 0.0)
        with pytest.raises(UsageError):
            lc_transmittance(np.nan, 500.0)


class TestJonesRoute:
    def test_trivial_points_match(self):
        assert jones_transmittance(1000.0, 500.0) == pytest.approx(0.0, abs=1e-12)
        assert jones_transmittance(750.0, 500.0) == pytest.approx(1.0, abs=1e-12)

    def test_matches_closed_form_everywhere(self, rng):
        ret = rng.uniform(0, 5000, 10_000)
        lam = rng.uniform(380, 1010, 10_000)
        diff = np.abs(jones_transmittance(ret, lam) - lc_transmittance(ret, lam))
        assert diff.max() < 1e-12


class TestRetardanceFit:
    def test_recovers_plant(self, dense_grid):
        spec = lc_transmittance(1234.0, dense_grid.wavelengths_nm)
        got = fit_retardance_from_spectrum(spec, dense_grid, 300, 3000, 1.0)
        assert got == pytest.approx(1234.0, abs=0.5)

    def test_boundary_plant(self, dense_grid):
        spec = lc_transmittance(300.0, dense_grid.wavelengths_nm)
        assert fit_retardance_from_spectrum(spec, dense_grid, 300, 3000, 1.0) \
            == pytest.approx(300.0)

    def test_scale_offset_invariance(self, dense_grid):
        spec = 0.35 * lc_transmittance(910.0, dense_grid.wavelengths_nm) + 0.2
        got = fit_retardance_from_spectrum(spec, dense_grid, 300, 3000, 1.0)
        assert got == pytest.approx(910.0, abs=0.5)

    def test_monte_carlo_plants(self, dense_grid, rng):
        for plant in rng.uniform(310, 2990, 25):
            spec = lc_transmittance(plant, dense_grid.wavelengths_nm)
            got = fit_retardance_from_spectrum(spec, dense_grid, 300, 3000, 1.0)
            assert abs(got - plant) <= 0.5

    def test_bad_inputs(self, dense_grid):
        with pytest.raises(DataError):
            fit_retardance_from_spectrum(np.zeros(dense_grid.bands), dense_grid,
                                         300, 3000, 1.0)
        with pytest.raises(UsageError):
            fit_retardance_from_spectrum(np.ones(dense_grid.bands), dense_grid,
                                         3000, 300, 1.0)


class TestGammaDesign:
    def test_linear_curve_gives_identity_ramp(self):
        v = np.linspace(0.0, 4.0, 200)
        curve = RetardanceCurve(v, 2500.0 - 300.0 * v)
        gamma = design_gamma_curve(curve, 0.0, 4.0)
        assert np.allclose(gamma.mapping, np.linspace(0, 4.0, 256), atol=1e-9)

    def test_quadratic_curve_linearized(self, curve):
        gamma = design_gamma_curve(curve, 0.0, synthetic.V_MAX)
        composed = curve.interp(gamma.mapping)
        idx = np.arange(256)
        affine = composed[0] + (composed[255] - composed[0]) / 255.0 * idx
        quantum = abs(gamma.c0_nm_per_index)
        assert np.abs(composed - affine).max() <= quantum
        assert gamma.mapping[0] == 0.0
        assert gamma.mapping[255] == synthetic.V_MAX

    def test_reference_device_slope(self, curve):
        gamma = design_gamma_curve(curve, 0.0, synthetic.V_MAX)
        assert gamma.c0_nm_per_index == pytest.approx((800.0 - 3000.0) / 255.0,
                                                      rel=1e-12)

    def test_increasing_curve_supported(self):
        v = np.linspace(0.0, 4.0, 150)
        curve = RetardanceCurve(v, 900.0 + 120.0 * v ** 2)
        gamma = design_gamma_curve(curve, 0.0, 4.0)
        composed = curve.interp(gamma.mapping)
        assert gamma.c0_nm_per_index > 0
        assert np.all(np.diff(composed) > 0)

    def test_non_monotone_rejected(self):
        v = np.linspace(0, 4, 100)
        wiggly = 2000 + 400 * np.sin(4 * v)
        with pytest.raises(NumericError):
            design_gamma_curve(RetardanceCurve(v, wiggly), 0.0, 4.0)


class TestFilterBank:
    def test_constant_retardance_rows(self, grid31):
        v = np.linspace(0, 4, 64)
        curve = RetardanceCurve(v, np.full(64, 750.0))
        gamma = GammaCurve(np.linspace(0, 4, 256), 0.0, 4.0, 0.0)
        bank = build_filter_bank(gamma, curve, grid31)
        assert np.allclose(bank.transmittance, bank.transmittance[0])
        at500 = lc_transmittance(750.0, 500.0)
        assert at500 == pytest.approx(1.0, abs=1e-12)

    def test_row_retardance_steps_equal_c0(self, curve, grid31):
        gamma = design_gamma_curve(curve, 0.0, synthetic.V_MAX)
        bank = build_filter_bank(gamma, curve, grid31)
        steps = np.diff(bank.retardance_nm)
        assert np.allclose(steps, gamma.c0_nm_per_index, atol=0.05)

    def test_rows_reproduce_formula(self, curve, grid31):
        gamma = design_gamma_curve(curve, 0.0, synthetic.V_MAX)
        bank = build_filter_bank(gamma, curve, grid31, extra_retardance_nm=0.0)
        for r in (0, 17, 128, 255):
            expect = lc_transmittance(bank.retardance_nm[r],
                                      grid31.wavelengths_nm)
            assert np.allclose(bank.transmittance[r], expect, atol=1e-12)

    def test_extra_retardance_raises_oscillation(self, curve, grid31):
        gamma = design_gamma_curve(curve, 0.0, synthetic.V_MAX)
        plain = build_filter_bank(gamma, curve, grid31)
        boosted = build_filter_bank(gamma, curve, grid31,
                                    extra_retardance_nm=5000.0)

        def crossings(bank):
            sg = np.sign(2.0 * bank.transmittance - 1.0)
            return np.sum(np.abs(np.diff(sg, axis=1)) > 0)

        assert crossings(boosted) > crossings(plain)

    def test_negative_total_retardance_rejected(self, curve, grid31):
        gamma = design_gamma_curve(curve, 0.0, synthetic.V_MAX)
        with pytest.raises(UsageError):
            build_filter_bank(gamma, curve, grid31, extra_retardance_nm=-5000.0)

    def test_csv_round_trip(self, curve, grid31, tmp_path):
        gamma = design_gamma_curve(curve, 0.0, synthetic.V_MAX)
        bank = build_filter_bank(gamma, curve, grid31, extra_retardance_nm=120.0)
        path = tmp_path / "bank.csv"
        save_filter_bank(bank, path)
        again = load_filter_bank(path)
        assert np.array_equal(bank.transmittance, again.transmittance)
        assert again.extra_retardance_nm == 120.0
        assert np.array_equal(bank.retardance_nm, again.retardance_nm)
        assert again.grid == bank.grid


class TestCurveIo:
    def test_retardance_round_trip(self, tmp_path):
        v = np.linspace(0, 4.2, 40)
        curve = RetardanceCurve(v, 3000 - 500 * v, control_kind="volts")
        path = tmp_path / "ret.csv"
        save_retardance_curve(curve, path)
        again = load_retardance_curve(path)
        assert np.array_equal(curve.control, again.control)
        assert np.array_equal(curve.retardance_nm, again.retardance_nm)
        assert again.control_kind == "volts"

    def test_gamma_round_trip(self, curve, tmp_path):
        gamma = design_gamma_curve(curve, 0.0, synthetic.V_MAX)
        path = tmp_path / "gamma.csv"
        save_gamma_curve(gamma, path)
        again = load_gamma_curve(path)
        assert np.array_equal(gamma.mapping, again.mapping)
        assert again.c0_nm_per_index == gamma.c0_nm_per_index
