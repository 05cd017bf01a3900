import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from photonlab.analytic import (BlinkModel, DetectorModel, EmitterModel,
                                ExcitationClock, Measured, VoigtWidths,
                                blinking_envelope, coherence_time,
                                expected_peak_pattern, hom_center_model,
                                pure_dephasing_time, purcell_factor,
                                quantum_efficiency_bound, voigt_fwhm,
                                voigt_profile, windowed_visibility)
from conftest import T1, T2_STAR


class TestCoherenceTime:
    def test_device_point(self):
        t2 = coherence_time(257.5, 1470.0)
        assert t2 == pytest.approx(381.3853904, abs=1e-6)
        # fitted band 381 +- 22
        assert 359.0 < t2 < 403.0

    def test_fourier_limit(self):
        assert coherence_time(257.5, math.inf) == 515.0

    def test_harmonic_form(self):
        assert coherence_time(100.0, 100.0) == pytest.approx(200.0 / 3.0, rel=1e-12)

    @pytest.mark.parametrize("t1,t2s", [(0, 100), (-5, 100), (100, 0), (100, -1)])
    def test_domain(self, t1, t2s):
        with pytest.raises(ValueError):
            coherence_time(t1, t2s)

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            t1 = rng.uniform(10, 2000)
            xs = np.sort(rng.uniform(1, 1e5, 2))
            lo, hi = (coherence_time(t1, x) for x in xs)
            assert lo < hi < 2 * t1


class TestPureDephasing:
    def test_device_point(self):
        assert pure_dephasing_time(257.5, 381.4) == pytest.approx(1470.217, abs=0.01)
        # reported value 1470 +- 320
        assert abs(pure_dephasing_time(257.5, 381.4) - 1470) < 320

    def test_fourier(self):
        assert pure_dephasing_time(257.5, 515.0) == math.inf

    def test_round_trip_inverse(self):
        assert pure_dephasing_time(100.0, coherence_time(100.0, 100.0)) == pytest.approx(100.0, rel=1e-9)
        rng = np.random.default_rng(1)
        for _ in range(300):
            t1 = rng.uniform(10, 3000)
            t2s = rng.uniform(1, 1e6)
            t2 = coherence_time(t1, t2s)
            assert pure_dephasing_time(t1, t2) == pytest.approx(t2s, rel=1e-12)

    def test_above_fourier_limit_rejected(self):
        with pytest.raises(ValueError):
            pure_dephasing_time(257.5, 520.0)


class TestHomCenterModel:
    def test_zero_delay_full_visibility(self):
        assert hom_center_model(0.0, 123.0, 1.0, 257.5, 381.4) == 0.0

    def test_symmetry(self):
        taus = np.linspace(1, 2000, 50)
        np.testing.assert_allclose(
            hom_center_model(taus, 2.0, 0.8, 257.5, 381.4),
            hom_center_model(-taus, 2.0, 0.8, 257.5, 381.4),
        )

    def test_dephased_wings(self):
        # the dip term decays twice as fast, so the wings approach the
        # bare lifetime envelope
        tau = 8000.0
        value = hom_center_model(tau, 3.0, 0.9, 257.5, 381.4)
        assert value == pytest.approx(3.0 * math.exp(-tau / 257.5), rel=1e-4)

    def test_integral_matches_closed_form(self):
        a, t1, t2 = 2.5, 257.5, 381.4
        integral, err = quad(lambda t: hom_center_model(t, a, 1.0, t1, t2),
                             -40 * t1, 40 * t1, limit=200)
        assert integral == pytest.approx(a * (2 * t1 - t2), rel=1e-8)

    def test_area_ratio_reproduces_windowed_visibility(self):
        t1, t2 = 257.5, 381.3853904
        dip, _ = quad(lambda t: hom_center_model(t, 1.0, 1.0, t1, t2),
                      -40 * t1, 40 * t1, limit=200)
        envelope, _ = quad(lambda t: math.exp(-abs(t) / t1), -40 * t1, 40 * t1,
                           limit=200)
        assert 1.0 - dip / envelope == pytest.approx(
            windowed_visibility(t1, t2), abs=1e-6)


class TestWindowedVisibility:
    def test_fit_band_point(self):
        assert windowed_visibility(257.5, 380.8) == pytest.approx(0.73942, abs=1e-4)

    def test_purcell_projection(self):
        v = windowed_visibility(48.0, coherence_time(48.0, 1470.0))
        assert v == pytest.approx(0.93870, abs=1e-4)
        assert v > 0.935

    def test_fourier_limited(self):
        assert windowed_visibility(100.0, 200.0) == 1.0

    def test_dephasing_form_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            t1 = rng.uniform(5, 2000)
            t2s = rng.uniform(1, 1e6)
            v = windowed_visibility(t1, coherence_time(t1, t2s))
            assert v == pytest.approx(t2s / (t2s + 2 * t1), rel=1e-12)

    def test_domain(self):
        with pytest.raises(ValueError):
            windowed_visibility(100.0, 201.0)


class TestPurcell:
    def test_device_point(self):
        f = purcell_factor(Measured(1210, 115), Measured(257.5, 0.2))
        assert f.value == pytest.approx(4.699, abs=0.005)
        assert f.sigma == pytest.approx(0.4466, abs=0.005)

    def test_identical(self):
        assert purcell_factor(Measured(500, 0), Measured(500, 0)) == Measured(1.0, 0.0)

    def test_exact_ratio(self):
        assert purcell_factor(Measured(2000, 0), Measured(500, 0)).value == 4.0

    def test_domain(self):
        with pytest.raises(ValueError):
            purcell_factor(Measured(0.0, 0.0), Measured(1.0, 0.0))


class TestBlinkingEnvelope:
    def test_device_point(self):
        assert blinking_envelope(1, 1.0, 3.70, 506000.0, 13158.0) == pytest.approx(
            4.60503, abs=1e-4)

    def test_uncorrelated_limit(self):
        assert blinking_envelope(10_000, 2.0, 3.70, 506000.0, 13158.0) == pytest.approx(
            2.0, rel=1e-9)

    def test_no_blinking(self):
        assert blinking_envelope(7, 5.0, 0.0, 1000.0, 13158.0) == 5.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        m = np.arange(-40, 41)
        for _ in range(50):
            c = rng.uniform(0.01, 100)
            base = blinking_envelope(m, 1.3, 2.7, 5e5, 13158.0)
            scaled = blinking_envelope(m, 1.3, 2.7, 5e5 * c, 13158.0 * c)
            np.testing.assert_allclose(base, scaled, rtol=1e-12)

    def test_monotone_in_abs_m(self):
        values = blinking_envelope(np.arange(1, 200), 1.0, 3.7, 5e5, 13158.0)
        assert np.all(np.diff(values) < 0)

    def test_domain(self):
        with pytest.raises(ValueError):
            blinking_envelope(1, 1.0, 3.7, 0.0, 13158.0)


class TestEfficiencyBound:
    def test_device_point(self):
        eta = quantum_efficiency_bound(Measured(3.70, 0.02))
        assert eta.value == pytest.approx(0.21277, abs=1e-4)
        assert eta.sigma == pytest.approx(0.000905, abs=5e-5)

    def test_blink_free(self):
        assert quantum_efficiency_bound(Measured(0, 0)) == Measured(1.0, 0.0)

    def test_symmetric_telegraph(self):
        assert quantum_efficiency_bound(Measured(1, 0)).value == 0.5

    def test_domain(self):
        with pytest.raises(ValueError):
            quantum_efficiency_bound(Measured(-0.1, 0))


class TestVoigt:
    def test_fwhm_device_point(self):
        f = voigt_fwhm(VoigtWidths(12.0, 26.2))
        assert f == pytest.approx(33.2038, abs=1e-3)
        assert 33.0 <= f <= 33.8

    def test_fwhm_pure_limits(self):
        assert voigt_fwhm(VoigtWidths(10.0, 0.0)) == pytest.approx(10.0, rel=2e-4)
        assert voigt_fwhm(VoigtWidths(0.0, 17.0)) == 17.0

    def test_profile_gaussian_limit(self):
        x = np.linspace(-50, 50, 401)
        sigma = 26.2 / (2 * math.sqrt(2 * math.log(2)))
        np.testing.assert_allclose(
            voigt_profile(x, 0.0, VoigtWidths(0.0, 26.2), 3.0),
            3.0 * np.exp(-0.5 * (x / sigma) ** 2), rtol=1e-12)

    def test_profile_lorentzian_limit(self):
        x = np.linspace(-50, 50, 401)
        g = 6.0
        np.testing.assert_allclose(
            voigt_profile(x, 0.0, VoigtWidths(12.0, 0.0), 2.0),
            2.0 * g * g / (x * x + g * g), rtol=1e-12)

    def test_profile_peak_and_symmetry(self):
        w = VoigtWidths(12.0, 26.2)
        assert voigt_profile(5.0, 5.0, w, 7.5) == pytest.approx(7.5, rel=1e-12)
        x = np.linspace(0.1, 80, 64)
        np.testing.assert_allclose(voigt_profile(5.0 + x, 5.0, w, 1.0),
                                   voigt_profile(5.0 - x, 5.0, w, 1.0), rtol=1e-12)

    def test_half_maximum_separation_matches_fwhm(self):
        w = VoigtWidths(12.0, 26.2)

        def half(x):
            return voigt_profile(x, 0.0, w, 1.0) - 0.5

        hi = brentq(half, 0.0, 200.0, xtol=1e-10)
        lo = brentq(half, -200.0, 0.0, xtol=1e-10)
        assert hi - lo == pytest.approx(voigt_fwhm(w), rel=1e-3)


def enumerated_pattern(setup: str, m: int, hom_vis: float) -> float:
    """Independent oracle: enumerate, for every pulse separation of a
    stationary one-photon-per-pulse stream, the four arm combinations of
    an ordered photon pair and the probability that the pair lands on
    different detectors; normalize the resulting rate per slot
    separation to a far peak."""
    rate: dict[int, float] = {}
    for delta in range(-12, 13):
        if delta == 0:
            continue  # an ideal pulse carries a single photon
        for arm_p in (0, 1):
            for arm_q in (0, 1):
                slot_diff = delta + arm_q - arm_p
                if slot_diff == 0:
                    p_diff = 0.5 * (1 - hom_vis) if setup == "hom_co" else 0.5
                    port = 0.5 * p_diff  # which photon on which channel
                else:
                    port = 0.25  # independent 50:50 routing
                rate[slot_diff] = rate.get(slot_diff, 0.0) + 0.25 * port
    return rate[m] / rate[7]


class TestExpectedPeakPattern:
    def test_hom_cross_quotes(self):
        assert expected_peak_pattern("hom_cross", 0) == pytest.approx(0.5)
        assert expected_peak_pattern("hom_cross", 1) == pytest.approx(0.75)
        assert expected_peak_pattern("hom_cross", -1) == pytest.approx(0.75)

    def test_hbt_center(self):
        assert expected_peak_pattern("hbt", 0, g2_zero=0.0) == 0.0
        assert expected_peak_pattern("hbt", 0, g2_zero=0.031) == 0.031
        assert expected_peak_pattern("hbt", 3) == 1.0

    def test_hom_co_far(self):
        assert expected_peak_pattern("hom_co", 2) == pytest.approx(1.0)
        assert expected_peak_pattern("hom_co", -2) == pytest.approx(1.0)

    def test_hom_co_center_scales_with_visibility(self):
        assert expected_peak_pattern("hom_co", 0, hom_vis=1.0) == pytest.approx(0.0)
        assert expected_peak_pattern("hom_co", 0, hom_vis=0.74) == pytest.approx(0.13)

    @pytest.mark.parametrize("setup", ["hom_co", "hom_cross"])
    @pytest.mark.parametrize("m", range(-4, 5))
    def test_matches_enumeration_oracle(self, setup, m):
        for vis in (1.0, 0.74, 0.2):
            assert expected_peak_pattern(setup, m, hom_vis=vis) == pytest.approx(
                enumerated_pattern(setup, m, vis), rel=1e-12)

    def test_far_peaks_reach_unity_and_center_values_stable(self):
        for m in (2, 5, 11):
            assert expected_peak_pattern("hom_cross", m) == 1.0

    def test_unknown_setup(self):
        with pytest.raises(ValueError):
            expected_peak_pattern("mzi", 0)


class TestDomainTypes:
    def test_emitter_validation(self):
        with pytest.raises(ValueError):
            EmitterModel(t1=-1.0)
        with pytest.raises(ValueError):
            EmitterModel(t1=100.0, excitation_prob=1.5)
        emitter = EmitterModel(t1=T1, t2_star=T2_STAR)
        assert emitter.t2 == pytest.approx(381.3853904, abs=1e-6)

    def test_blink_on_probability(self):
        assert BlinkModel(3.70, 1.0).on_probability == pytest.approx(1 / 4.70)
        with pytest.raises(ValueError):
            BlinkModel(-0.1, 1.0)

    def test_detector_validation(self):
        assert DetectorModel(irf_sigma=16.14).irf_fwhm == pytest.approx(38.0, abs=0.01)
        with pytest.raises(ValueError):
            DetectorModel(efficiency=1.2)

    def test_clock(self):
        clock = ExcitationClock(13158.0, 1000)
        assert clock.span == 13158.0 * 1000
        with pytest.raises(ValueError):
            ExcitationClock(0.0, 10)

    def test_measured_sigma_nonnegative(self):
        with pytest.raises(ValueError):
            Measured(1.0, -0.5)
