import math

import numpy as np
import pytest
from scipy import stats

from photonlab.analytic import (BlinkModel, DetectorModel, EmitterModel,
                                ExcitationClock, coherence_time)
from photonlab.correlate import (CorrConfig, cross_correlate,
                                 hom_visibility_windowed, integrate_peaks,
                                 poisson_level)
from photonlab.simulate import (PhotonEvent, PhotonEvents, SimConfig,
                                TimeTagStream, apply_detector, emit_photons,
                                route_hbt, route_hom, run_experiment,
                                simulate_blink_trace)
from conftest import A_BLINK, REP, T1, T2_STAR, T_BLINK


class TestBlinkTrace:
    def test_no_blinking_all_on(self):
        clock = ExcitationClock(REP, 5000)
        trace = simulate_blink_trace(clock, BlinkModel(0.0, 1.0), seed=1)
        assert trace.all()

    def test_stationary_on_fraction(self, paper_blink):
        clock = ExcitationClock(REP, 2_000_000)
        trace = simulate_blink_trace(clock, paper_blink, seed=2)
        beta = 1 / (1 + A_BLINK)
        # correlation time ~38.5 pulses shrinks the effective sample size
        n_eff = clock.n_pulses / (2 * T_BLINK / REP)
        se = math.sqrt(beta * (1 - beta) / n_eff)
        assert abs(trace.mean() - beta) < 5 * se

    def test_autocorrelation_time(self, paper_blink):
        clock = ExcitationClock(REP, 2_000_000)
        trace = simulate_blink_trace(clock, paper_blink, seed=3)
        x = trace.astype(float) - trace.mean()
        var = np.dot(x, x) / x.size
        lags = np.arange(1, 100)
        acf = np.array([np.dot(x[:-k], x[k:]) / ((x.size - k) * var) for k in lags])
        slope = np.polyfit(lags, np.log(np.maximum(acf, 1e-9)), 1)[0]
        tau_pulses = -1.0 / slope
        assert tau_pulses * REP == pytest.approx(T_BLINK, rel=0.10)

    def test_deterministic(self, paper_blink):
        clock = ExcitationClock(REP, 100_000)
        a = simulate_blink_trace(clock, paper_blink, seed=9)
        b = simulate_blink_trace(clock, paper_blink, seed=9)
        np.testing.assert_array_equal(a, b)
        c = simulate_blink_trace(clock, paper_blink, seed=10)
        assert not np.array_equal(a, c)


class TestEmitPhotons:
    def test_no_excitation_empty(self):
        clock = ExcitationClock(REP, 10_000)
        emitter = EmitterModel(t1=T1, excitation_prob=0.0)
        photons = emit_photons(np.ones(10_000, bool), emitter, clock, seed=4)
        assert len(photons) == 0

    def test_offset_mean(self):
        clock = ExcitationClock(REP, 2_000_000)
        emitter = EmitterModel(t1=T1, excitation_prob=0.7)
        photons = emit_photons(np.ones(clock.n_pulses, bool), emitter, clock, seed=5)
        assert len(photons) > 1_000_000
        se = T1 / math.sqrt(len(photons))
        assert photons.emit_offset.mean() == pytest.approx(T1, abs=5 * se)

    def test_no_contamination_single_photon_per_pulse(self):
        clock = ExcitationClock(REP, 300_000)
        emitter = EmitterModel(t1=T1, excitation_prob=0.9)
        photons = emit_photons(np.ones(clock.n_pulses, bool), emitter, clock, seed=6)
        assert not photons.distinguishable.any()
        assert np.unique(photons.pulse_index).size == len(photons)

    def test_contamination_rate_and_ordering(self):
        clock = ExcitationClock(REP, 400_000)
        emitter = EmitterModel(t1=T1, excitation_prob=0.8, contamination_prob=0.05)
        photons = emit_photons(np.ones(clock.n_pulses, bool), emitter, clock, seed=7)
        n_primary = (~photons.distinguishable).sum()
        n_extra = photons.distinguishable.sum()
        se = math.sqrt(0.05 * n_primary)
        assert abs(n_extra - 0.05 * n_primary) < 5 * se
        # photons sorted by pulse; contamination photon follows its primary
        assert np.all(np.diff(photons.pulse_index) >= 0)
        same = np.flatnonzero(np.diff(photons.pulse_index) == 0)
        assert not photons.distinguishable[same].any()
        assert photons.distinguishable[same + 1].all()

    def test_off_pulses_emit_nothing(self):
        clock = ExcitationClock(REP, 50_000)
        trace = np.zeros(clock.n_pulses, bool)
        trace[::7] = True
        emitter = EmitterModel(t1=T1, excitation_prob=1.0)
        photons = emit_photons(trace, emitter, clock, seed=8)
        assert trace[photons.pulse_index].all()

    def test_sequence_protocol(self):
        events = PhotonEvents([3, 4], [1.5, 2.5], [False, True])
        assert len(events) == 2
        assert events[1] == PhotonEvent(4, 2.5, True)
        assert [e.pulse_index for e in events] == [3, 4]


class TestApplyDetector:
    def test_identity(self):
        tags = np.array([0, 100, 5000], float)
        out = apply_detector(tags, DetectorModel(), total_span=1e6, seed=1)
        np.testing.assert_array_equal(out.tags, tags.astype(np.uint64))

    def test_efficiency_thinning(self):
        tags = np.arange(1_000_000, dtype=float) * 100
        out = apply_detector(tags, DetectorModel(efficiency=0.5),
                             total_span=1e8, seed=2)
        assert abs(len(out) / 1_000_000 - 0.5) < 0.002

    def test_jitter_broadens_comb_to_irf_fwhm(self):
        rep = int(REP)
        tags = np.arange(100_000, dtype=float) * rep
        out = apply_detector(tags, DetectorModel(irf_sigma=16.14),
                             total_span=100_000 * REP, seed=3)
        phase = (out.tags.astype(np.int64) + rep // 2) % rep - rep // 2
        fwhm = 2 * math.sqrt(2 * math.log(2)) * phase.std()
        assert fwhm == pytest.approx(38.0, abs=1.0)

    def test_dark_counts(self):
        span = 1e12  # one second
        out = apply_detector(np.array([], float),
                             DetectorModel(dark_rate=5000.0), span, seed=4)
        assert abs(len(out) - 5000) < 5 * math.sqrt(5000)

    def test_dead_time_filter(self):
        tags = np.array([0, 50, 120, 120, 10_000], float)
        out = apply_detector(tags, DetectorModel(dead_time=100.0),
                             total_span=1e5, seed=5)
        np.testing.assert_array_equal(out.tags, [0, 120, 10_000])

    def test_equal_tags_collapse_without_dead_time(self):
        tags = np.array([7, 7, 9], float)
        out = apply_detector(tags, DetectorModel(), total_span=100, seed=6)
        np.testing.assert_array_equal(out.tags, [7, 9])

    def test_stream_strictly_sorted(self):
        rng = np.random.default_rng(7)
        tags = np.sort(rng.uniform(0, 1e7, 20_000))
        det = DetectorModel(efficiency=0.9, irf_sigma=16.0, dark_rate=1e6,
                            dead_time=30.0)
        out = apply_detector(tags, det, total_span=1e7, seed=8)
        diffs = np.diff(out.tags.astype(np.int64))
        assert np.all(diffs > 0)
        assert np.all(diffs >= 30)


class TestRouting:
    def test_hbt_no_same_pulse_coincidences(self, ideal_detectors):
        clock = ExcitationClock(REP, 200_000)
        emitter = EmitterModel(t1=T1, excitation_prob=1.0)
        photons = emit_photons(np.ones(clock.n_pulses, bool), emitter, clock, seed=9)
        s0, s1 = route_hbt(photons, ideal_detectors, clock, seed=10)
        h = cross_correlate(s0, s1, CorrConfig(bin_width=50, window=int(2 * REP)))
        table = integrate_peaks(h, REP, 3000, 1)
        assert table.area_of(0) == 0
        assert table.area_of(1) > 0

    def test_hbt_rate_formula(self, paper_blink, ideal_detectors):
        clock = ExcitationClock(REP, 1_000_000)
        emitter = EmitterModel(t1=T1, excitation_prob=0.5, blink=paper_blink)
        cfg = SimConfig(emitter, clock, "hbt", ideal_detectors, seed=11)
        s0, s1 = run_experiment(cfg)
        expected = clock.n_pulses * (1 / (1 + A_BLINK)) * 0.5 * 1.0 / 2
        assert len(s0) == pytest.approx(expected, rel=0.02)
        assert len(s1) == pytest.approx(expected, rel=0.02)

    def test_hom_full_dephasing_protection(self, ideal_detectors):
        # infinite t2_star: same-slot indistinguishable pairs never split
        clock = ExcitationClock(REP, 300_000)
        emitter = EmitterModel(t1=T1, t2_star=math.inf, excitation_prob=0.8)
        cfg = SimConfig(emitter, clock, "hom_co", ideal_detectors, seed=12)
        s0, s1 = run_experiment(cfg)
        h = cross_correlate(s0, s1, CorrConfig(bin_width=50, window=int(2 * REP)))
        assert integrate_peaks(h, REP, 3000, 1).area_of(0) == 0

    def test_hom_cross_center_half_poissonian(self, ideal_detectors):
        clock = ExcitationClock(REP, 600_000)
        emitter = EmitterModel(t1=T1, excitation_prob=0.6)
        cfg = SimConfig(emitter, clock, "hom_cross", ideal_detectors, seed=13)
        s0, s1 = run_experiment(cfg)
        h = cross_correlate(s0, s1, CorrConfig(bin_width=50, window=int(22 * REP)))
        table = integrate_peaks(h, REP, 3000, 20)
        level = poisson_level(table, 2)
        center = table.area_of(0) / level.value
        se = 0.5 * math.sqrt(1 / max(table.area_of(0), 1)
                             + (level.sigma / level.value) ** 2)
        assert abs(center - 0.5) < 4 * se

    def test_hom_co_center_shape_chi_square(self, ideal_detectors):
        # jitter-free run: the center histogram must match the analytic
        # dip shape with V = 1 and T2 from the dephasing relation
        clock = ExcitationClock(REP, 1_000_000)
        emitter = EmitterModel(t1=T1, t2_star=T2_STAR, excitation_prob=0.6)
        cfg = SimConfig(emitter, clock, "hom_co", ideal_detectors, seed=14)
        s0, s1 = run_experiment(cfg)
        h = cross_correlate(s0, s1,
                            CorrConfig(bin_width=50, window=3000)).restrict(1500)
        y = h.counts.astype(float)
        edges = (np.arange(-h.n_half, h.n_half + 2) - 0.5) * h.bin_width
        t2 = coherence_time(T1, T2_STAR)

        def ramp(t, tau):
            return np.sign(t) * tau * (1.0 - np.exp(-np.abs(t) / tau))

        expected = (ramp(edges[1:], T1) - ramp(edges[:-1], T1)) \
            - (ramp(edges[1:], t2 / 2) - ramp(edges[:-1], t2 / 2))
        expected *= y.sum() / expected.sum()
        usable = expected >= 5
        chi2 = (((y - expected) ** 2) / expected)[usable].sum()
        dof = int(usable.sum()) - 1
        assert stats.chi2.sf(chi2, dof) > 0.01

    def test_arm_transmission_knob(self, ideal_detectors):
        clock = ExcitationClock(REP, 200_000)
        emitter = EmitterModel(t1=T1, excitation_prob=1.0)
        photons = emit_photons(np.ones(clock.n_pulses, bool), emitter, clock, seed=15)
        s0, s1 = route_hom(photons, "cross", ideal_detectors, clock, seed=16,
                           t2_star=T2_STAR, arm_transmission=(1.0, 0.0))
        # long arm blocked: half the photons survive on average
        assert (len(s0) + len(s1)) == pytest.approx(len(photons) / 2, rel=0.02)

    def test_polarization_validation(self, ideal_detectors):
        clock = ExcitationClock(REP, 10)
        photons = PhotonEvents([], [], [])
        with pytest.raises(ValueError):
            route_hom(photons, "diagonal", ideal_detectors, clock, seed=1)


class TestRunExperiment:
    def test_deterministic_and_parallel_identical(self, paper_blink, paper_detectors):
        emitter = EmitterModel(t1=T1, t2_star=T2_STAR, excitation_prob=0.5,
                               contamination_prob=0.01, blink=paper_blink)
        clock = ExcitationClock(REP, 2_500_000)  # spans 3 emission blocks
        for setup in ("hbt", "hom_co"):
            cfg = SimConfig(emitter, clock, setup, paper_detectors, seed=17)
            a0, a1 = run_experiment(cfg)
            b0, b1 = run_experiment(cfg)
            c0, c1 = run_experiment(cfg, workers=3)
            np.testing.assert_array_equal(a0.tags, b0.tags)
            np.testing.assert_array_equal(a1.tags, b1.tags)
            np.testing.assert_array_equal(a0.tags, c0.tags)
            np.testing.assert_array_equal(a1.tags, c1.tags)

    def test_seed_changes_stream(self, paper_detectors):
        emitter = EmitterModel(t1=T1, excitation_prob=0.5)
        clock = ExcitationClock(REP, 100_000)
        a0, _ = run_experiment(SimConfig(emitter, clock, "hbt", paper_detectors, seed=1))
        b0, _ = run_experiment(SimConfig(emitter, clock, "hbt", paper_detectors, seed=2))
        assert not np.array_equal(a0.tags, b0.tags)

    def test_visibility_monotone_in_dephasing_time(self, ideal_detectors):
        # same seed couples all non-interference randomness, so the
        # windowed visibility is monotone in t2_star by construction
        clock = ExcitationClock(REP, 400_000)
        cfg = CorrConfig(bin_width=50, window=int(22 * REP))
        visibilities = []
        for t2_star in (300.0, 1470.0, 30_000.0):
            emitter = EmitterModel(t1=T1, t2_star=t2_star, excitation_prob=0.6)
            co = run_experiment(SimConfig(emitter, clock, "hom_co",
                                          ideal_detectors, seed=18))
            cross = run_experiment(SimConfig(emitter, clock, "hom_cross",
                                             ideal_detectors, seed=19))
            tco = integrate_peaks(cross_correlate(*co, cfg), REP, 3000, 20)
            tcr = integrate_peaks(cross_correlate(*cross, cfg), REP, 3000, 20)
            visibilities.append(hom_visibility_windowed(tco, tcr, 2).value)
        assert visibilities[0] < visibilities[1] < visibilities[2]

    def test_streams_sorted_and_typed(self, paper_detectors):
        emitter = EmitterModel(t1=T1, excitation_prob=0.5)
        clock = ExcitationClock(REP, 50_000)
        s0, s1 = run_experiment(SimConfig(emitter, clock, "hom_cross",
                                          paper_detectors, seed=20))
        for s in (s0, s1):
            assert s.tags.dtype == np.uint64
            assert np.all(np.diff(s.tags.astype(np.int64)) > 0)

    def test_config_validation(self):
        emitter = EmitterModel(t1=T1)
        with pytest.raises(ValueError):
            SimConfig(emitter, ExcitationClock(REP, 10), "ghz", seed=0)
        with pytest.raises(ValueError):
            SimConfig(emitter, ExcitationClock(REP, 10), "hbt", seed=-1)

    def test_timetagstream_validation(self):
        with pytest.raises(ValueError):
            TimeTagStream(0, np.array([5, 5], np.uint64))
