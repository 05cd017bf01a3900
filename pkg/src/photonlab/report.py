"""The end-to-end pipeline: simulate HBT and HOM acquisitions, correlate
them, integrate peaks, run every model fit and assemble the headline
quantities (lifetime, coherence and dephasing times, both g2
normalizations, blinking parameters, efficiency bound, both visibility
estimates, Purcell factor) into one canonical report document.

Each quantity carries a one-standard-error sigma. The document is
deterministic for a given configuration and seed; provenance records
the tool version, the seed and the timestamp of the input file, never
the wall clock.
"""

from __future__ import annotations

import datetime
import math
from contextlib import contextmanager
from pathlib import Path

from ._version import __version__
from .analytic import Measured, purcell_factor, quantum_efficiency_bound
from .config import RunConfig
from .correlate import (cross_correlate, default_far_min, g2_poisson,
                        g2_sidepeak, hom_visibility_windowed, integrate_peaks,
                        pulse_phase_histogram)
from .fitting import (fit_blinking, fit_hom_center, fit_lifetime,
                      visibility_from_fits)
from .rng import STAGE_RUN, child_seed
from .simulate import run_experiment


class ReportStageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"report stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str):
    try:
        yield
    except ReportStageError:
        raise
    except Exception as exc:
        raise ReportStageError(name, exc) from exc


def _mdict(m: Measured) -> dict:
    return {"value": float(m.value), "sigma": float(m.sigma)}


def _dephasing_measured(t1: Measured, t2: Measured) -> Measured:
    """T2* from T1 and T2 with first-order error propagation."""
    inv = 1.0 / t2.value - 0.5 / t1.value
    if inv <= 0:
        return Measured(math.inf, math.inf)
    t2s = 1.0 / inv
    var = t2s**4 * ((t2.sigma / t2.value**2) ** 2
                    + (0.5 * t1.sigma / t1.value**2) ** 2)
    return Measured(t2s, math.sqrt(var))


def run_report(cfg: RunConfig, config_path=None, workers: int = 1) -> dict:
    """Run the full simulate -> correlate -> fit chain and return the
    report document as a plain dict."""
    rep = cfg.clock.rep_period
    corr = cfg.corr
    m_range = cfg.m_range
    if m_range is None:
        m_range = int((corr.window - corr.peak_window / 2) // rep)
    seeds = {s: child_seed(cfg.seed, STAGE_RUN, k)
             for k, s in enumerate(("hbt", "hom_co", "hom_cross"))}

    with _stage("simulate-hbt"):
        hbt0, hbt1 = run_experiment(cfg.sim_config("hbt", seeds["hbt"]),
                                    workers=workers)
    with _stage("correlate-hbt"):
        hist = cross_correlate(hbt0, hbt1, corr, workers=workers)
        peaks = integrate_peaks(hist, rep, corr.peak_window, m_range)

    with _stage("fit-lifetime"):
        decay = pulse_phase_histogram(hbt0, rep, cfg.decay_bin_width)
        life = fit_lifetime(decay, cfg.detectors[0].irf_sigma)
        t1 = life.measured("t1")

    with _stage("fit-blinking"):
        blink_fit = fit_blinking(peaks, rep)
        a_blink = blink_fit.measured("a_blink")
        t_blink = blink_fit.measured("t_blink")
        eta = quantum_efficiency_bound(a_blink)

    far_min = cfg.far_min
    if far_min is None:
        t_blink_est = t_blink.value if "t_blink_unidentifiable" not in blink_fit.flags else None
        far_min = min(default_far_min(t_blink_est, rep), max(m_range - 4, 1))

    with _stage("g2"):
        g2s = g2_sidepeak(peaks)
        g2p = g2_poisson(peaks, far_min)

    with _stage("simulate-hom"):
        co0, co1 = run_experiment(cfg.sim_config("hom_co", seeds["hom_co"]),
                                  workers=workers)
        cr0, cr1 = run_experiment(cfg.sim_config("hom_cross", seeds["hom_cross"]),
                                  workers=workers)
    with _stage("correlate-hom"):
        co_hist = cross_correlate(co0, co1, corr, workers=workers)
        cr_hist = cross_correlate(cr0, cr1, corr, workers=workers)
        co_peaks = integrate_peaks(co_hist, rep, corr.peak_window, m_range)
        cr_peaks = integrate_peaks(cr_hist, rep, corr.peak_window, m_range)

    with _stage("hom-windowed"):
        v_windowed = hom_visibility_windowed(co_peaks, cr_peaks, far_min)

    with _stage("fit-hom"):
        half = int(rep // 2)
        co_fit = fit_hom_center(co_hist.restrict(half), t1.value)
        cr_fit = fit_hom_center(cr_hist.restrict(half), t1.value,
                                visibility_fixed=0.0)
        t2 = co_fit.measured("t2")
        cross_area = Measured(
            2.0 * t1.value * cr_fit["amplitude"],
            2.0 * t1.value * cr_fit.error("amplitude"),
        )
        v_fit = visibility_from_fits(co_fit, cross_area)

    with _stage("derive"):
        t2_star = _dephasing_measured(t1, t2)
        purcell = purcell_factor(cfg.t1_ref, t1)

    provenance = {
        "tool": "photonlab",
        "version": __version__,
        "seed": int(cfg.seed),
        "config_path": str(config_path) if config_path else None,
        "config_mtime": _mtime_iso(config_path),
    }
    return {
        "inputs": cfg.to_dict(),
        "t1": _mdict(t1),
        "t2": _mdict(t2),
        "t2_star": _mdict(t2_star) if math.isfinite(t2_star.value) else
        {"value": "inf", "sigma": "inf"},
        "g2_sidepeak": _mdict(g2s),
        "g2_poisson": _mdict(g2p),
        "a_blink": _mdict(a_blink),
        "t_blink": _mdict(t_blink),
        "eta_bound": _mdict(eta),
        "v_hom_windowed": _mdict(v_windowed),
        "v_hom_fit": _mdict(v_fit),
        "purcell": _mdict(purcell),
        "provenance": provenance,
    }


def _mtime_iso(path) -> str | None:
    if not path:
        return None
    try:
        ts = Path(path).stat().st_mtime
    except OSError:
        return None
    return datetime.datetime.fromtimestamp(ts, datetime.timezone.utc).isoformat()
