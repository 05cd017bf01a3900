"""Shared constants and fixtures for the test suite.

The emitter parameter set used throughout matches the device the
package models: T1 = 257.5 ps, T2* = 1470 ps, 76 MHz repetition
(13158 ps), blinking strength 3.70 with 506 ns correlation time.
"""

from __future__ import annotations

import numpy as np
import pytest

from photonlab.analytic import (BlinkModel, DetectorModel, EmitterModel,
                                ExcitationClock, coherence_time)

T1 = 257.5
T2_STAR = 1470.0
T2 = coherence_time(T1, T2_STAR)
REP = 13158.0
A_BLINK = 3.70
T_BLINK = 506_000.0


@pytest.fixture(scope="session")
def paper_blink() -> BlinkModel:
    return BlinkModel(A_BLINK, T_BLINK)


@pytest.fixture(scope="session")
def paper_detectors() -> tuple[DetectorModel, DetectorModel]:
    # IRF FWHM 38 / 36 ps -> sigma = fwhm / (2 sqrt(2 ln 2))
    return (DetectorModel(irf_sigma=16.14), DetectorModel(irf_sigma=15.29))


@pytest.fixture(scope="session")
def ideal_detectors() -> tuple[DetectorModel, DetectorModel]:
    return (DetectorModel(), DetectorModel())


def brute_force_histogram(a, b, window: int, bin_width: int) -> np.ndarray:
    """O(n^2) all-pairs oracle for cross_correlate, chunked for memory."""
    from photonlab.correlate import n_half_bins

    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n_half = n_half_bins(window, bin_width)
    hist = np.zeros(2 * n_half + 1, dtype=np.int64)
    for start in range(0, a.size, 512):
        taus = (b[None, :] - a[start : start + 512, None]).ravel()
        taus = taus[np.abs(taus) <= window]
        bins = np.floor((taus + bin_width / 2) / bin_width).astype(np.int64)
        np.add.at(hist, bins + n_half, 1)
    return hist
