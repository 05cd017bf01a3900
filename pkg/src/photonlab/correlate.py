"""Streaming coincidence analysis of time-tag records.

Turns pairs of sorted timestamp streams into delay histograms and
integrated peak tables with exact Poisson error bookkeeping. The pair
loop is a two-pointer sliding window, O(n_a + n_b + pairs), compiled
with numba when available; a vectorized numpy path is the fallback.
Counts are 64-bit integers throughout, so chunked/parallel execution is
bit-identical to serial.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analytic import Measured

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


_CHUNK = 1 << 21


@dataclass(frozen=True)
class CorrConfig:
    """Correlation settings: bin width, half-window of the delay axis and
    the integration window around each coincidence peak (all ps)."""

    bin_width: int = 50
    window: int = 5_000_000
    peak_window: int = 3000

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError(f"bin_width must be > 0, got {self.bin_width}")
        if self.window < 0:
            raise ValueError(f"window must be >= 0, got {self.window}")
        if self.peak_window <= 0:
            raise ValueError(f"peak_window must be > 0, got {self.peak_window}")


@dataclass
class Histogram:
    """Uniformly binned counts over a symmetric signed delay window.

    Bin k is centered on tau = k * bin_width and covers the half-open
    interval [center - bin_width/2, center + bin_width/2); the number of
    bins is odd with bin 0 centered on tau = 0.
    """

    bin_width: int
    window: int
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        expected = 2 * n_half_bins(self.window, self.bin_width) + 1
        if self.counts.size != expected:
            raise ValueError(
                f"histogram needs {expected} bins for window {self.window}, "
                f"bin width {self.bin_width}; got {self.counts.size}"
            )

    @property
    def n_half(self) -> int:
        return (self.counts.size - 1) // 2

    @property
    def taus(self) -> np.ndarray:
        """Bin centers in ps."""
        n = self.n_half
        return np.arange(-n, n + 1, dtype=np.int64) * self.bin_width

    def restrict(self, half_span: float) -> "Histogram":
        """Sub-histogram of the bins whose centers lie within |tau| <= half_span."""
        n_keep = min(int(half_span // self.bin_width), self.n_half)
        n = self.n_half
        counts = self.counts[n - n_keep : n + n_keep + 1].copy()
        return Histogram(self.bin_width, n_keep * self.bin_width, counts)


@dataclass
class PeakTable:
    """Integrated coincidence-peak areas indexed by pulse separation m.

    sigma is the exact Poisson error sqrt(area).
    """

    m: np.ndarray
    area: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.int64)
        self.area = np.asarray(self.area, dtype=np.int64)
        if self.m.size != self.area.size:
            raise ValueError("m and area must have equal length")
        if np.unique(self.m).size != self.m.size:
            raise ValueError("peak indices m must be unique")
        if np.any(self.area < 0):
            raise ValueError("peak areas must be >= 0")

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.area.astype(float))

    def __len__(self) -> int:
        return self.m.size

    def area_of(self, m: int) -> int:
        idx = np.flatnonzero(self.m == m)
        if idx.size == 0:
            raise ValueError(f"no peak at m = {m}")
        return int(self.area[idx[0]])

    def far(self, far_min: int) -> np.ndarray:
        return self.area[np.abs(self.m) >= far_min].astype(float)


def n_half_bins(window: float, bin_width: int) -> int:
    """Largest |bin index| whose center can receive a delay |tau| <= window."""
    return int((2 * window + bin_width) // (2 * bin_width))


def _as_tags(stream) -> np.ndarray:
    tags = getattr(stream, "tags", stream)
    tags = np.asarray(tags)
    if tags.size and np.any(np.diff(tags.astype(np.int64)) < 0):
        bad = int(np.flatnonzero(np.diff(tags.astype(np.int64)) < 0)[0]) + 1
        raise ValueError(f"stream is not sorted: violation at record {bad}")
    return tags.astype(np.int64)


@njit(nogil=True, cache=True)
def _pair_kernel(a, b, j0, window, bw, n_half, hist):  # pragma: no cover - compiled
    j_lo = j0
    j_hi = j0
    nb = b.size
    two_bw = 2 * bw
    for i in range(a.size):
        t = a[i]
        lo = t - window
        hi = t + window
        while j_lo < nb and b[j_lo] < lo:
            j_lo += 1
        if j_hi < j_lo:
            j_hi = j_lo
        while j_hi < nb and b[j_hi] <= hi:
            j_hi += 1
        for j in range(j_lo, j_hi):
            tau = b[j] - t
            hist[(2 * tau + bw) // two_bw + n_half] += 1


def _pairs_numpy(a, b, j0, window, bw, n_half, hist):
    """Vectorized fallback identical to the compiled kernel."""
    nbins = hist.size
    lo = np.searchsorted(b, a - window, side="left")
    hi = np.searchsorted(b, a + window, side="right")
    counts = hi - lo
    step = max(1, _CHUNK // max(1, int(counts.max()) if counts.size else 1))
    for start in range(0, a.size, step):
        stop = min(start + step, a.size)
        c = counts[start:stop]
        total = int(c.sum())
        if total == 0:
            continue
        # flat indices of every in-window partner of every a[start:stop]
        offs = np.repeat(lo[start:stop] - np.cumsum(c) + c, c) + np.arange(total)
        tau = b[offs] - np.repeat(a[start:stop], c)
        bins = (2 * tau + bw) // (2 * bw) + n_half
        hist += np.bincount(bins, minlength=nbins).astype(np.int64)


def cross_correlate(a, b, cfg: CorrConfig = CorrConfig(), workers: int = 1) -> Histogram:
    """Histogram of delays t_b - t_a over all pairs with |t_b - t_a| <= window.

    Both inputs must be sorted (checked in one monotonicity pass). When
    workers > 1 the first stream is split into chunks correlated in
    parallel; per-chunk integer histograms are summed, so the result is
    identical to the serial one.
    """
    ta = _as_tags(a)
    tb = _as_tags(b)
    window = int(cfg.window)
    bw = int(cfg.bin_width)
    n_half = n_half_bins(window, bw)
    nbins = 2 * n_half + 1
    if ta.size == 0 or tb.size == 0:
        return Histogram(bw, window, np.zeros(nbins, dtype=np.int64))

    kernel = _pair_kernel if _HAVE_NUMBA else _pairs_numpy
    n_chunks = 1 if workers <= 1 else int(min(workers * 4, max(1, ta.size // 1024)))
    bounds = np.linspace(0, ta.size, n_chunks + 1).astype(np.int64)

    def one(k):
        h = np.zeros(nbins, dtype=np.int64)
        chunk = ta[bounds[k] : bounds[k + 1]]
        if chunk.size:
            j0 = int(np.searchsorted(tb, chunk[0] - window, side="left"))
            kernel(chunk, tb, j0, window, bw, n_half, h)
        return h

    if n_chunks == 1:
        hist = one(0)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hist = sum(pool.map(one, range(n_chunks)))
    return Histogram(bw, window, hist)


def integrate_peaks(h: Histogram, rep_period: float, peak_window: float,
                    m_range: int) -> PeakTable:
    """Sum counts in a window of width peak_window around each peak
    m * rep_period for m in [-m_range, m_range].

    A bin contributes to peak m when its center lies in
    [m*rep_period - peak_window/2, m*rep_period + peak_window/2); the
    half-open edge keeps adjacent windows disjoint, so peak_window equal
    to rep_period partitions all counts.
    """
    if peak_window > rep_period:
        raise ValueError(
            f"peak_window {peak_window} > rep_period {rep_period}: windows overlap"
        )
    if m_range < 0:
        raise ValueError(f"m_range must be >= 0, got {m_range}")
    if m_range * rep_period + peak_window / 2 > h.window + h.bin_width / 2:
        raise ValueError(
            f"m_range {m_range} exceeds the histogram window {h.window} ps"
        )
    bw = h.bin_width
    n = h.n_half
    csum = np.concatenate(([0], np.cumsum(h.counts)))
    ms = np.arange(-m_range, m_range + 1)
    areas = np.empty(ms.size, dtype=np.int64)
    for i, m in enumerate(ms):
        lo = m * rep_period - peak_window / 2
        hi = m * rep_period + peak_window / 2
        k_lo = max(math.ceil(lo / bw), -n)
        k_hi = min(math.ceil(hi / bw), n + 1)  # exclusive
        areas[i] = csum[k_hi + n] - csum[k_lo + n] if k_hi > k_lo else 0
    return PeakTable(ms, areas)


def poisson_level(t: PeakTable, far_min: int) -> Measured:
    """Mean area of the far peaks |m| >= far_min, with its standard error."""
    far = t.far(far_min)
    if far.size < 5:
        raise ValueError(
            f"need >= 5 peaks with |m| >= {far_min}, got {far.size}"
        )
    return Measured(float(far.mean()), float(far.std(ddof=1) / math.sqrt(far.size)))


def _ratio_sigma(num: float, num_var: float, den: float, den_var: float) -> float:
    return math.sqrt(num_var / den**2 + num**2 * den_var / den**4)


def g2_sidepeak(t: PeakTable) -> Measured:
    """Center-peak area over the mean of the two first side peaks.

    Poisson errors; the variance of a zero-count area is taken as 1.
    """
    a0 = t.area_of(0)
    side = 0.5 * (t.area_of(-1) + t.area_of(1))
    if side == 0:
        raise ValueError("first side peaks are empty")
    var0 = float(max(a0, 1))
    var_side = 0.25 * float(t.area_of(-1) + t.area_of(1))
    return Measured(a0 / side, _ratio_sigma(a0, var0, side, var_side))


def g2_poisson(t: PeakTable, far_min: int) -> Measured:
    """Center-peak area normalized to the Poissonian far-peak level."""
    a0 = t.area_of(0)
    h0 = poisson_level(t, far_min)
    if h0.value == 0:
        raise ValueError("far-peak level is zero")
    var0 = float(max(a0, 1))
    return Measured(a0 / h0.value, _ratio_sigma(a0, var0, h0.value, h0.sigma**2))


def hom_visibility_windowed(co: PeakTable, cross: PeakTable, far_min: int) -> Measured:
    """Two-photon interference visibility 1 - A_co / A_cross, with each
    center area normalized to its own far-peak level first."""
    a_co = co.area_of(0)
    a_cross = cross.area_of(0)
    if a_cross == 0:
        raise ValueError("cross-polarized center peak is empty")
    h_co = poisson_level(co, far_min)
    h_cross = poisson_level(cross, far_min)
    ratio = (a_co / h_co.value) / (a_cross / h_cross.value)
    d_dco = h_cross.value / (h_co.value * a_cross)
    var = d_dco**2 * max(a_co, 1) + ratio**2 * (
        (h_co.sigma / h_co.value) ** 2
        + 1.0 / a_cross
        + (h_cross.sigma / h_cross.value) ** 2
    )
    return Measured(1.0 - ratio, math.sqrt(var))


def pulse_phase_histogram(stream, rep_period: float, bin_width: int = 25) -> Histogram:
    """Fold a tag stream modulo the excitation period.

    The phase is mapped to [-rep_period/2, rep_period/2), putting the
    decay edge near tau = 0 with room for jitter leakage to negative
    phases; input for lifetime fitting.
    """
    tags = _as_tags(stream)
    rep = int(round(rep_period))
    half = rep // 2
    phase = (tags + half) % rep - half
    bw = int(bin_width)
    n_half = n_half_bins(rep / 2, bw)
    bins = (2 * phase + bw) // (2 * bw) + n_half
    counts = np.bincount(bins.astype(np.int64), minlength=2 * n_half + 1)
    return Histogram(bw, int(rep / 2), counts.astype(np.int64))


def default_far_min(t_blink: float | None, rep_period: float, floor: int = 50) -> int:
    """Smallest |m| at which the blinking envelope has decayed to the
    uncorrelated level: m * rep_period >= 5 * t_blink, else the floor."""
    if t_blink is None or t_blink <= 0:
        return floor
    return max(floor, int(math.ceil(5.0 * t_blink / rep_period)))
