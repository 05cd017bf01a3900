"""Monte-Carlo generation of time-tagged detection records.

The chain is: two-state blinking telegraph sampled at the excitation
clock, per-pulse photon emission with exponential decay offsets and
optional distinguishable contamination photons, routing through either
a Hanbury Brown-Twiss beamsplitter or an unbalanced (one-period delay)
Mach-Zehnder interferometer, and a detector stage (efficiency, Gaussian
jitter, dark counts, dead time).

Everything is a deterministic function of the configuration including
its seed; per-stage and per-block sub-streams make the output identical
whether pulse blocks are processed serially or in parallel.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, NamedTuple

import numpy as np

from .analytic import (BlinkModel, DetectorModel, EmitterModel,
                       ExcitationClock, blinking_envelope)
from .rng import (STAGE_BLINK, STAGE_DETECTOR, STAGE_EMIT, STAGE_ROUTE,
                  child_seed, substream)

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

SETUPS = ("hbt", "hom_co", "hom_cross")

# Pulses per emission block; fixed because block boundaries are part of
# the deterministic sub-stream layout.
BLOCK_PULSES = 1 << 20


class PhotonEvent(NamedTuple):
    pulse_index: int
    emit_offset: float
    distinguishable: bool


class PhotonEvents:
    """Column-oriented sequence of PhotonEvent, ordered by pulse index
    (primary photon before its contamination partner within a pulse)."""

    def __init__(self, pulse_index, emit_offset, distinguishable):
        self.pulse_index = np.asarray(pulse_index, dtype=np.int64)
        self.emit_offset = np.asarray(emit_offset, dtype=np.float64)
        self.distinguishable = np.asarray(distinguishable, dtype=bool)
        if not (self.pulse_index.size == self.emit_offset.size
                == self.distinguishable.size):
            raise ValueError("photon columns must have equal length")
        if np.any(self.emit_offset < 0):
            raise ValueError("emit_offset must be >= 0")

    def __len__(self) -> int:
        return self.pulse_index.size

    def __getitem__(self, i: int) -> PhotonEvent:
        return PhotonEvent(int(self.pulse_index[i]), float(self.emit_offset[i]),
                           bool(self.distinguishable[i]))

    def __iter__(self) -> Iterator[PhotonEvent]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def concatenate(cls, blocks) -> "PhotonEvents":
        blocks = list(blocks)
        if not blocks:
            return cls([], [], [])
        return cls(
            np.concatenate([b.pulse_index for b in blocks]),
            np.concatenate([b.emit_offset for b in blocks]),
            np.concatenate([b.distinguishable for b in blocks]),
        )


@dataclass
class TimeTagStream:
    """Channel-labeled, strictly increasing detection timestamps (ps)."""

    channel: int
    tags: np.ndarray

    def __post_init__(self):
        self.tags = np.asarray(self.tags, dtype=np.uint64)
        if self.tags.size > 1 and np.any(np.diff(self.tags.astype(np.int64)) <= 0):
            raise ValueError("tags must be strictly increasing")

    def __len__(self) -> int:
        return self.tags.size


@dataclass(frozen=True)
class SimConfig:
    """Complete description of one simulated acquisition."""

    emitter: EmitterModel
    clock: ExcitationClock
    setup: str = "hbt"
    detectors: tuple[DetectorModel, DetectorModel] = (DetectorModel(), DetectorModel())
    seed: int = 0
    arm_transmission: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ValueError(f"setup must be one of {SETUPS}, got {self.setup!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        for t in self.arm_transmission:
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"arm transmission must be in [0, 1], got {t}")


def simulate_blink_trace(clock: ExcitationClock, blink: BlinkModel,
                         seed: int) -> np.ndarray:
    """Bright/dark state of the emitter at each pulse.

    Stationary two-state Markov telegraph with bright probability
    beta = 1/(1 + a_blink) and switching rates beta/t_blink (dark->bright)
    and (1-beta)/t_blink (bright->dark), so the bright-state
    autocovariance decays as exp(-dt/t_blink).
    """
    n = clock.n_pulses
    if blink.a_blink == 0.0:
        return np.ones(n, dtype=bool)
    rng = substream(seed, STAGE_BLINK)
    beta = blink.on_probability
    q = math.exp(-clock.rep_period / blink.t_blink)
    p_dark_on = beta * (1.0 - q)         # P(on | was off)
    p_on_on = p_dark_on + q              # P(on | was on)
    trace = np.empty(n, dtype=bool)
    if n == 0:
        return trace
    state = bool(rng.random() < beta)
    trace[0] = state
    # Blockwise closed form of s[k+1] = force_on[k] | (keep_on[k] & s[k]):
    # the state is set by the latest force-on / force-off event, with a
    # single uniform per step serving both conditional branches.
    pos = 1
    while pos < n:
        m = min(BLOCK_PULSES, n - pos)
        u = rng.random(m)
        force_on = u < p_dark_on
        force_off = u >= p_on_on
        idx = np.arange(m, dtype=np.int64)
        last_on = np.maximum.accumulate(np.where(force_on, idx, -1))
        last_off = np.maximum.accumulate(np.where(force_off, idx, -1))
        trace[pos : pos + m] = (last_on > last_off) | ((last_off == -1) & state)
        state = bool(trace[pos + m - 1])
        pos += m
    return trace


def _emit_block(trace_slice, first_pulse, emitter, rng) -> PhotonEvents:
    on_idx = first_pulse + np.flatnonzero(trace_slice)
    u = rng.random(on_idx.size)
    emit_idx = on_idx[u < emitter.excitation_prob]
    offsets = rng.exponential(emitter.t1, emit_idx.size)
    u_extra = rng.random(emit_idx.size)
    extra = u_extra < emitter.contamination_prob
    extra_idx = emit_idx[extra]
    extra_off = rng.exponential(emitter.t1, extra_idx.size)
    pulses = np.concatenate([emit_idx, extra_idx])
    offs = np.concatenate([offsets, extra_off])
    dist = np.concatenate([np.zeros(emit_idx.size, bool), np.ones(extra_idx.size, bool)])
    order = np.argsort(pulses, kind="stable")  # primary stays ahead of its partner
    return PhotonEvents(pulses[order], offs[order], dist[order])


def emit_photons(trace: np.ndarray, emitter: EmitterModel, clock: ExcitationClock,
                 seed: int, workers: int = 1) -> PhotonEvents:
    """Draw the photons of every bright pulse.

    Each bright pulse emits one photon with probability excitation_prob
    and exponential delay (mean t1) after the pulse; an emitting pulse
    additionally carries one distinguishable contamination photon with
    probability contamination_prob. Processed in fixed pulse blocks,
    each with its own RNG sub-stream.
    """
    n = clock.n_pulses
    if trace.size != n:
        raise ValueError(f"trace has {trace.size} entries for {n} pulses")
    starts = range(0, n, BLOCK_PULSES)

    def one(args):
        b, p0 = args
        rng = substream(seed, STAGE_EMIT, b)
        return _emit_block(trace[p0 : p0 + BLOCK_PULSES], p0, emitter, rng)

    jobs = list(enumerate(starts))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(one, jobs))
    else:
        blocks = [one(j) for j in jobs]
    return PhotonEvents.concatenate(blocks)


if _HAVE_NUMBA:

    @njit(nogil=True, cache=True)
    def _dead_time_pass(tags, dead):  # pragma: no cover - compiled
        keep = np.zeros(tags.size, dtype=np.bool_)
        last = -(1 << 62)
        for i in range(tags.size):
            if tags[i] - last >= dead and tags[i] != last:
                keep[i] = True
                last = tags[i]
        return keep

else:  # pragma: no cover

    def _dead_time_pass(tags, dead):
        keep = np.zeros(tags.size, dtype=bool)
        last = -(1 << 62)
        for i, t in enumerate(tags):
            if t - last >= dead and t != last:
                keep[i] = True
                last = t
        return keep


def apply_detector(times, det: DetectorModel, total_span: float, seed: int,
                   channel: int = 0) -> TimeTagStream:
    """Detector response: efficiency thinning, Gaussian timing jitter,
    Poisson dark counts over [0, total_span], re-sort to the integer-ps
    grid, then dead-time filtering (which also collapses equal tags).
    """
    t = np.asarray(getattr(times, "tags", times), dtype=np.float64)
    rng = substream(seed, STAGE_DETECTOR)
    if det.efficiency < 1.0:
        t = t[rng.random(t.size) < det.efficiency]
    if det.irf_sigma > 0.0:
        t = t + rng.normal(0.0, det.irf_sigma, t.size)
    if det.dark_rate > 0.0:
        n_dark = rng.poisson(det.dark_rate * total_span * 1e-12)
        t = np.concatenate([t, rng.random(n_dark) * total_span])
    t.sort(kind="stable")
    tags = np.rint(t).astype(np.int64)
    np.maximum(tags, 0, out=tags)  # jitter may push the first tags below 0
    dead = int(det.dead_time)
    if dead > 0:
        tags = tags[_dead_time_pass(tags, dead)]
    elif tags.size:
        tags = tags[np.concatenate(([True], np.diff(tags) > 0))]
    return TimeTagStream(channel, tags.astype(np.uint64))


_DET_CH0, _DET_CH1 = 10, 11


def route_hbt(photons: PhotonEvents, detectors, clock: ExcitationClock,
              seed: int) -> tuple[TimeTagStream, TimeTagStream]:
    """50:50 beamsplitter: each photon lands on channel 0 or 1 with
    probability 1/2; arrival time is pulse_index * rep_period + offset."""
    rng = substream(seed, STAGE_ROUTE)
    to_ch1 = rng.random(len(photons)) < 0.5
    arrival = photons.pulse_index * clock.rep_period + photons.emit_offset
    span = clock.span
    s0 = apply_detector(arrival[~to_ch1], detectors[0], span,
                        child_seed(seed, _DET_CH0), channel=0)
    s1 = apply_detector(arrival[to_ch1], detectors[1], span,
                        child_seed(seed, _DET_CH1), channel=1)
    return s0, s1


def _slot_of(arrival: np.ndarray, rep: float) -> np.ndarray:
    # nearest multiple of rep; exact half-period boundaries round toward
    # negative infinity for determinism
    return np.ceil((arrival - 0.5 * rep) / rep).astype(np.int64)


def route_hom(photons: PhotonEvents, polarization: str, detectors,
              clock: ExcitationClock, seed: int, t2_star: float = math.inf,
              arm_transmission: tuple[float, float] = (1.0, 1.0),
              ) -> tuple[TimeTagStream, TimeTagStream]:
    """Unbalanced Mach-Zehnder with a one-period delay arm and 50:50
    output beamsplitter.

    Photons meeting in the same output slot interfere pairwise: a
    co-polarized pair of primary photons exits different ports with
    probability (1 - exp(-2 |dt| / t2_star)) / 2, any other pair with
    probability 1/2; otherwise both photons take one random port. Slots
    with three or more photons (contamination) apply the pair rule to
    the closest two in time and route the rest independently.
    """
    if polarization not in ("co", "cross"):
        raise ValueError(f"polarization must be 'co' or 'cross', got {polarization!r}")
    rng = substream(seed, STAGE_ROUTE)
    n = len(photons)
    rep = clock.rep_period
    long_arm = rng.random(n) < 0.5
    u_port = rng.random(n)
    u_pair = rng.random(n)
    arrival = photons.pulse_index * rep + photons.emit_offset + long_arm * rep
    dist = photons.distinguishable
    if min(arm_transmission) < 1.0:
        trans = np.where(long_arm, arm_transmission[1], arm_transmission[0])
        keep = rng.random(n) < trans
        arrival, u_port, u_pair, dist = (arrival[keep], u_port[keep],
                                         u_pair[keep], dist[keep])

    slot = _slot_of(arrival, rep)
    order = np.lexsort((arrival, slot))
    slot, arrival, u_port, u_pair, dist = (slot[order], arrival[order],
                                           u_port[order], u_pair[order], dist[order])
    m = slot.size
    to_ch1 = u_port < 0.5  # default: independent routing
    if m:
        starts = np.flatnonzero(np.concatenate(([True], slot[1:] != slot[:-1])))
        counts = np.diff(np.concatenate((starts, [m])))
        co = polarization == "co"

        i = starts[counts == 2]
        if i.size:
            j = i + 1
            _pair_ports(i, j, arrival, dist, u_port, u_pair, to_ch1, co, t2_star)
        for s, c in zip(starts[counts >= 3], counts[counts >= 3]):
            gap = np.diff(arrival[s : s + c])
            k = s + int(np.argmin(gap))
            _pair_ports(np.array([k]), np.array([k + 1]), arrival, dist,
                        u_port, u_pair, to_ch1, co, t2_star)

    span = clock.span + rep
    s0 = apply_detector(arrival[~to_ch1], detectors[0], span,
                        child_seed(seed, _DET_CH0), channel=0)
    s1 = apply_detector(arrival[to_ch1], detectors[1], span,
                        child_seed(seed, _DET_CH1), channel=1)
    return s0, s1


def _pair_ports(i, j, arrival, dist, u_port, u_pair, to_ch1, co: bool,
                t2_star: float) -> None:
    """Apply the two-photon output rule to index pairs (i, j) in place."""
    dt = arrival[j] - arrival[i]
    interferes = co & ~dist[i] & ~dist[j]
    if math.isinf(t2_star):
        p_diff = np.where(interferes, 0.0, 0.5)
    else:
        p_diff = np.where(interferes, 0.5 * -np.expm1(-2.0 * dt / t2_star), 0.5)
    different = u_pair[i] < p_diff
    first = u_port[i] < 0.5
    to_ch1[i] = first
    to_ch1[j] = np.where(different, ~first, first)


def run_experiment(cfg: SimConfig, workers: int = 1,
                   ) -> tuple[TimeTagStream, TimeTagStream]:
    """Simulate one full acquisition; bit-identical for identical cfg,
    serial or parallel."""
    trace = simulate_blink_trace(cfg.clock, cfg.emitter.blink,
                                 child_seed(cfg.seed, STAGE_BLINK))
    photons = emit_photons(trace, cfg.emitter, cfg.clock,
                           child_seed(cfg.seed, STAGE_EMIT), workers=workers)
    route_seed = child_seed(cfg.seed, STAGE_ROUTE)
    if cfg.setup == "hbt":
        return route_hbt(photons, cfg.detectors, cfg.clock, route_seed)
    pol = "co" if cfg.setup == "hom_co" else "cross"
    return route_hom(photons, pol, cfg.detectors, cfg.clock, route_seed,
                     t2_star=cfg.emitter.t2_star,
                     arm_transmission=cfg.arm_transmission)


def calibrate_contamination(cfg: SimConfig, target_g2: float,
                            n_pulses: int = 4_000_000, tol: float = 1e-3,
                            max_iter: int = 10) -> float:
    """Find the contamination probability that reproduces a target
    side-peak-normalized g2(0), by bisection on short HBT runs.

    The start bracket comes from the small-contamination estimate
    g2 ~ 2 eps / (beta * B1 * p_exc), where B1 is the blinking envelope
    at the first side peak; bisection then refines against simulated
    histograms. Deterministic for a given cfg.seed.
    """
    from . import correlate

    if target_g2 <= 0:
        return 0.0
    emitter = cfg.emitter
    clock = ExcitationClock(cfg.clock.rep_period, n_pulses)
    beta = emitter.blink.on_probability
    b1 = blinking_envelope(1, 1.0, emitter.blink.a_blink, emitter.blink.t_blink,
                           clock.rep_period) if emitter.blink.a_blink else 1.0
    eps0 = 0.5 * target_g2 * beta * b1 * emitter.excitation_prob
    corr_cfg = correlate.CorrConfig(bin_width=50, window=int(2 * clock.rep_period),
                                    peak_window=3000)

    def measure(eps: float, k: int) -> float:
        em = replace(emitter, contamination_prob=eps)
        sub = SimConfig(em, clock, "hbt", cfg.detectors,
                        seed=child_seed(cfg.seed, 1000 + k))
        s0, s1 = run_experiment(sub)
        h = correlate.cross_correlate(s0, s1, corr_cfg)
        table = correlate.integrate_peaks(h, clock.rep_period, 3000, 1)
        return correlate.g2_sidepeak(table).value

    lo, hi = 0.0, min(1.0, 3.0 * eps0)
    while measure(hi, 0) < target_g2:
        hi = min(1.0, 2.0 * hi)
        if hi == 1.0:
            break
    for k in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        g2 = measure(mid, k)
        if abs(g2 - target_g2) < tol:
            return mid
        if g2 < target_g2:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
