"""Closed-form relations for a pulsed two-level single-photon emitter.

Pure functions only: coherence/dephasing algebra, the Hong-Ou-Mandel
center-peak shape, blinking peak envelopes, Purcell factor, Voigt line
shapes and the ideal interferometer peak patterns. Everything here is
deterministic and serves both as the model layer for fitting and as the
oracle layer for the Monte-Carlo simulator.

Units: times in picoseconds, energies in micro-eV, probabilities
dimensionless. ``math.inf`` is a valid pure-dephasing time (Fourier
limit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcx, wofz

_FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class Measured:
    """A value with a one-standard-error uncertainty."""

    value: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0 or math.isnan(self.sigma):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def __iter__(self):
        return iter((self.value, self.sigma))


@dataclass(frozen=True)
class BlinkModel:
    """Two-state (bright/dark) intermittency of the emitter.

    a_blink is the peak-envelope strength, t_blink the correlation time
    in ps. The stationary bright-state probability is 1 / (1 + a_blink).
    """

    a_blink: float = 0.0
    t_blink: float = 1.0

    def __post_init__(self):
        if self.a_blink < 0:
            raise ValueError(f"a_blink must be >= 0, got {self.a_blink}")
        if self.t_blink <= 0:
            raise ValueError(f"t_blink must be > 0, got {self.t_blink}")

    @property
    def on_probability(self) -> float:
        return 1.0 / (1.0 + self.a_blink)


@dataclass(frozen=True)
class EmitterModel:
    """Physical parameters of the photon source.

    t1: radiative lifetime (ps). t2_star: pure dephasing time (ps),
    math.inf for a Fourier-limited emitter. excitation_prob: emission
    probability per bright pulse. contamination_prob: probability,
    conditioned on a primary emission, of one extra fully distinguishable
    photon in the same pulse.
    """

    t1: float
    t2_star: float = math.inf
    excitation_prob: float = 1.0
    contamination_prob: float = 0.0
    blink: BlinkModel = field(default_factory=BlinkModel)

    def __post_init__(self):
        if self.t1 <= 0:
            raise ValueError(f"t1 must be > 0, got {self.t1}")
        if self.t2_star <= 0:
            raise ValueError(f"t2_star must be > 0 (or inf), got {self.t2_star}")
        for name in ("excitation_prob", "contamination_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")

    @property
    def t2(self) -> float:
        return coherence_time(self.t1, self.t2_star)


@dataclass(frozen=True)
class ExcitationClock:
    """Pulsed excitation: repetition period (ps) and pulse count."""

    rep_period: float = 13158.0
    n_pulses: int = 0

    def __post_init__(self):
        if self.rep_period <= 0:
            raise ValueError(f"rep_period must be > 0, got {self.rep_period}")
        if self.n_pulses < 0:
            raise ValueError(f"n_pulses must be >= 0, got {self.n_pulses}")

    @property
    def span(self) -> float:
        return self.rep_period * self.n_pulses


@dataclass(frozen=True)
class DetectorModel:
    """Single-photon detector: efficiency, Gaussian timing jitter (std
    dev, ps), dark-count rate (events/s) and dead time (ps)."""

    efficiency: float = 1.0
    irf_sigma: float = 0.0
    dark_rate: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must be in [0, 1], got {self.efficiency}")
        if self.irf_sigma < 0 or self.dark_rate < 0 or self.dead_time < 0:
            raise ValueError("irf_sigma, dark_rate and dead_time must be >= 0")

    @property
    def irf_fwhm(self) -> float:
        return _FWHM_PER_SIGMA * self.irf_sigma


@dataclass(frozen=True)
class VoigtWidths:
    """Lorentzian and Gaussian FWHM components of a spectral line (ueV)."""

    lorentz_fwhm: float
    gauss_fwhm: float

    def __post_init__(self):
        if self.lorentz_fwhm < 0 or self.gauss_fwhm < 0:
            raise ValueError("Voigt widths must be >= 0")


def coherence_time(t1: float, t2_star: float) -> float:
    """Coherence time from 1/T2 = 1/(2 T1) + 1/T2*.

    t2_star may be math.inf, giving the Fourier limit T2 = 2 T1.
    """
    if t1 <= 0:
        raise ValueError(f"t1 must be > 0, got {t1}")
    if t2_star <= 0:
        raise ValueError(f"t2_star must be > 0 (or inf), got {t2_star}")
    if math.isinf(t2_star):
        return 2.0 * t1
    return 1.0 / (0.5 / t1 + 1.0 / t2_star)


def pure_dephasing_time(t1: float, t2: float) -> float:
    """Invert 1/T2 = 1/(2 T1) + 1/T2* for T2*.

    t2 equal to the Fourier limit 2 T1 returns math.inf; t2 above the
    limit is unphysical and raises.
    """
    if t1 <= 0:
        raise ValueError(f"t1 must be > 0, got {t1}")
    if t2 <= 0:
        raise ValueError(f"t2 must be > 0, got {t2}")
    if t2 > 2.0 * t1:
        raise ValueError(f"t2 = {t2} exceeds the Fourier limit 2*t1 = {2 * t1}")
    if t2 == 2.0 * t1:
        return math.inf
    return 1.0 / (1.0 / t2 - 0.5 / t1)


def hom_center_model(tau, amplitude: float, visibility: float, t1: float, t2: float):
    """Co-polarized HOM center-peak coincidence shape.

    C(tau) = amplitude * (exp(-|tau|/t1) - visibility * exp(-2|tau|/t2)).
    Accepts scalar or array tau.
    """
    if t1 <= 0 or t2 <= 0:
        raise ValueError("t1 and t2 must be > 0")
    if not 0.0 <= visibility <= 1.0:
        raise ValueError(f"visibility must be in [0, 1], got {visibility}")
    at = np.abs(tau)
    out = amplitude * (np.exp(-at / t1) - visibility * np.exp(-2.0 * at / t2))
    if np.isscalar(tau):
        return float(out)
    return out


def windowed_visibility(t1: float, t2: float) -> float:
    """Two-photon interference visibility of the integrated center peak.

    Equals t2 / (2 t1), the area ratio of the interference dip to the
    lifetime envelope; equivalently t2_star / (t2_star + 2 t1).
    """
    if t1 <= 0 or t2 <= 0:
        raise ValueError("t1 and t2 must be > 0")
    if t2 > 2.0 * t1:
        raise ValueError(f"t2 = {t2} exceeds the Fourier limit 2*t1 = {2 * t1}")
    return t2 / (2.0 * t1)


def purcell_factor(t1_ref: Measured, t1: Measured) -> Measured:
    """Lifetime-reduction factor t1_ref / t1 with first-order errors."""
    if t1_ref.value <= 0 or t1.value <= 0:
        raise ValueError("lifetimes must be > 0")
    f = t1_ref.value / t1.value
    rel = math.hypot(t1_ref.sigma / t1_ref.value, t1.sigma / t1.value)
    return Measured(f, f * rel)


def blinking_envelope(m, h0: float, a_blink: float, t_blink: float, rep_period: float):
    """Coincidence-peak envelope h0 * (1 + a_blink * exp(-|m| T_rep / t_blink)).

    m is the pulse-separation index of the peak; accepts scalar or array.
    """
    if t_blink <= 0:
        raise ValueError(f"t_blink must be > 0, got {t_blink}")
    if rep_period <= 0:
        raise ValueError(f"rep_period must be > 0, got {rep_period}")
    if a_blink < 0:
        raise ValueError(f"a_blink must be >= 0, got {a_blink}")
    out = h0 * (1.0 + a_blink * np.exp(-np.abs(m) * rep_period / t_blink))
    if np.isscalar(m):
        return float(out)
    return out


def quantum_efficiency_bound(a_blink: Measured) -> Measured:
    """Upper bound 1 / (1 + a_blink) on the per-pulse emission efficiency."""
    if a_blink.value < 0:
        raise ValueError(f"a_blink must be >= 0, got {a_blink.value}")
    eta = 1.0 / (1.0 + a_blink.value)
    return Measured(eta, a_blink.sigma * eta * eta)


def voigt_fwhm(widths: VoigtWidths) -> float:
    """Olivero-Longbothum approximation to the Voigt profile FWHM.

    0.5346 f_L + sqrt(0.2166 f_L^2 + f_G^2), accurate to about 0.02%.
    """
    fl, fg = widths.lorentz_fwhm, widths.gauss_fwhm
    return 0.5346 * fl + math.sqrt(0.2166 * fl * fl + fg * fg)


def voigt_profile(x, center: float, widths: VoigtWidths, amplitude: float = 1.0):
    """Voigt line shape normalized to peak value `amplitude` at `center`.

    Gaussian-Lorentzian convolution evaluated through the Faddeeva
    function; degenerate widths reduce to the pure Gaussian or pure
    Lorentzian limit. Accepts scalar or array x.
    """
    if amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    fl, fg = widths.lorentz_fwhm, widths.gauss_fwhm
    dx = np.asarray(x, dtype=float) - center
    if fl == 0.0 and fg == 0.0:
        out = np.where(dx == 0.0, amplitude, 0.0)
    elif fg == 0.0:
        gamma = 0.5 * fl
        out = amplitude * gamma * gamma / (dx * dx + gamma * gamma)
    elif fl == 0.0:
        sigma = fg / _FWHM_PER_SIGMA
        out = amplitude * np.exp(-0.5 * (dx / sigma) ** 2)
    else:
        sigma = fg / _FWHM_PER_SIGMA
        gamma = 0.5 * fl
        z = (dx + 1j * gamma) / (sigma * math.sqrt(2.0))
        peak = erfcx(gamma / (sigma * math.sqrt(2.0)))
        out = amplitude * wofz(z).real / peak
    if np.isscalar(x):
        return float(out)
    return out


_HOM_SETUPS = ("hom_co", "hom_cross")
_SETUPS = ("hbt",) + _HOM_SETUPS


def expected_peak_pattern(setup: str, m: int, g2_zero: float = 0.0,
                          hom_vis: float = 1.0) -> float:
    """Ideal coincidence-peak area at pulse separation m, normalized to
    the uncorrelated (Poissonian) far-peak level.

    Assumes a blinking-free stream of one photon per pulse. For the HOM
    setups the value is built by enumerating, over the pulse separations
    that can feed peak m, the four delay-arm combinations of the photon
    pair and the detector-port statistics of each outcome; pairs that
    meet in the same output slot coincide with probability 1/2 when
    distinguishable (cross polarization) and (1 - hom_vis)/2 when
    indistinguishable (co polarization). The HBT center peak is g2_zero
    by definition.
    """
    if setup not in _SETUPS:
        raise ValueError(f"unknown setup {setup!r}, expected one of {_SETUPS}")
    if not 0.0 <= g2_zero and not math.isnan(g2_zero):
        raise ValueError(f"g2_zero must be >= 0, got {g2_zero}")
    if not 0.0 <= hom_vis <= 1.0:
        raise ValueError(f"hom_vis must be in [0, 1], got {hom_vis}")
    m = int(m)
    if setup == "hbt":
        return g2_zero if m == 0 else 1.0

    same_slot_coinc = 0.5 * (1.0 - hom_vis) if setup == "hom_co" else 0.5
    # Ordered photon pair (first -> channel 0, second -> channel 1).
    # Slot of a photon from pulse p is p plus 1 if it took the long arm.
    rate = 0.0
    far = 0.25
    for delta in (m - 1, m, m + 1):
        if delta == 0:
            continue  # a single photon cannot pair with itself
        for arm_a in (0, 1):
            for arm_b in (0, 1):
                if delta + arm_b - arm_a != m:
                    continue
                if m == 0:
                    port_prob = 0.5 * same_slot_coinc
                else:
                    port_prob = 0.25
                rate += 0.25 * port_prob
    return rate / far
