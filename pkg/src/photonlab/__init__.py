"""photonlab: simulation and analysis of pulsed single-photon-source
coincidence experiments (HBT antibunching, Hong-Ou-Mandel interference,
TCSPC lifetime and spectral fits)."""

from ._version import __version__
from .analytic import (BlinkModel, DetectorModel, EmitterModel,
                       ExcitationClock, Measured, VoigtWidths,
                       blinking_envelope, coherence_time,
                       expected_peak_pattern, hom_center_model,
                       pure_dephasing_time, purcell_factor,
                       quantum_efficiency_bound, voigt_fwhm, voigt_profile,
                       windowed_visibility)
from .correlate import (CorrConfig, Histogram, PeakTable, cross_correlate,
                        default_far_min, g2_poisson, g2_sidepeak,
                        hom_visibility_windowed, integrate_peaks,
                        poisson_level, pulse_phase_histogram)
from .fitting import (FitProblem, FitResult, fit_blinking, fit_cavity_modes,
                      fit_hom_center, fit_lifetime, fit_voigt_line, nlls_fit,
                      visibility_from_fits)
from .simulate import (PhotonEvent, PhotonEvents, SimConfig, TimeTagStream,
                       apply_detector, calibrate_contamination, emit_photons,
                       route_hbt, route_hom, run_experiment,
                       simulate_blink_trace)

__all__ = [name for name in dir() if not name.startswith("_")]
