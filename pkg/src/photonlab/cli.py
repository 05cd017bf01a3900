"""Command-line front end.

Subcommands: simulate (time-tag files from a config), correlate
(coincidence histogram CSV), fit (model fits on CSV inputs, JSON out),
report (the full pipeline) and vismap (visibility vs lifetime and
dephasing grid).

Exit codes: 0 success, 2 usage, 3 schema/format error, 4 fit did not
converge, 5 internal/stage failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from ._version import __version__
from .analytic import Measured, coherence_time, windowed_visibility
from .config import ConfigError, parse_config, parse_duration
from .correlate import CorrConfig, cross_correlate, g2_poisson, g2_sidepeak, poisson_level
from . import fileio
from .fileio import FormatError
from .fitting import (fit_blinking, fit_cavity_modes, fit_hom_center,
                      fit_lifetime, fit_voigt_line)
from .report import ReportStageError, run_report
from .simulate import run_experiment

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NOT_CONVERGED = 4
EXIT_INTERNAL = 5


def _duration(text: str) -> float:
    try:
        return parse_duration(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_duration(text: str) -> int:
    value = _duration(text)
    if value != int(value):
        raise argparse.ArgumentTypeError(f"{text!r} is not a whole number of ps")
    return int(value)


def _t1_range(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected LO:HI:N")
    lo, hi = _duration(parts[0]), _duration(parts[1])
    try:
        n = int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad point count {parts[2]!r}") from None
    if n <= 0 or hi < lo or lo <= 0:
        raise argparse.ArgumentTypeError(f"empty or invalid range {text!r}")
    return lo, hi, n


def _t2star_list(text: str) -> list[float]:
    items = [p for p in text.split(",") if p.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty t2star list")
    return [_duration(p) for p in items]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photonlab",
        description="Simulate and analyze pulsed single-photon-source "
                    "coincidence experiments.",
    )
    parser.add_argument("--version", action="version",
                        version=f"photonlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate time-tag files from a config")
    p.add_argument("config")
    p.add_argument("out_prefix")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="coincidence histogram of two tag files")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--bin", type=_int_duration, default=50,
                   help="bin width (default 50 ps)")
    p.add_argument("--window", type=_int_duration, default=5_000_000,
                   help="half window (default 5 us)")
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("fit", help="model fits on CSV inputs")
    fitsub = p.add_subparsers(dest="model", required=True)

    f = fitsub.add_parser("lifetime", help="exponential decay with IRF")
    f.add_argument("input", help="histogram CSV (tau_ps,counts)")
    f.add_argument("--irf-sigma", type=_duration, default=0.0,
                   help="Gaussian IRF std dev (default 0)")
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit_lifetime)

    f = fitsub.add_parser("blinking", help="peak-envelope blinking fit")
    f.add_argument("input", help="peak CSV (m,area,sigma)")
    f.add_argument("--rep", type=_duration, default=13158.0,
                   help="repetition period (default 13158 ps)")
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit_blinking)

    f = fitsub.add_parser("hom", help="HOM center-peak fit, T1 fixed")
    f.add_argument("input", help="histogram CSV (tau_ps,counts)")
    f.add_argument("--t1-fix", type=_duration, required=True,
                   help="lifetime to hold fixed (required)")
    f.add_argument("--fix-visibility", type=float, default=None)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit_hom)

    f = fitsub.add_parser("g2", help="g2(0) from an integrated peak table")
    f.add_argument("input", help="peak CSV (m,area,sigma)")
    f.add_argument("--far-min", type=int, default=50)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit_g2)

    f = fitsub.add_parser("voigt", help="Voigt spectral line fit")
    f.add_argument("input", help="spectrum CSV (energy_uev,counts)")
    f.add_argument("--instr-fwhm", type=float, default=0.0,
                   help="instrument Gaussian FWHM (ueV)")
    f.add_argument("--instr-fwhm-err", type=float, default=0.0)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit_voigt)

    f = fitsub.add_parser("cavity", help="two-mode cavity spectrum fit")
    f.add_argument("input", help="spectrum CSV (wavelength_nm,counts)")
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit_cavity)

    p = sub.add_parser("report", help="full simulate/analyze pipeline")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("vismap", help="visibility over a (T1, T2*) grid")
    p.add_argument("--t1-range", type=_t1_range, required=True,
                   metavar="LO:HI:N")
    p.add_argument("--t2star-list", type=_t2star_list, required=True,
                   metavar="T2S[,T2S...]")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_vismap)
    return parser


def _emit(target, writer) -> None:
    if target is None:
        writer(sys.stdout)
    else:
        with open(target, "w", encoding="utf-8") as fh:
            writer(fh)


def cmd_simulate(args) -> int:
    cfg = parse_config(args.config)
    s0, s1 = run_experiment(cfg.sim_config(), workers=args.workers)
    fileio.write_ptt(f"{args.out_prefix}.ch0.ptt", s0)
    fileio.write_ptt(f"{args.out_prefix}.ch1.ptt", s1)
    meta = {
        "config": cfg.to_dict(),
        "tool": "photonlab",
        "version": __version__,
        "counts": {"ch0": len(s0), "ch1": len(s1)},
    }
    fileio.write_json(f"{args.out_prefix}.meta.json", meta)
    return EXIT_OK


def cmd_correlate(args) -> int:
    a = fileio.read_tags(args.file_a)
    b = fileio.read_tags(args.file_b)
    cfg = CorrConfig(bin_width=args.bin, window=args.window)
    hist = cross_correlate(a, b, cfg, workers=args.workers)
    _emit(args.out, lambda fh: fileio.write_histogram_csv(fh, hist))
    return EXIT_OK


def _finish_fit(result, out) -> int:
    _emit(out, lambda fh: fileio.write_json(fh, result.as_dict()))
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_fit_lifetime(args) -> int:
    hist = fileio.read_histogram_csv(args.input)
    return _finish_fit(fit_lifetime(hist, args.irf_sigma), args.out)


def cmd_fit_blinking(args) -> int:
    table = fileio.read_peaks_csv(args.input)
    return _finish_fit(fit_blinking(table, args.rep), args.out)


def cmd_fit_hom(args) -> int:
    hist = fileio.read_histogram_csv(args.input)
    result = fit_hom_center(hist, args.t1_fix,
                            visibility_fixed=args.fix_visibility)
    return _finish_fit(result, args.out)


def cmd_fit_g2(args) -> int:
    table = fileio.read_peaks_csv(args.input)
    doc = {
        "g2_sidepeak": _m(g2_sidepeak(table)),
        "g2_poisson": _m(g2_poisson(table, args.far_min)),
        "poisson_level": _m(poisson_level(table, args.far_min)),
        "far_min": args.far_min,
    }
    _emit(args.out, lambda fh: fileio.write_json(fh, doc))
    return EXIT_OK


def _m(measured: Measured) -> dict:
    return {"value": measured.value, "sigma": measured.sigma}


def cmd_fit_voigt(args) -> int:
    x, y = fileio.read_spectrum_csv(args.input, "energy_uev")
    result = fit_voigt_line(x, y, Measured(args.instr_fwhm, args.instr_fwhm_err))
    return _finish_fit(result, args.out)


def cmd_fit_cavity(args) -> int:
    x, y = fileio.read_spectrum_csv(args.input, "wavelength_nm")
    return _finish_fit(fit_cavity_modes(x, y), args.out)


def cmd_report(args) -> int:
    cfg = parse_config(args.config)
    doc = run_report(cfg, config_path=args.config, workers=args.workers)
    _emit(args.out, lambda fh: fileio.write_json(fh, doc))
    return EXIT_OK


OPERATING_POINT = (257.5, 1470.0)


def cmd_vismap(args) -> int:
    lo, hi, n = args.t1_range
    t1s = np.linspace(lo, hi, n)
    lines = ["t1_ps,t2star_ps,visibility"]
    for t2s in args.t2star_list:
        for t1 in t1s:
            v = windowed_visibility(t1, coherence_time(t1, t2s))
            lines.append(f"{t1:g},{t2s:g},{v:.6f}")
    t1_op, t2s_op = OPERATING_POINT
    v_op = windowed_visibility(t1_op, coherence_time(t1_op, t2s_op))
    lines.append(f"{t1_op:g},{t2s_op:g},{v_op:.6f}")
    _emit(args.out, lambda fh: fh.write("\n".join(lines) + "\n"))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return int(args.func(args))
    except (ConfigError, FormatError) as exc:
        print(f"photonlab: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ReportStageError as exc:
        print(f"photonlab: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"photonlab: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"photonlab: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def run() -> None:
    sys.exit(main())
