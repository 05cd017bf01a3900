"""Run configuration: an INI-style document with typed, unit-aware keys.

Sections are [emitter], [blink], [clock], [detectors], [setup],
[analysis] and [seed]. Durations take an optional ps/ns/us suffix and
are converted to picoseconds exactly (decimal arithmetic, no binary
rounding of e.g. "13.158 ns"). Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .analytic import (BlinkModel, DetectorModel, EmitterModel,
                       ExcitationClock, Measured)
from .correlate import CorrConfig
from .simulate import SETUPS, SimConfig


class ConfigError(Exception):
    """Raised for malformed or unknown configuration content."""


_UNIT_PS = {"ps": Decimal(1), "ns": Decimal(1000), "us": Decimal(1_000_000)}


def parse_duration(text: str, key: str = "duration") -> float:
    """Duration with optional ps/ns/us unit, exactly converted to ps."""
    raw = str(text).strip()
    if raw in ("inf", "infinite"):
        return math.inf
    unit = Decimal(1)
    for suffix, scale in _UNIT_PS.items():
        if raw.endswith(suffix):
            unit = scale
            raw = raw[: -len(suffix)].strip()
            break
    try:
        value = Decimal(raw) * unit
    except InvalidOperation:
        raise ConfigError(f"{key}: cannot parse duration {text!r}") from None
    return float(value)


def _parse_int_ps(text: str, key: str) -> int:
    value = Decimal(str(parse_duration(text, key)))
    if value != value.to_integral_value():
        raise ConfigError(f"{key}: {text!r} is not a whole number of ps")
    return int(value)


def _parse_float(text: str, key: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse number {text!r}") from None


def _parse_prob(text: str, key: str) -> float:
    v = _parse_float(text, key)
    if not 0.0 <= v <= 1.0:
        raise ConfigError(f"{key}: {v} outside [0, 1]")
    return v


def _parse_count(text: str, key: str) -> int:
    try:
        v = int(str(text).replace("_", ""))
    except ValueError:
        raise ConfigError(f"{key}: cannot parse integer {text!r}") from None
    if v < 0:
        raise ConfigError(f"{key}: must be >= 0")
    return v


def _parse_auto_count(text: str, key: str):
    if str(text).strip() == "auto":
        return None
    return _parse_count(text, key)


def _parse_setup(text: str, key: str) -> str:
    if text not in SETUPS:
        raise ConfigError(f"{key}: expected one of {SETUPS}, got {text!r}")
    return text


# section -> key -> (parser, default-as-text)
_SCHEMA = {
    "emitter": {
        "t1": (parse_duration, "257.5 ps"),
        "t2_star": (parse_duration, "inf"),
        "excitation_prob": (_parse_prob, "1.0"),
        "contamination_prob": (_parse_prob, "0.0"),
    },
    "blink": {
        "a_blink": (_parse_float, "0.0"),
        "t_blink": (parse_duration, "506 ns"),
    },
    "clock": {
        "rep_period": (parse_duration, "13158 ps"),
        "n_pulses": (_parse_count, "1000000"),
    },
    "detectors": {
        "ch0.efficiency": (_parse_prob, "1.0"),
        "ch0.irf_sigma": (parse_duration, "0 ps"),
        "ch0.dark_rate": (_parse_float, "0.0"),
        "ch0.dead_time": (parse_duration, "0 ps"),
        "ch1.efficiency": (_parse_prob, "1.0"),
        "ch1.irf_sigma": (parse_duration, "0 ps"),
        "ch1.dark_rate": (_parse_float, "0.0"),
        "ch1.dead_time": (parse_duration, "0 ps"),
    },
    "setup": {
        "kind": (_parse_setup, "hbt"),
    },
    "analysis": {
        "bin_width": (_parse_int_ps, "50 ps"),
        "window": (_parse_int_ps, "5 us"),
        "peak_window": (_parse_int_ps, "3 ns"),
        "decay_bin_width": (_parse_int_ps, "25 ps"),
        "m_range": (_parse_auto_count, "auto"),
        "far_min": (_parse_auto_count, "auto"),
        "t1_ref": (parse_duration, "1210 ps"),
        "t1_ref_sigma": (parse_duration, "115 ps"),
    },
    "seed": {
        "seed": (_parse_count, "0"),
    },
}


@dataclass
class RunConfig:
    """Fully resolved configuration for simulation and analysis."""

    emitter: EmitterModel
    clock: ExcitationClock
    setup: str
    detectors: tuple[DetectorModel, DetectorModel]
    seed: int
    corr: CorrConfig
    decay_bin_width: int
    m_range: int | None
    far_min: int | None
    t1_ref: Measured
    raw: dict

    def sim_config(self, setup: str | None = None,
                   seed: int | None = None) -> SimConfig:
        return SimConfig(
            emitter=self.emitter,
            clock=self.clock,
            setup=self.setup if setup is None else setup,
            detectors=self.detectors,
            seed=self.seed if seed is None else seed,
        )

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"  # strict-JSON-safe marker
            return v

        return {s: {k: clean(v) for k, v in kv.items()}
                for s, kv in self.raw.items()}


def _resolve(values: dict) -> RunConfig:
    det = []
    for ch in ("ch0", "ch1"):
        det.append(DetectorModel(
            efficiency=values["detectors"][f"{ch}.efficiency"],
            irf_sigma=values["detectors"][f"{ch}.irf_sigma"],
            dark_rate=values["detectors"][f"{ch}.dark_rate"],
            dead_time=values["detectors"][f"{ch}.dead_time"],
        ))
    try:
        emitter = EmitterModel(
            t1=values["emitter"]["t1"],
            t2_star=values["emitter"]["t2_star"],
            excitation_prob=values["emitter"]["excitation_prob"],
            contamination_prob=values["emitter"]["contamination_prob"],
            blink=BlinkModel(values["blink"]["a_blink"], values["blink"]["t_blink"]),
        )
        clock = ExcitationClock(values["clock"]["rep_period"],
                                values["clock"]["n_pulses"])
        corr = CorrConfig(values["analysis"]["bin_width"],
                          values["analysis"]["window"],
                          values["analysis"]["peak_window"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        emitter=emitter,
        clock=clock,
        setup=values["setup"]["kind"],
        detectors=(det[0], det[1]),
        seed=values["seed"]["seed"],
        corr=corr,
        decay_bin_width=values["analysis"]["decay_bin_width"],
        m_range=values["analysis"]["m_range"],
        far_min=values["analysis"]["far_min"],
        t1_ref=Measured(values["analysis"]["t1_ref"],
                        values["analysis"]["t1_ref_sigma"]),
        raw=values,
    )


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    values: dict = {}
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for key, (fn, default) in keys.items():
            values[section][key] = fn(default, f"[{section}] {key}")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{origin}: unknown key [{section}] {key}")
            fn, _default = _SCHEMA[section][key]
            values[section][key] = fn(value, f"[{section}] {key}")
    return _resolve(values)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, origin=str(path))
