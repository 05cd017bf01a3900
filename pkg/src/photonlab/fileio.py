"""File formats: binary time-tag records, CSV tables and result JSON.

The .ptt tag format is: 8-byte magic "PTTAG\\0\\0\\1", little-endian
uint16 channel id, little-endian uint64 record count, then that many
little-endian uint64 picosecond timestamps in ascending order. A
single-column CSV with header ``timestamp_ps`` is accepted as an input
alternative. All JSON is emitted in canonical form (sorted keys, fixed
separators) so identical data gives identical bytes.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .correlate import Histogram, PeakTable, n_half_bins
from .fitting import FitResult
from .simulate import TimeTagStream

PTT_MAGIC = b"PTTAG\x00\x00\x01"


class FormatError(Exception):
    """Raised when a file does not match its declared schema."""


def write_ptt(path, stream: TimeTagStream) -> None:
    tags = np.ascontiguousarray(stream.tags, dtype="<u8")
    with open(path, "wb") as fh:
        fh.write(PTT_MAGIC)
        fh.write(struct.pack("<H", stream.channel))
        fh.write(struct.pack("<Q", tags.size))
        fh.write(tags.tobytes())


def read_ptt(path) -> TimeTagStream:
    with open(path, "rb") as fh:
        head = fh.read(len(PTT_MAGIC) + 10)
        if len(head) < len(PTT_MAGIC) + 10 or head[: len(PTT_MAGIC)] != PTT_MAGIC:
            raise FormatError(f"{path}: not a .ptt time-tag file")
        channel, count = struct.unpack_from("<HQ", head, len(PTT_MAGIC))
        data = fh.read(8 * count)
        if len(data) != 8 * count:
            raise FormatError(
                f"{path}: truncated, expected {count} records"
            )
        tags = np.frombuffer(data, dtype="<u8")
    _check_sorted(tags, path)
    return TimeTagStream(channel, tags.astype(np.uint64))


def _check_sorted(tags: np.ndarray, origin) -> None:
    if tags.size > 1:
        bad = np.flatnonzero(np.diff(tags.astype(np.int64)) <= 0)
        if bad.size:
            raise FormatError(
                f"{origin}: tags not strictly increasing at record {int(bad[0]) + 1}"
            )


def read_tag_csv(path, channel: int = 0) -> TimeTagStream:
    rows = _read_csv(path, ("timestamp_ps",))
    tags = rows[0].astype(np.int64)
    if np.any(tags < 0):
        raise FormatError(f"{path}: negative timestamp")
    _check_sorted(tags.astype(np.uint64), path)
    return TimeTagStream(channel, tags.astype(np.uint64))


def read_tags(path) -> TimeTagStream:
    """Read either a .ptt file or a timestamp_ps CSV, by extension."""
    if str(path).endswith(".csv"):
        return read_tag_csv(path)
    return read_ptt(path)


def _read_csv(path, header: tuple[str, ...]) -> list[np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if [c.strip() for c in first.split(",")] != list(header):
            raise FormatError(
                f"{path}: expected header {','.join(header)!r}, got {first!r}"
            )
        cols: list[list[float]] = [[] for _ in header]
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                for c, p in zip(cols, parts):
                    c.append(float(p))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
    return [np.asarray(c) for c in cols]


def write_histogram_csv(target, hist: Histogram) -> None:
    _write_lines(target, ["tau_ps,counts"] + [
        f"{int(t)},{int(c)}" for t, c in zip(hist.taus, hist.counts)
    ])


def read_histogram_csv(path) -> Histogram:
    tau, counts = _read_csv(path, ("tau_ps", "counts"))
    if tau.size < 3 or tau.size % 2 == 0:
        raise FormatError(f"{path}: histogram needs an odd number of >= 3 bins")
    steps = np.diff(tau)
    if not np.all(steps == steps[0]) or steps[0] <= 0:
        raise FormatError(f"{path}: bin centers must be uniformly increasing")
    if tau[(tau.size - 1) // 2] != 0:
        raise FormatError(f"{path}: center bin must sit at tau = 0")
    bw = int(steps[0])
    window = int(tau[-1])  # recovers the same bin layout for any source window
    return Histogram(bw, window, counts.astype(np.int64))


def write_peaks_csv(target, table: PeakTable) -> None:
    lines = ["m,area,sigma"]
    for m, a, s in zip(table.m, table.area, table.sigma):
        lines.append(f"{int(m)},{int(a)},{s:.6f}")
    _write_lines(target, lines)


def read_peaks_csv(path) -> PeakTable:
    m, area, _sigma = _read_csv(path, ("m", "area", "sigma"))
    return PeakTable(m.astype(np.int64), area.astype(np.int64))


def read_spectrum_csv(path, x_column: str) -> tuple[np.ndarray, np.ndarray]:
    x, y = _read_csv(path, (x_column, "counts"))
    return x, y


def _write_lines(target, lines) -> None:
    text = "\n".join(lines) + "\n"
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


def canonical_json(obj) -> str:
    """Canonical JSON text: sorted keys, two-space indent, newline at end.

    loads -> dumps of this form is byte-stable."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(target, obj) -> None:
    text = canonical_json(obj)
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


def fit_result_document(result: FitResult) -> dict:
    return result.as_dict()
