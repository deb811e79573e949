"""CSV reader: optional lead-name header, comma or semicolon delimited."""

from __future__ import annotations

import numpy as np

from ..errors import EcgKitError
from ..signal import RawRecording, canonical_lead_name, UnknownLead
from . import DEFAULT_RATE_HZ, positional_lead_names, AmbiguousShape


class MalformedCsv(EcgKitError):
    code = "malformed_csv"


def _split_rows(text: str):
    lines = [ln for ln in text.replace("\r\n", "\n").replace("\r", "\n").split("\n") if ln.strip()]
    if not lines:
        raise MalformedCsv("no data rows")
    delim = ";" if lines[0].count(";") > lines[0].count(",") else ","
    return [[cell.strip() for cell in ln.split(delim)] for ln in lines]


def parse_csv(data: bytes, rate_hz: float | None = None) -> RawRecording:
    """Parse CSV bytes; rows are time points and columns are leads."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedCsv(f"not UTF-8 text: {exc}") from None
    rows = _split_rows(text)

    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise MalformedCsv("ragged rows")

    names = None
    body = rows
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        header, body = rows[0], rows[1:]
        if not body:
            raise MalformedCsv("header without data rows")
        try:
            names = tuple(canonical_lead_name(cell) for cell in header)
        except UnknownLead:
            names = None  # fall back to positional naming below

    metadata: dict = {}
    dropped = 0
    if names is None:
        try:
            names, dropped = positional_lead_names(width)
        except AmbiguousShape:
            raise MalformedCsv(f"{width} columns cannot be mapped to leads without a header")

    try:
        values = np.array([[float(cell) for cell in row] for row in body], dtype=np.float64)
    except ValueError as exc:
        raise MalformedCsv(f"non-numeric cell: {exc}") from None

    samples = values.T
    if dropped:
        samples = samples[: len(names)]
        metadata["dropped_trailing_leads"] = str(dropped)
    if rate_hz is None:
        rate_hz = DEFAULT_RATE_HZ
        metadata["rate_assumed"] = str(DEFAULT_RATE_HZ)
    try:
        return RawRecording(
            lead_names=names,
            samples=samples,
            sampling_rate_hz=float(rate_hz),
            source_format="csv",
            metadata=metadata,
        )
    except ValueError as exc:
        raise MalformedCsv(str(exc)) from None
