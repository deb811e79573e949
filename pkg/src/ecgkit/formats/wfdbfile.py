"""WFDB header/signal reader, format 16 only.

Format 16 stores 16-bit two's-complement little-endian samples,
interleaved one frame at a time across signals.
"""

from __future__ import annotations

import numpy as np

from ..errors import EcgKitError
from ..signal import RawRecording
from . import TruncatedInput

_WFDB_DEFAULT_GAIN = 200.0


class UnsupportedWfdbFormat(EcgKitError):
    code = "unsupported_wfdb_format"


class HeaderMismatch(EcgKitError):
    code = "wfdb_header_mismatch"


def _parse_gain_field(token: str):
    """Split 'gain(baseline)/units' into its parts; gain 0 means default."""
    units = "mV"
    if "/" in token:
        token, units = token.split("/", 1)
    baseline = 0
    if "(" in token:
        token, rest = token.split("(", 1)
        if not rest.endswith(")"):
            raise HeaderMismatch(f"unbalanced baseline field: {token}({rest}")
        baseline = int(rest[:-1])
    try:
        gain = float(token)
    except ValueError:
        raise HeaderMismatch(f"bad gain field: {token!r}") from None
    if gain == 0:
        gain = _WFDB_DEFAULT_GAIN
    return gain, baseline, units


def _description(tokens):
    """Signal description: the trailing tokens after the optional numeric
    middle fields (adc resolution, zero, initial value, checksum, block)."""
    rest = list(tokens)
    while rest:
        try:
            int(rest[0])
            rest.pop(0)
        except ValueError:
            break
    return " ".join(rest)


def parse_wfdb(header_bytes: bytes, dat_bytes: bytes) -> RawRecording:
    """Parse a WFDB .hea/.dat pair into a recording."""
    try:
        text = header_bytes.decode("ascii")
    except UnicodeDecodeError as exc:
        raise HeaderMismatch(f"header is not ASCII: {exc}") from None
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise HeaderMismatch("empty header")
    head = lines[0].split()
    if len(head) < 4:
        raise HeaderMismatch("record line needs: name n_sig fs n_samples")
    try:
        n_sig = int(head[1])
        fs = float(head[2])
        n_samples = int(head[3])
    except ValueError as exc:
        raise HeaderMismatch(f"bad record line: {exc}") from None
    if n_sig < 1 or n_samples < 1 or fs <= 0:
        raise HeaderMismatch("record line values out of range")
    if len(lines) - 1 < n_sig:
        raise HeaderMismatch(f"header declares {n_sig} signals but lists {len(lines) - 1}")

    gains, baselines, names = [], [], []
    for i, line in enumerate(lines[1: 1 + n_sig]):
        tokens = line.split()
        if len(tokens) < 3:
            raise HeaderMismatch(f"signal line {i} needs: file format gain(baseline)/units")
        if tokens[1] != "16":
            raise UnsupportedWfdbFormat(f"signal format {tokens[1]!r}; only format 16 is supported")
        gain, baseline, _units = _parse_gain_field(tokens[2])
        gains.append(gain)
        baselines.append(baseline)
        names.append(_description(tokens[3:]) or f"sig{i}")

    expected = n_sig * n_samples * 2
    if len(dat_bytes) != expected:
        raise HeaderMismatch(
            f"dat holds {len(dat_bytes)} bytes, header implies {expected}")

    raw = np.frombuffer(dat_bytes, dtype="<i2").reshape(n_samples, n_sig).T.astype(np.int64)
    raw = raw - np.asarray(baselines, dtype=np.int64)[:, None]

    metadata = {"record": head[0]}
    if len(set(gains)) == 1:
        samples = raw
        adc_gain = gains[0]
    else:
        # A single scalar gain cannot describe mixed-gain signals, so
        # convert to millivolts here and record unit gain.
        samples = raw.astype(np.float64) / np.asarray(gains, dtype=np.float64)[:, None]
        adc_gain = 1.0
        metadata["per_signal_gains"] = ",".join(str(g) for g in gains)

    try:
        return RawRecording(lead_names=tuple(names), samples=samples, sampling_rate_hz=fs,
                            adc_gain=adc_gain, source_format="wfdb", metadata=metadata)
    except ValueError as exc:
        raise HeaderMismatch(str(exc)) from None
