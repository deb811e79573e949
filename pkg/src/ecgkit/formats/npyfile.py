"""NPY / NPZ readers with strict header validation.

Only little-endian f4/f8/i2/i4, C-order, 2-D payloads are accepted; the
lead axis is the one of size 8, 12, or 15.
"""

from __future__ import annotations

import ast
import io
import struct
import zipfile

import numpy as np

from ..errors import EcgKitError
from ..signal import RawRecording
from . import DEFAULT_RATE_HZ, TruncatedInput, orient_lead_major, positional_lead_names

_MAGIC = b"\x93NUMPY"
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"),
           "<i2": np.dtype("<i2"), "<i4": np.dtype("<i4")}


class BadHeader(EcgKitError):
    code = "bad_npy_header"


class UnsupportedDtype(EcgKitError):
    code = "unsupported_dtype"


def _read_header(data: bytes):
    if len(data) < 10:
        raise TruncatedInput("npy shorter than its fixed header")
    if not data.startswith(_MAGIC):
        raise BadHeader("missing NUMPY magic")
    major, minor = data[6], data[7]
    if major == 1:
        (hlen,) = struct.unpack_from("<H", data, 8)
        start = 10
    elif major == 2:
        if len(data) < 12:
            raise TruncatedInput("npy v2 header length missing")
        (hlen,) = struct.unpack_from("<I", data, 8)
        start = 12
    else:
        raise BadHeader(f"unsupported npy version {major}.{minor}")
    end = start + hlen
    if len(data) < end:
        raise TruncatedInput("npy header truncated")
    try:
        header = ast.literal_eval(data[start:end].decode("latin1").strip())
    except (ValueError, SyntaxError):
        raise BadHeader("header is not a dict literal") from None
    if not isinstance(header, dict) or not {"descr", "fortran_order", "shape"} <= set(header):
        raise BadHeader("header missing descr/fortran_order/shape")
    return header, end


def _decode_array(data: bytes):
    header, offset = _read_header(data)
    descr = header["descr"]
    if descr not in _DTYPES:
        raise UnsupportedDtype(f"descr {descr!r} not supported")
    if header["fortran_order"] is not False:
        raise BadHeader("fortran_order arrays are not supported")
    shape = header["shape"]
    if not (isinstance(shape, tuple) and len(shape) == 2
            and all(isinstance(d, int) and d > 0 for d in shape)):
        raise BadHeader(f"need a 2-D shape, got {shape!r}")
    dtype = _DTYPES[descr]
    nbytes = shape[0] * shape[1] * dtype.itemsize
    if len(data) - offset < nbytes:
        raise TruncatedInput("npy payload truncated")
    return np.frombuffer(data, dtype=dtype, count=shape[0] * shape[1], offset=offset).reshape(shape)


def _to_recording(arr, rate_hz):
    arr = orient_lead_major(arr)
    names, dropped = positional_lead_names(arr.shape[0])
    metadata: dict = {}
    if dropped:
        arr = arr[: len(names)]
        metadata["dropped_trailing_leads"] = str(dropped)
    if rate_hz is None:
        rate_hz = DEFAULT_RATE_HZ
        metadata["rate_assumed"] = str(DEFAULT_RATE_HZ)
    return names, arr, float(rate_hz), metadata


def parse_npy(data: bytes, rate_hz: float | None = None) -> RawRecording:
    """Parse a single NPY array into a recording."""
    names, arr, rate, metadata = _to_recording(_decode_array(data), rate_hz)
    return RawRecording(lead_names=names, samples=arr, sampling_rate_hz=rate,
                        source_format="npy", metadata=metadata)


def parse_npz(data: bytes, rate_hz: float | None = None) -> RawRecording:
    """Parse an NPZ archive, preferring entries named ``ecg`` or ``signal``."""
    try:
        archive = zipfile.ZipFile(io.BytesIO(data))
        entries = archive.namelist()
    except zipfile.BadZipFile:
        raise TruncatedInput("not a readable zip archive") from None
    if not entries:
        raise BadHeader("empty npz archive")
    preferred = [n for n in entries if n.lower() in {"ecg.npy", "ecg", "signal.npy", "signal"}]
    candidates = preferred or [n for n in entries if n.lower().endswith(".npy")]
    if not candidates:
        raise BadHeader("no .npy entry in archive")
    try:
        payload = archive.read(candidates[0])
    except (zipfile.BadZipFile, EOFError, OSError):
        raise TruncatedInput("npz entry unreadable") from None
    names, arr, rate, metadata = _to_recording(_decode_array(payload), rate_hz)
    metadata["npz_entry"] = candidates[0]
    return RawRecording(lead_names=names, samples=arr, sampling_rate_hz=rate,
                        source_format="npz", metadata=metadata)
