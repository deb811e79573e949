"""MAT v5 reader (little endian, uncompressed) for numeric 2-D arrays."""

from __future__ import annotations

import struct

import numpy as np

from ..errors import EcgKitError
from ..signal import RawRecording
from . import DEFAULT_RATE_HZ, TruncatedInput, orient_lead_major, positional_lead_names

_MI_INT8 = 1
_MI_UINT8 = 2
_MI_INT16 = 3
_MI_UINT16 = 4
_MI_INT32 = 5
_MI_UINT32 = 6
_MI_SINGLE = 7
_MI_DOUBLE = 9
_MI_MATRIX = 14
_MI_COMPRESSED = 15

_STORAGE_DTYPES = {
    _MI_INT8: "<i1", _MI_UINT8: "<u1", _MI_INT16: "<i2", _MI_UINT16: "<u2",
    _MI_INT32: "<i4", _MI_UINT32: "<u4", _MI_SINGLE: "<f4", _MI_DOUBLE: "<f8",
}

_MX_DOUBLE_CLASS = 6
_MX_INT16_CLASS = 10

_COMPLEX_FLAG = 1 << 11


class UnsupportedMatVersion(EcgKitError):
    code = "unsupported_mat_version"


class NoNumericVariable(EcgKitError):
    code = "no_numeric_variable"


def _read_tagged(data: bytes, pos: int):
    """Read one tagged element, handling the packed small-element form.

    Returns (mi_type, payload, next_pos); next_pos is 8-byte aligned.
    """
    if len(data) - pos < 8:
        raise TruncatedInput("mat element tag truncated")
    dtype, nbytes = struct.unpack_from("<II", data, pos)
    if dtype >> 16:
        small_len = dtype >> 16
        dtype &= 0xFFFF
        payload = data[pos + 4: pos + 4 + small_len]
        if len(payload) < small_len:
            raise TruncatedInput("small mat element truncated")
        return dtype, payload, pos + 8
    start = pos + 8
    end = start + nbytes
    if end > len(data):
        raise TruncatedInput("mat element payload truncated")
    aligned = end + (-nbytes) % 8  # payloads pad to 8 bytes, except at EOF
    return dtype, data[start:end], min(aligned, len(data))


def _extract_matrix(payload: bytes):
    """Pull a numeric 2-D array out of a miMATRIX payload, or None."""
    pos = 0
    dtype, flags, pos = _read_tagged(payload, pos)
    if dtype != _MI_UINT32 or len(flags) < 8:
        return None
    (flag_word,) = struct.unpack_from("<I", flags, 0)
    klass = flag_word & 0xFF
    if klass not in (_MX_DOUBLE_CLASS, _MX_INT16_CLASS) or flag_word & _COMPLEX_FLAG:
        return None
    dtype, dim_bytes, pos = _read_tagged(payload, pos)
    if dtype != _MI_INT32:
        return None
    dims = struct.unpack(f"<{len(dim_bytes) // 4}i", dim_bytes)
    if len(dims) != 2 or min(dims) < 1:
        return None
    _dtype, _name, pos = _read_tagged(payload, pos)  # array name, unused
    dtype, body, pos = _read_tagged(payload, pos)
    storage = _STORAGE_DTYPES.get(dtype)
    if storage is None:
        return None
    count = dims[0] * dims[1]
    arr = np.frombuffer(body, dtype=storage, count=count) if len(body) >= count * np.dtype(storage).itemsize else None
    if arr is None:
        raise TruncatedInput("mat numeric data truncated")
    target = np.float64 if klass == _MX_DOUBLE_CLASS else np.int16
    return arr.astype(target).reshape(dims, order="F")


def parse_mat(data: bytes, rate_hz: float | None = None) -> RawRecording:
    """Parse the first numeric 2-D variable of a MAT v5 file."""
    if len(data) < 128:
        raise TruncatedInput("mat file shorter than its 128-byte header")
    if not data.startswith(b"MATLAB 5.0 MAT-file"):
        raise UnsupportedMatVersion("only MATLAB 5.0 MAT-files are supported")
    endian = data[126:128]
    if endian != b"IM":
        raise UnsupportedMatVersion(f"unsupported byte order marker {endian!r}")

    pos = 128
    matrix = None
    while pos < len(data):
        dtype, payload, pos = _read_tagged(data, pos)
        if dtype == _MI_COMPRESSED:
            raise UnsupportedMatVersion("compressed variables (v7) are not supported")
        if dtype == _MI_MATRIX:
            matrix = _extract_matrix(payload)
            if matrix is not None:
                break
    if matrix is None:
        raise NoNumericVariable("no uncompressed numeric 2-D variable found")

    arr = orient_lead_major(matrix)
    names, dropped = positional_lead_names(arr.shape[0])
    metadata: dict = {}
    if dropped:
        arr = arr[: len(names)]
        metadata["dropped_trailing_leads"] = str(dropped)
    if rate_hz is None:
        rate_hz = DEFAULT_RATE_HZ
        metadata["rate_assumed"] = str(DEFAULT_RATE_HZ)
    return RawRecording(lead_names=names, samples=arr, sampling_rate_hz=float(rate_hz),
                        source_format="mat", metadata=metadata)
