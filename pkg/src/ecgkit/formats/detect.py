"""File-format sniffing: magic bytes first, filename extension second."""

from __future__ import annotations

from dataclasses import dataclass

from . import UnknownFormat

_EXTENSIONS = {
    ".csv": "csv",
    ".npy": "npy",
    ".npz": "npz",
    ".hea": "wfdb",
    ".dat": "wfdb",
    ".dcm": "dicom",
    ".mat": "mat",
    ".xml": "xml",
}


@dataclass(frozen=True)
class FormatDescriptor:
    format: str
    detected_by: str  # "magic_bytes" or "extension"


def detect_format(data: bytes, filename_hint: str = "") -> FormatDescriptor:
    """Identify the container format of ``data``.

    Magic bytes override the extension when the two disagree.
    """
    if not data:
        raise UnknownFormat("empty input")
    if data.startswith(b"\x93NUMPY"):
        return FormatDescriptor("npy", "magic_bytes")
    if data.startswith(b"PK\x03\x04"):
        return FormatDescriptor("npz", "magic_bytes")
    if len(data) >= 132 and data[128:132] == b"DICM":
        return FormatDescriptor("dicom", "magic_bytes")
    if data.startswith(b"MATLAB 5.0 MAT-file") or data.startswith(b"MATLAB 7.3 MAT-file"):
        return FormatDescriptor("mat", "magic_bytes")
    if data.lstrip()[:1] == b"<":
        return FormatDescriptor("xml", "magic_bytes")
    ext = "." + filename_hint.rsplit(".", 1)[-1].lower() if "." in filename_hint else ""
    if ext in _EXTENSIONS:
        return FormatDescriptor(_EXTENSIONS[ext], "extension")
    raise UnknownFormat(f"cannot detect format of {filename_hint or 'input'}")
