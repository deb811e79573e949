"""Readers for the supported ECG file formats and exporters for views.

Each parser consumes raw bytes and returns a
:class:`~ecgkit.signal.RawRecording`; every failure mode raises a
structured error, including torn or truncated inputs.
"""

from __future__ import annotations

from ..errors import EcgKitError
from ..signal import EIGHT_LEAD_SET, LEAD_ORDER


class UnknownFormat(EcgKitError):
    code = "unknown_format"


class TruncatedInput(EcgKitError):
    code = "truncated_input"


class MalformedFile(EcgKitError):
    code = "malformed_file"


class AmbiguousShape(EcgKitError):
    code = "ambiguous_shape"


DEFAULT_RATE_HZ = 500.0


def positional_lead_names(n_leads: int):
    """Lead names for headerless data, by column count.

    Returns (names, n_dropped): 15-column sources keep the canonical first
    12 and drop the trailing extras.
    """
    if n_leads == 12:
        return LEAD_ORDER, 0
    if n_leads == 8:
        return EIGHT_LEAD_SET, 0
    if n_leads == 15:
        return LEAD_ORDER, 3
    raise AmbiguousShape(f"cannot assign lead names to {n_leads} channels")


def orient_lead_major(arr):
    """Put the lead axis first; the axis of size 8/12/15 is the lead axis,
    rows winning when both qualify."""
    rows, cols = arr.shape
    if rows in (8, 12, 15):
        return arr
    if cols in (8, 12, 15):
        return arr.T
    raise AmbiguousShape(f"neither axis of shape {arr.shape} looks like a lead axis")


from .detect import FormatDescriptor, detect_format  # noqa: E402
from .csvfile import MalformedCsv, parse_csv  # noqa: E402
from .npyfile import BadHeader, UnsupportedDtype, parse_npy, parse_npz  # noqa: E402
from .wfdbfile import HeaderMismatch, UnsupportedWfdbFormat, parse_wfdb  # noqa: E402
from .dicomfile import MissingWaveform, UnsupportedBits, UnsupportedTransferSyntax, parse_dicom  # noqa: E402
from .matfile import NoNumericVariable, UnsupportedMatVersion, parse_mat  # noqa: E402
from .xmlfile import MalformedNumbers, MissingRate, UnknownLeadElement, parse_xml  # noqa: E402
from .export import ExportRequest, UnsupportedCombination, export  # noqa: E402


def parse(data: bytes, filename_hint: str = "", dat: bytes | None = None,
          rate_hz: float | None = None):
    """Detect the format of ``data`` and parse it into a RawRecording.

    WFDB input passes the header as ``data`` and the signal file as
    ``dat``. ``rate_hz`` overrides the default for formats that do not
    carry a sampling rate.
    """
    desc = detect_format(data, filename_hint)
    if desc.format == "csv":
        return parse_csv(data, rate_hz=rate_hz)
    if desc.format == "npy":
        return parse_npy(data, rate_hz=rate_hz)
    if desc.format == "npz":
        return parse_npz(data, rate_hz=rate_hz)
    if desc.format == "wfdb":
        if dat is None:
            raise HeaderMismatch("wfdb input needs the .dat signal file alongside the header")
        return parse_wfdb(data, dat)
    if desc.format == "dicom":
        return parse_dicom(data)
    if desc.format == "mat":
        return parse_mat(data, rate_hz=rate_hz)
    if desc.format == "xml":
        return parse_xml(data)
    raise UnknownFormat(desc.format)


__all__ = [
    "AmbiguousShape", "BadHeader", "DEFAULT_RATE_HZ", "ExportRequest",
    "FormatDescriptor", "HeaderMismatch", "MalformedCsv", "MalformedFile",
    "MalformedNumbers", "MissingRate", "MissingWaveform", "NoNumericVariable",
    "TruncatedInput", "UnknownFormat", "UnknownLeadElement", "UnsupportedBits",
    "UnsupportedCombination", "UnsupportedDtype", "UnsupportedMatVersion",
    "UnsupportedTransferSyntax", "UnsupportedWfdbFormat", "detect_format",
    "export", "orient_lead_major", "parse", "parse_csv", "parse_dicom",
    "parse_mat", "parse_npy", "parse_npz", "parse_wfdb", "parse_xml",
    "positional_lead_names",
]
