"""Exporters: matrices to csv/npy/json, fiducials to csv/json."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from ..errors import EcgKitError
from ..signal import LEAD_ORDER, RawRecording, StandardEcg

_MATRIX_KINDS = {"raw", "standard", "median_beats", "aligned"}
_FORMATS = {"csv", "npy", "json"}


class UnsupportedCombination(EcgKitError):
    code = "unsupported_export"


@dataclass(frozen=True)
class ExportRequest:
    what: str
    format: str

    def __post_init__(self):
        if self.what not in _MATRIX_KINDS | {"fiducials"}:
            raise UnsupportedCombination(f"unknown export kind {self.what!r}")
        if self.format not in _FORMATS:
            raise UnsupportedCombination(f"unknown export format {self.format!r}")
        if self.what == "fiducials" and self.format == "npy":
            raise UnsupportedCombination("fiducials export only as json or csv")


def _matrix_view(obj):
    """Matrix, lead names and rate for any exportable signal object."""
    if isinstance(obj, StandardEcg):
        return obj.samples, list(obj.lead_names), StandardEcg.RATE_HZ
    if isinstance(obj, RawRecording):
        return np.asarray(obj.samples, dtype=np.float64), list(obj.lead_names), obj.sampling_rate_hz
    samples = getattr(obj, "samples", None)
    if samples is not None:
        rate = getattr(obj, "rate_hz", StandardEcg.RATE_HZ)
        matrix = np.asarray(samples, dtype=np.float64)
        return matrix, list(LEAD_ORDER[: matrix.shape[0]]), rate
    raise UnsupportedCombination(f"cannot export object of type {type(obj).__name__}")


def _matrix_csv(matrix, names):
    lines = [",".join(names)]
    for col in matrix.T:
        lines.append(",".join(f"{v:.17g}" for v in col))
    return ("\n".join(lines) + "\n").encode("utf-8")


def _matrix_npy(matrix):
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(matrix, dtype=np.float64))
    return buf.getvalue()


def _matrix_json(obj, matrix, names, rate):
    doc = {"leads": names, "rate_hz": rate, "samples": [list(row) for row in matrix]}
    r_position = getattr(obj, "r_position", None)
    if r_position is not None:
        doc["r_position"] = int(r_position)
    template = getattr(obj, "template_rpeaks", None)
    if template is not None:
        doc["template_rpeaks"] = [int(i) for i in template]
    return json.dumps(doc).encode("utf-8")


def _fiducials_doc(fid):
    doc = {"rate_hz": fid.rate_hz, "r_peaks": sorted(int(i) for i in fid.r_peaks)}
    if fid.qrs_onsets is not None:
        doc["qrs_onsets"] = [int(i) for i in fid.qrs_onsets]
    if fid.qrs_offsets is not None:
        doc["qrs_offsets"] = [int(i) for i in fid.qrs_offsets]
    return doc


def export(obj, req: ExportRequest) -> bytes:
    """Serialize a signal view or fiducial map per the request."""
    if req.what == "fiducials":
        if not hasattr(obj, "r_peaks"):
            raise UnsupportedCombination("fiducials export needs a FiducialMap")
        doc = _fiducials_doc(obj)
        if req.format == "json":
            return json.dumps(doc).encode("utf-8")
        onsets = doc.get("qrs_onsets", [""] * len(doc["r_peaks"]))
        offsets = doc.get("qrs_offsets", [""] * len(doc["r_peaks"]))
        lines = ["r_peak,qrs_onset,qrs_offset"]
        lines += [f"{r},{a},{b}" for r, a, b in zip(doc["r_peaks"], onsets, offsets)]
        return ("\n".join(lines) + "\n").encode("utf-8")

    if hasattr(obj, "r_peaks"):
        raise UnsupportedCombination("a FiducialMap exports only as fiducials")
    matrix, names, rate = _matrix_view(obj)
    if req.format == "csv":
        return _matrix_csv(matrix, names)
    if req.format == "npy":
        return _matrix_npy(matrix)
    return _matrix_json(obj, matrix, names, rate)
