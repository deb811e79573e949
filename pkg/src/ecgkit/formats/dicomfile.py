"""Reader for DICOM waveform files (explicit VR little endian).

Only the part-10 explicit-VR-LE encoding with a 16-bit signed ("SS")
WaveformSequence is supported; anything else fails loudly rather than
being guessed at.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import EcgKitError
from ..signal import RawRecording, UnknownLead, canonical_lead_name
from . import TruncatedInput

EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"

_LONG_VRS = {b"OB", b"OW", b"OF", b"SQ", b"UT", b"UN"}
_TEXT_VRS = {b"AE", b"AS", b"CS", b"DA", b"DS", b"DT", b"IS", b"LO", b"LT",
             b"PN", b"SH", b"ST", b"TM", b"UI", b"UT"}

_TAG_TRANSFER_SYNTAX = (0x0002, 0x0010)
_TAG_WAVEFORM_SEQ = (0x5400, 0x0100)
_TAG_N_CHANNELS = (0x003A, 0x0005)
_TAG_N_SAMPLES = (0x003A, 0x0010)
_TAG_FREQUENCY = (0x003A, 0x001A)
_TAG_CHANNEL_DEFS = (0x003A, 0x0200)
_TAG_CHANNEL_SOURCE = (0x003A, 0x0208)
_TAG_SENSITIVITY = (0x003A, 0x0210)
_TAG_SENSITIVITY_UNITS = (0x003A, 0x0211)
_TAG_CODE_VALUE = (0x0008, 0x0100)
_TAG_CODE_MEANING = (0x0008, 0x0104)
_TAG_BITS_ALLOCATED = (0x5400, 0x1004)
_TAG_INTERPRETATION = (0x5400, 0x1006)
_TAG_WAVEFORM_DATA = (0x5400, 0x1010)

_ITEM = (0xFFFE, 0xE000)
_ITEM_DELIM = (0xFFFE, 0xE00D)
_SEQ_DELIM = (0xFFFE, 0xE0DD)

_UNDEFINED = 0xFFFFFFFF


class UnsupportedTransferSyntax(EcgKitError):
    code = "unsupported_transfer_syntax"


class MissingWaveform(EcgKitError):
    code = "missing_waveform"


class UnsupportedBits(EcgKitError):
    code = "unsupported_bits"


class _Reader:
    def __init__(self, data: bytes, pos: int, end: int):
        self.data = data
        self.pos = pos
        self.end = end

    def remaining(self) -> int:
        return self.end - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.remaining() < n:
            raise TruncatedInput("dicom element runs past the end of the file")
        out = self.data[self.pos: self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def peek_tag(self):
        if self.remaining() < 4:
            return None
        return struct.unpack_from("<HH", self.data, self.pos)


def _decode_value(vr: bytes, payload: bytes):
    if vr == b"US":
        if len(payload) < 2:
            raise TruncatedInput("US value shorter than two bytes")
        return struct.unpack("<H", payload[:2])[0]
    if vr == b"UL":
        if len(payload) < 4:
            raise TruncatedInput("UL value shorter than four bytes")
        return struct.unpack("<I", payload[:4])[0]
    if vr in _TEXT_VRS:
        return payload.decode("ascii", errors="replace").strip("\x00 ").split("\\")[0].strip()
    return payload


def _read_sequence(reader: _Reader, length: int):
    """Read SQ items; each item is parsed as a nested dataset."""
    end = reader.end if length == _UNDEFINED else reader.pos + length
    if end > reader.end:
        raise TruncatedInput("sequence longer than the file")
    items = []
    while reader.pos < end:
        tag = (reader.u16(), reader.u16())
        item_len = reader.u32()
        if tag == _SEQ_DELIM:
            break
        if tag != _ITEM:
            raise UnsupportedTransferSyntax(f"unexpected tag {tag} inside a sequence")
        if item_len == _UNDEFINED:
            items.append(_read_dataset(reader, end, stop_at_item_delim=True))
        else:
            sub = _Reader(reader.data, reader.pos, reader.pos + item_len)
            if sub.end > reader.end:
                raise TruncatedInput("sequence item longer than the file")
            items.append(_read_dataset(sub, sub.end))
            reader.pos = sub.end
    return items


def _read_element(reader: _Reader):
    tag = (reader.u16(), reader.u16())
    if tag[0] == 0xFFFE:
        length = reader.u32()
        return tag, None, length
    vr = reader.take(2)
    if not (vr.isalpha() and vr.isupper()):
        raise UnsupportedTransferSyntax(
            f"element {tag} carries no value representation; implicit VR is not supported")
    if vr in _LONG_VRS:
        reader.take(2)
        length = reader.u32()
    else:
        length = reader.u16()
    return tag, vr, length


def _read_dataset(reader: _Reader, end: int, stop_at_item_delim: bool = False):
    out = {}
    while reader.pos < end:
        tag, vr, length = _read_element(reader)
        if stop_at_item_delim and tag == _ITEM_DELIM:
            break
        if vr == b"SQ":
            out.setdefault(tag, _read_sequence(reader, length))
            continue
        if length == _UNDEFINED:
            raise UnsupportedTransferSyntax(f"undefined length on non-sequence element {tag}")
        payload = reader.take(length)
        out.setdefault(tag, _decode_value(vr, payload))
    return out


def _channel_definitions(items):
    names, sensitivities = [], []
    for i, item in enumerate(items):
        name = f"ch{i}"
        source = item.get(_TAG_CHANNEL_SOURCE)
        if source and isinstance(source, list) and source:
            name = source[0].get(_TAG_CODE_MEANING, name) or name
        try:
            # Code meanings are usually "Lead II" style; store canonically.
            name = canonical_lead_name(name)
        except UnknownLead:
            pass
        names.append(name)
        raw = item.get(_TAG_SENSITIVITY)
        try:
            sens = float(raw) if raw not in (None, "") else 1.0
        except (TypeError, ValueError):
            raise UnsupportedBits(f"unreadable channel sensitivity {raw!r}") from None
        unit = "mV"
        units_seq = item.get(_TAG_SENSITIVITY_UNITS)
        if units_seq and isinstance(units_seq, list) and units_seq:
            unit = units_seq[0].get(_TAG_CODE_VALUE, "mV") or "mV"
        if unit == "uV":
            sens /= 1000.0
        if sens <= 0:
            raise UnsupportedBits(f"non-positive channel sensitivity {sens}")
        sensitivities.append(sens)
    return names, sensitivities


def parse_dicom(data: bytes) -> RawRecording:
    """Parse a DICOM waveform file into a recording."""
    if len(data) < 132 or data[128:132] != b"DICM":
        raise UnsupportedTransferSyntax("missing DICM marker at offset 128")
    reader = _Reader(data, 132, len(data))

    # File-meta group (0002,xxxx) is always explicit VR LE; it names the
    # transfer syntax used by the body.
    meta = {}
    while True:
        tag = reader.peek_tag()
        if tag is None or tag[0] != 0x0002:
            break
        tag, vr, length = _read_element(reader)
        if length == _UNDEFINED:
            raise UnsupportedTransferSyntax("undefined length in file meta group")
        meta[tag] = _decode_value(vr, reader.take(length))
    syntax = meta.get(_TAG_TRANSFER_SYNTAX, EXPLICIT_VR_LE)
    if syntax != EXPLICIT_VR_LE:
        raise UnsupportedTransferSyntax(f"transfer syntax {syntax} is not explicit VR little endian")

    body = _read_dataset(reader, len(data))
    waveforms = body.get(_TAG_WAVEFORM_SEQ)
    if not waveforms:
        raise MissingWaveform("no WaveformSequence (5400,0100)")
    item = waveforms[0]

    for required, label in [(_TAG_N_CHANNELS, "channel count"),
                            (_TAG_N_SAMPLES, "sample count"),
                            (_TAG_FREQUENCY, "sampling frequency"),
                            (_TAG_WAVEFORM_DATA, "waveform data")]:
        if required not in item:
            raise MissingWaveform(f"waveform item lacks {label} {required}")

    bits = item.get(_TAG_BITS_ALLOCATED)
    interp = item.get(_TAG_INTERPRETATION)
    if bits != 16 or interp != "SS":
        raise UnsupportedBits(f"need 16-bit SS samples, got bits={bits} interpretation={interp!r}")

    n_channels = int(item[_TAG_N_CHANNELS])
    n_samples = int(item[_TAG_N_SAMPLES])
    try:
        rate = float(item[_TAG_FREQUENCY])
    except (TypeError, ValueError):
        raise MissingWaveform("unreadable sampling frequency") from None
    if n_channels < 1 or n_samples < 1 or rate <= 0:
        raise MissingWaveform("waveform dimensions out of range")

    payload = item[_TAG_WAVEFORM_DATA]
    if not isinstance(payload, (bytes, bytearray)):
        raise MissingWaveform("waveform data is not a byte string")
    if len(payload) < n_channels * n_samples * 2:
        raise TruncatedInput("waveform data shorter than its declared size")
    raw = np.frombuffer(payload, dtype="<i2", count=n_channels * n_samples)
    samples = raw.reshape(n_samples, n_channels).T.astype(np.int64)

    defs = item.get(_TAG_CHANNEL_DEFS) or []
    names, sens = _channel_definitions(defs)
    if len(names) != n_channels:
        names = [f"ch{i}" for i in range(n_channels)]
        sens = [1.0] * n_channels

    metadata = {"transfer_syntax": syntax}
    if len(set(sens)) == 1:
        adc_gain = 1.0 / sens[0]
        out = samples
    else:
        out = samples.astype(np.float64) * np.asarray(sens)[:, None]
        adc_gain = 1.0
        metadata["per_channel_sensitivity"] = ",".join(str(s) for s in sens)

    try:
        return RawRecording(lead_names=tuple(names), samples=out, sampling_rate_hz=rate,
                            adc_gain=adc_gain, source_format="dicom", metadata=metadata)
    except ValueError as exc:
        raise MissingWaveform(str(exc)) from None
