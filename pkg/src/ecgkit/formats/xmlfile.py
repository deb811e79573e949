"""XML reader for the documented schema.

The schema is deliberately small: a root element with a required ``rate``
attribute (and optional ``gain``), one child per lead, each child named
after its lead or carrying a ``lead``/``name`` attribute, with
whitespace-separated sample values as text. Vendor dialects are rejected,
not guessed.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

from ..errors import EcgKitError
from ..signal import RawRecording, UnknownLead, canonical_lead_name
from . import MalformedFile


class MissingRate(EcgKitError):
    code = "missing_rate"


class UnknownLeadElement(EcgKitError):
    code = "unknown_lead_element"


class MalformedNumbers(EcgKitError):
    code = "malformed_numbers"


def parse_xml(data: bytes) -> RawRecording:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedFile(f"not well-formed XML: {exc}") from None

    rate_attr = root.get("rate")
    if rate_attr is None:
        raise MissingRate("root element lacks the required rate attribute")
    try:
        rate = float(rate_attr)
    except ValueError:
        raise MissingRate(f"rate attribute is not numeric: {rate_attr!r}") from None
    if rate <= 0:
        raise MissingRate(f"rate must be positive, got {rate}")

    gain = None
    if root.get("gain") is not None:
        try:
            gain = float(root.get("gain"))
        except ValueError:
            raise MalformedNumbers(f"gain attribute is not numeric: {root.get('gain')!r}") from None

    names, rows = [], []
    for child in root:
        label = child.get("lead") or child.get("name") or child.tag
        try:
            names.append(canonical_lead_name(label))
        except UnknownLead:
            raise UnknownLeadElement(f"element {child.tag!r} does not identify a lead") from None
        try:
            rows.append([float(tok) for tok in (child.text or "").split()])
        except ValueError as exc:
            raise MalformedNumbers(f"lead {label}: {exc}") from None

    if not rows:
        raise UnknownLeadElement("no lead elements present")
    if len({len(r) for r in rows}) != 1 or len(rows[0]) == 0:
        raise MalformedNumbers("leads carry differing or zero sample counts")

    try:
        return RawRecording(lead_names=tuple(names), samples=np.array(rows, dtype=np.float64),
                            sampling_rate_hz=rate, adc_gain=gain, source_format="xml")
    except ValueError as exc:
        raise UnknownLeadElement(str(exc)) from None
