"""Shared fixture builders: synthetic ECGs and binary file fixtures."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from ecgkit.signal import LEAD_ORDER, StandardEcg

# Per-lead amplitude profile so the 12 leads are distinct but lead II is
# the dominant one, as in a typical sinus-rhythm ECG.
LEAD_AMPLITUDES = np.array([0.6, 1.0, 0.4, -0.5, 0.2, 0.7, 0.3, 0.5, 0.8, 0.9, 0.7, 0.6])


def beat_times(bpm: float, duration: float = 10.0, t0: float = 0.5) -> np.ndarray:
    """Beat instants from t0 on; each beat keeps half a second of tail room."""
    period = 60.0 / bpm
    return np.arange(t0, duration - 0.5 + 1e-9, period)


def gaussian_train(bpm: float, duration: float = 10.0, rate: float = 100.0, t0: float = 0.5,
                   amp: float = 1.0, sigma_ms: float = 20.0, noise: float = 0.0,
                   seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One lead of gaussian R-wave bumps; returns (signal, true peak indices)."""
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    times = beat_times(bpm, duration, t0)
    sigma = sigma_ms / 1000.0
    x = np.zeros(n)
    for bt in times:
        x += amp * np.exp(-((t - bt) ** 2) / (2 * sigma**2))
    if noise > 0:
        x = x + np.random.default_rng(seed).normal(0.0, noise, size=n)
    return x, np.round(times * rate).astype(int)


def synthetic_ecg(bpm: float = 60.0, t0: float = 0.5, noise: float = 0.0, seed: int = 0,
                  beat_shape: np.ndarray | None = None) -> tuple[StandardEcg, np.ndarray]:
    """A 12-lead synthetic ECG with known R-peak positions.

    ``beat_shape`` optionally scales each lead's bump amplitude to fake a
    different morphology class.
    """
    amps = LEAD_AMPLITUDES if beat_shape is None else np.asarray(beat_shape)
    base, truth = gaussian_train(bpm, t0=t0, amp=1.0, noise=0.0)
    leads = np.outer(amps, base)
    if noise > 0:
        leads = leads + np.random.default_rng(seed).normal(0.0, noise, size=leads.shape)
    return StandardEcg(leads), truth


# ---------------------------------------------------------------------------
# WFDB fixture


def build_wfdb(signals: np.ndarray, fs: float = 500.0, gain: float = 200.0,
               baseline: int = 0, names=None, fmt: str = "16",
               record: str = "rec") -> tuple[bytes, bytes]:
    """Assemble a .hea/.dat pair byte by byte."""
    n_sig, n_samples = signals.shape
    names = names or [LEAD_ORDER[i] for i in range(n_sig)]
    lines = [f"{record} {n_sig} {fs:g} {n_samples}"]
    for i in range(n_sig):
        lines.append(f"{record}.dat {fmt} {gain:g}({baseline})/mV 16 0 0 0 0 {names[i]}")
    header = ("\n".join(lines) + "\n").encode("ascii")
    frames = np.asarray(signals, dtype="<i2").T.reshape(-1)
    return header, frames.tobytes()


# ---------------------------------------------------------------------------
# DICOM fixture (explicit VR little endian)

_LONG_VRS = {b"OB", b"OW", b"OF", b"SQ", b"UT", b"UN"}


def _pad(vr: bytes, payload: bytes) -> bytes:
    if len(payload) % 2:
        payload += b"\x00" if vr in (b"OB", b"OW", b"UN") else b" "
    return payload


def dicom_element(group: int, element: int, vr: bytes, payload: bytes) -> bytes:
    payload = _pad(vr, payload)
    head = struct.pack("<HH", group, element) + vr
    if vr in _LONG_VRS:
        return head + b"\x00\x00" + struct.pack("<I", len(payload)) + payload
    return head + struct.pack("<H", len(payload)) + payload


def dicom_item(content: bytes) -> bytes:
    return struct.pack("<HHI", 0xFFFE, 0xE000, len(content)) + content


def dicom_sequence(group: int, element: int, items: list[bytes]) -> bytes:
    body = b"".join(dicom_item(i) for i in items)
    return dicom_element(group, element, b"SQ", body)


def build_dicom(signals: np.ndarray, rate: float = 500.0, sensitivity: float = 0.001,
                names=None, bits: int = 16, interpretation: bytes = b"SS",
                transfer_syntax: str = "1.2.840.10008.1.2.1",
                include_waveform: bool = True) -> bytes:
    """Assemble a part-10 DICOM waveform file from scratch."""
    n_ch, n_samp = signals.shape
    names = names or [LEAD_ORDER[i] for i in range(n_ch)]

    meta = dicom_element(0x0002, 0x0010, b"UI", transfer_syntax.encode("ascii"))

    channel_items = []
    for i in range(n_ch):
        source = dicom_sequence(0x003A, 0x0208, [
            dicom_element(0x0008, 0x0104, b"LO", f"Lead {names[i]}".encode("ascii")),
        ])
        sens = dicom_element(0x003A, 0x0210, b"DS", f"{sensitivity:g}".encode("ascii"))
        units = dicom_sequence(0x003A, 0x0211, [
            dicom_element(0x0008, 0x0100, b"SH", b"mV"),
        ])
        channel_items.append(source + sens + units)

    wave_payload = np.asarray(signals, dtype="<i2").T.reshape(-1).tobytes()
    item_content = (
        dicom_element(0x003A, 0x0005, b"US", struct.pack("<H", n_ch))
        + dicom_element(0x003A, 0x0010, b"UL", struct.pack("<I", n_samp))
        + dicom_element(0x003A, 0x001A, b"DS", f"{rate:g}".encode("ascii"))
        + dicom_sequence(0x003A, 0x0200, channel_items)
        + dicom_element(0x5400, 0x1004, b"US", struct.pack("<H", bits))
        + dicom_element(0x5400, 0x1006, b"CS", interpretation)
        + dicom_element(0x5400, 0x1010, b"OW", wave_payload)
    )

    body = dicom_element(0x0008, 0x0060, b"CS", b"ECG")
    if include_waveform:
        body += dicom_sequence(0x5400, 0x0100, [item_content])

    return b"\x00" * 128 + b"DICM" + meta + body


@pytest.fixture
def ecg_60bpm() -> tuple[StandardEcg, np.ndarray]:
    return synthetic_ecg(bpm=60.0, t0=0.5)
