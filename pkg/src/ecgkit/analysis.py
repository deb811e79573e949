"""Beat-level analysis: R-peak detection, Rlign alignment, median beats.

R-peaks are found on lead II with a Pan-Tompkins pipeline: a 5-15 Hz
band-pass built from the difference of two centered moving averages, a
five-point derivative, squaring, 150 ms moving-window integration, and
adaptive dual thresholds with a 200 ms refractory period. Centered
(zero-phase) filters keep detections aligned with the raw waveform; each
detection is refined to the raw-signal maximum within +/-50 ms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .errors import EcgKitError
from .signal import StandardEcg


class NoBeatsFound(EcgKitError):
    code = "no_beats_found"


class TooFewBeats(EcgKitError):
    code = "too_few_beats"


@dataclass(frozen=True)
class FiducialMap:
    """Beat landmarks on lead II: R-peaks plus optional QRS bounds."""

    r_peaks: np.ndarray
    rate_hz: float
    qrs_onsets: np.ndarray | None = None
    qrs_offsets: np.ndarray | None = None

    def __post_init__(self):
        peaks = np.asarray(self.r_peaks, dtype=int)
        object.__setattr__(self, "r_peaks", peaks)
        if peaks.size and np.any(np.diff(peaks) <= 0):
            raise ValueError("r_peaks must be strictly increasing")
        for name in ("qrs_onsets", "qrs_offsets"):
            value = getattr(self, name)
            if value is not None:
                arr = np.asarray(value, dtype=int)
                if arr.shape != peaks.shape:
                    raise ValueError(f"{name} must align with r_peaks")
                object.__setattr__(self, name, arr)
        if self.qrs_onsets is not None and np.any(self.qrs_onsets >= peaks):
            raise ValueError("onsets must precede their r_peaks")
        if self.qrs_offsets is not None and np.any(self.qrs_offsets <= peaks):
            raise ValueError("offsets must follow their r_peaks")

    @property
    def n_beats(self) -> int:
        return int(self.r_peaks.size)


@dataclass(frozen=True)
class AlignedEcg:
    """Signal warped so R-peaks sit on a fixed template grid."""

    samples: np.ndarray
    template_rpeaks: tuple
    beats_used: int


@dataclass(frozen=True)
class MedianBeat:
    """Per-lead, per-sample median over R-aligned beat windows."""

    samples: np.ndarray
    r_position: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if not (0 <= self.r_position < samples.shape[1]):
            raise ValueError("r_position must fall inside the beat window")


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    width = max(1, width)
    return np.convolve(x, np.full(width, 1.0 / width), mode="same")


def detect_rpeaks(ecg: StandardEcg) -> FiducialMap:
    """Locate R-peaks on lead II; raises NoBeatsFound on flat or empty input."""
    x = ecg.samples[1]
    fs = StandardEcg.RATE_HZ
    if np.ptp(x) == 0:
        raise NoBeatsFound("lead II is constant")

    # Band-pass 5-15 Hz as a difference of moving averages (odd widths keep
    # the filters centered).
    w_hi = int(round(fs / 15.0)) | 1
    w_lo = int(round(fs / 5.0)) | 1
    band = _moving_average(x, w_hi) - _moving_average(x, w_lo)

    derivative = np.convolve(band, np.array([2, 1, 0, -1, -2]) / 8.0, mode="same")
    squared = derivative**2
    integrated = _moving_average(squared, int(round(0.150 * fs)))

    refractory = int(round(0.200 * fs))
    candidates, _ = find_peaks(integrated, distance=refractory)
    if candidates.size == 0:
        raise NoBeatsFound("no activity above the integration floor")

    learn = integrated[: int(2 * fs)]
    spki = 0.25 * float(np.max(learn))
    npki = 0.5 * float(np.mean(learn))
    threshold = npki + 0.25 * (spki - npki)

    accepted = []
    rejected = []
    for p in candidates:
        v = integrated[p]
        if v > threshold:
            accepted.append(p)
            spki = 0.125 * v + 0.875 * spki
        else:
            rejected.append(p)
            npki = 0.125 * v + 0.875 * npki
        threshold = npki + 0.25 * (spki - npki)

    # Search back through long RR gaps with the lower threshold.
    if len(accepted) >= 2 and rejected:
        rr = np.diff(accepted)
        typical = float(np.median(rr))
        low_threshold = 0.5 * threshold
        extra = []
        for left, right, gap in zip(accepted[:-1], accepted[1:], rr):
            if gap > 1.66 * typical:
                inside = [q for q in rejected
                          if left + refractory < q < right - refractory
                          and integrated[q] > low_threshold]
                if inside:
                    extra.append(max(inside, key=lambda q: integrated[q]))
        accepted = sorted(accepted + extra)

    if not accepted:
        raise NoBeatsFound("no detection crossed the adaptive threshold")

    # Refine onto the raw-signal maximum within +/-50 ms.
    half = int(round(0.050 * fs))
    n = x.size
    refined = []
    for p in accepted:
        lo = max(0, p - half)
        hi = min(n, p + half + 1)
        refined.append(lo + int(np.argmax(x[lo:hi])))
    peaks = np.unique(refined)

    onsets, offsets = _qrs_bounds(integrated, peaks)
    return FiducialMap(r_peaks=peaks, rate_hz=fs, qrs_onsets=onsets, qrs_offsets=offsets)


def _qrs_bounds(integrated: np.ndarray, peaks: np.ndarray, fraction: float = 0.15):
    """QRS on/offsets as threshold crossings of the integration envelope."""
    n = integrated.size
    if peaks.size == 0 or peaks[0] <= 0 or peaks[-1] >= n - 1:
        return None, None
    onsets = np.empty_like(peaks)
    offsets = np.empty_like(peaks)
    for k, r in enumerate(peaks):
        level = fraction * max(integrated[r], np.max(integrated[max(0, r - 5): r + 6]))
        i = r - 1
        while i > 0 and integrated[i] > level:
            i -= 1
        onsets[k] = min(i, r - 1)
        j = r + 1
        while j < n - 1 and integrated[j] > level:
            j += 1
        offsets[k] = max(j, r + 1)
    return onsets, offsets


def extract_qrs_windows(ecg: StandardEcg, fid: FiducialMap, window_ms: float = 600.0):
    """One centered window per R-peak; windows that would truncate are dropped."""
    if fid.n_beats < 1:
        raise TooFewBeats("need at least one beat")
    width = int(round(window_ms * fid.rate_hz / 1000.0))
    half = width // 2
    n = ecg.samples.shape[1]
    windows = []
    for r in fid.r_peaks:
        start = r - half
        if start >= 0 and start + width <= n:
            windows.append(ecg.samples[:, start: start + width].copy())
    return windows


def template_grid(target_bpm: float = 60.0, rate_hz: float = StandardEcg.RATE_HZ,
                  n_samples: int = StandardEcg.N_SAMPLES, start_s: float = 0.5) -> np.ndarray:
    """Fixed template R-peak positions: evenly spaced beats from 0.5 s on."""
    period = 60.0 / target_bpm
    times = np.arange(start_s, n_samples / rate_hz, period)
    grid = np.round(times * rate_hz).astype(int)
    return grid[grid < n_samples]


def rlign_transform(ecg: StandardEcg, fid: FiducialMap, target_bpm: float = 60.0) -> AlignedEcg:
    """Warp each inter-peak segment onto the fixed template grid.

    Segments resample linearly; the lead-in and tail shift rigidly with
    their anchor beat and edge-pad where the input runs out.
    """
    peaks = fid.r_peaks
    if peaks.size < 2:
        raise TooFewBeats("alignment needs at least two beats")
    grid = template_grid(target_bpm)
    used = int(min(peaks.size, grid.size))
    if used < 2:
        raise TooFewBeats("template grid leaves fewer than two usable beats")
    anchors_t = grid[:used].astype(np.float64)
    anchors_p = peaks[:used].astype(np.float64)

    n = ecg.samples.shape[1]
    j = np.arange(n, dtype=np.float64)
    src = np.interp(j, anchors_t, anchors_p)
    lead_in = j < anchors_t[0]
    src[lead_in] = anchors_p[0] - (anchors_t[0] - j[lead_in])
    tail = j > anchors_t[-1]
    src[tail] = anchors_p[-1] + (j[tail] - anchors_t[-1])
    src = np.clip(src, 0.0, n - 1.0)

    base = np.arange(n, dtype=np.float64)
    samples = np.stack([np.interp(src, base, row) for row in ecg.samples])
    return AlignedEcg(samples=samples, template_rpeaks=tuple(int(g) for g in grid),
                      beats_used=used)


def median_beat(ecg: StandardEcg, fid: FiducialMap, pre_ms: float = 200.0,
                post_ms: float = 400.0) -> MedianBeat:
    """Median across all complete R-aligned beat windows."""
    pre = int(round(pre_ms * fid.rate_hz / 1000.0))
    post = int(round(post_ms * fid.rate_hz / 1000.0))
    n = ecg.samples.shape[1]
    stacks = [ecg.samples[:, r - pre: r + post]
              for r in fid.r_peaks if r - pre >= 0 and r + post <= n]
    if not stacks:
        raise TooFewBeats("no complete beat window fits the signal")
    return MedianBeat(samples=np.median(np.stack(stacks), axis=0), r_position=pre)
