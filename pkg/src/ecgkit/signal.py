"""Canonical 12-lead ECG representation and the normalization pipeline.

Any parsed recording is brought onto a fixed canvas: 12 leads in the
conventional order, 100 Hz, 1000 samples, millivolt scale. The stages run
in a fixed order: lead canonicalization, millivolt scaling, FFT
resampling, duration fit, then optional baseline-wander removal and
quantile clipping.

All functions are pure and never mutate their inputs; they are safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EcgKitError

LEAD_ORDER = ("I", "II", "III", "aVR", "aVL", "aVF",
              "V1", "V2", "V3", "V4", "V5", "V6")
EIGHT_LEAD_SET = ("I", "II", "V1", "V2", "V3", "V4", "V5", "V6")

_LEAD_BY_KEY = {name.upper(): name for name in LEAD_ORDER}


class UnknownLead(EcgKitError):
    code = "unknown_lead"


class IncompleteLeadSet(EcgKitError):
    code = "incomplete_lead_set"


class BadRate(EcgKitError):
    code = "bad_rate"


class NonPositiveGain(EcgKitError):
    code = "non_positive_gain"


@dataclass(frozen=True)
class RawRecording:
    """A parsed multi-lead recording in source units.

    ``samples`` is shaped (n_leads, n_samples); the dtype is preserved from
    the source because integer-typed data without an explicit gain is
    assumed to be raw ADC counts (see :func:`normalize`).
    """

    lead_names: tuple
    samples: np.ndarray
    sampling_rate_hz: float
    adc_gain: float | None = None
    baseline: np.ndarray | None = None
    source_format: str = "unknown"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples))
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "lead_names", tuple(self.lead_names))
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError(f"samples must be a non-empty 2-D matrix, got shape {samples.shape}")
        if not self.sampling_rate_hz > 0:
            raise ValueError("sampling_rate_hz must be positive")
        if len(self.lead_names) != samples.shape[0]:
            raise ValueError("lead_names length must equal the number of sample rows")
        if len(set(self.lead_names)) != len(self.lead_names):
            raise ValueError("duplicate lead names")
        if self.baseline is not None:
            baseline = np.asarray(self.baseline, dtype=np.float64)
            if baseline.shape != (samples.shape[0],):
                raise ValueError("baseline must hold one offset per lead")
            object.__setattr__(self, "baseline", baseline)

    @property
    def n_leads(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class StandardEcg:
    """12 x 1000 millivolt matrix at 100 Hz in canonical lead order."""

    samples: np.ndarray

    RATE_HZ = 100.0
    N_SAMPLES = 1000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.shape != (12, self.N_SAMPLES):
            raise ValueError(f"expected (12, {self.N_SAMPLES}), got {samples.shape}")
        if not np.isfinite(samples).all():
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def lead_names(self) -> tuple:
        return LEAD_ORDER


@dataclass(frozen=True)
class NormalizationOptions:
    target_rate_hz: float = 100.0
    target_samples: int = 1000
    adc_gain_target: float = 1000.0
    baseline_window_ms: float = 200.0
    clip_low_quantile: float = 0.01
    clip_high_quantile: float = 0.99
    enable_baseline_removal: bool = True
    enable_clipping: bool = True

    def __post_init__(self):
        if not (0 <= self.clip_low_quantile < self.clip_high_quantile <= 1):
            raise ValueError("require 0 <= clip_low_quantile < clip_high_quantile <= 1")
        if self.baseline_window_ms <= 0:
            raise ValueError("baseline_window_ms must be positive")
        if self.target_rate_hz <= 0 or self.target_samples < 1:
            raise ValueError("target rate and sample count must be positive")


def canonical_lead_name(name: str) -> str:
    """Map a lead label to its canonical spelling (case-insensitive)."""
    key = name.strip().upper().replace(" ", "")
    if key.startswith("LEAD"):
        key = key[4:]
    if key not in _LEAD_BY_KEY:
        raise UnknownLead(f"unknown lead name: {name!r}")
    return _LEAD_BY_KEY[key]


def canonicalize_leads(rec: RawRecording) -> RawRecording:
    """Reorder to the canonical 12 leads, deriving the missing four limb
    leads from an 8-lead set (I, II, V1..V6) via the Einthoven and
    Goldberger relations."""
    names = [canonical_lead_name(n) for n in rec.lead_names]
    if len(set(names)) != len(names):
        raise IncompleteLeadSet("lead names collapse to duplicates after canonicalization")
    row = {n: i for i, n in enumerate(names)}

    def reorder(matrix, order):
        return matrix[[row[n] for n in order]]

    if set(names) == set(LEAD_ORDER):
        samples = reorder(rec.samples, LEAD_ORDER)
        baseline = None if rec.baseline is None else reorder(rec.baseline, LEAD_ORDER)
    elif set(names) == set(EIGHT_LEAD_SET):
        base = np.asarray(rec.samples, dtype=np.float64)
        lead = {n: base[row[n]] for n in EIGHT_LEAD_SET}
        derived = {
            "III": lead["II"] - lead["I"],
            "aVR": -(lead["I"] + lead["II"]) / 2.0,
            "aVL": lead["I"] - lead["II"] / 2.0,
            "aVF": lead["II"] - lead["I"] / 2.0,
        }
        samples = np.stack([derived.get(n, lead.get(n)) for n in LEAD_ORDER])
        if rec.baseline is None:
            baseline = None
        else:
            # Derived leads are linear in the source leads, so their
            # baselines must combine identically or the later offset
            # subtraction would corrupt them.
            b = {n: rec.baseline[row[n]] for n in EIGHT_LEAD_SET}
            b.update({
                "III": b["II"] - b["I"],
                "aVR": -(b["I"] + b["II"]) / 2.0,
                "aVL": b["I"] - b["II"] / 2.0,
                "aVF": b["II"] - b["I"] / 2.0,
            })
            baseline = np.array([b[n] for n in LEAD_ORDER], dtype=np.float64)
    else:
        raise IncompleteLeadSet(
            f"need all 12 canonical leads or the 8-lead set I, II, V1..V6; got {sorted(set(names))}")

    return RawRecording(
        lead_names=LEAD_ORDER,
        samples=samples,
        sampling_rate_hz=rec.sampling_rate_hz,
        adc_gain=rec.adc_gain,
        baseline=baseline,
        source_format=rec.source_format,
        metadata=dict(rec.metadata),
    )


def resample_fft(signal: np.ndarray, from_hz: float, to_hz: float) -> np.ndarray:
    """Resample a 1-D signal by Fourier-domain truncation or zero-padding.

    The output has round(len * to_hz / from_hz) samples and is rescaled by
    the length ratio so tone amplitudes are preserved.
    """
    if from_hz <= 0 or to_hz <= 0:
        raise BadRate("sampling rates must be positive")
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need a 1-D vector of length >= 2")
    n = x.size
    m = int(round(n * to_hz / from_hz))
    if m < 1:
        raise BadRate("target rate rounds the signal away entirely")
    if m == n:
        return x.copy()
    spectrum = np.fft.rfft(x)
    out = np.zeros(m // 2 + 1, dtype=complex)
    keep = min(n, m)
    out[: keep // 2 + 1] = spectrum[: keep // 2 + 1]
    if keep % 2 == 0:
        if m < n:
            # The old +/-Nyquist pair of the kept band folds onto one bin.
            out[keep // 2] *= 2.0
        else:
            # The old Nyquist bin splits across +/-Nyquist of the new grid.
            out[keep // 2] *= 0.5
    return np.fft.irfft(out, m) * (m / n)


def fit_duration(signal: np.ndarray, target_samples: int) -> np.ndarray:
    """Crop to the first ``target_samples`` columns or edge-pad at the end."""
    x = np.atleast_2d(np.asarray(signal))
    if x.size == 0:
        raise ValueError("empty signal")
    if target_samples < 1:
        raise ValueError("target_samples must be positive")
    n = x.shape[1]
    if n >= target_samples:
        return x[:, :target_samples].copy()
    return np.concatenate([x, np.repeat(x[:, -1:], target_samples - n, axis=1)], axis=1)


def scale_to_mv(samples: np.ndarray, adc_gain: float, baseline=None) -> np.ndarray:
    """Convert source units into millivolts: (x - baseline) / gain."""
    if adc_gain is None or not adc_gain > 0:
        raise NonPositiveGain(f"adc_gain must be positive, got {adc_gain}")
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if baseline is not None:
        x = x - np.asarray(baseline, dtype=np.float64).reshape(-1, 1)
    return x / float(adc_gain)


def _moving_median(x: np.ndarray, width: int) -> np.ndarray:
    """Centered moving median; windows truncate at the edges."""
    n = x.size
    half = width // 2
    if n >= width:
        med = np.empty(n)
        med[half:n - half] = np.median(sliding_window_view(x, width), axis=-1)
        for i in range(half):
            med[i] = np.median(x[: i + half + 1])
            med[n - 1 - i] = np.median(x[n - 1 - i - half:])
        return med
    return np.array([np.median(x[max(0, i - half): i + half + 1]) for i in range(n)])


def remove_baseline_wander(signal: np.ndarray, rate_hz: float, window_ms: float = 200.0) -> np.ndarray:
    """Subtract a centered moving median (window rounded up to odd)."""
    if rate_hz <= 0:
        raise BadRate("rate_hz must be positive")
    if window_ms <= 0:
        raise ValueError("window_ms must be positive")
    x = np.asarray(signal, dtype=np.float64)
    width = max(1, int(round(window_ms * rate_hz / 1000.0)))
    if width % 2 == 0:
        width += 1
    return x - _moving_median(x, width)


def clip_quantiles(signal: np.ndarray, q_low: float = 0.01, q_high: float = 0.99) -> np.ndarray:
    """Clamp values into the [Q(q_low), Q(q_high)] quantile band.

    Quantiles interpolate linearly over order statistics at fractional
    index q * (n - 1); this convention is load-bearing for the aggregate
    statistics elsewhere in the toolkit and must not change.
    """
    if not (0 <= q_low < q_high <= 1):
        raise ValueError("require 0 <= q_low < q_high <= 1")
    x = np.asarray(signal, dtype=np.float64)
    lo, hi = np.quantile(x, [q_low, q_high])
    return np.clip(x, lo, hi)


def resolve_gain(rec: RawRecording, opts: NormalizationOptions) -> float:
    """Pick the ADC gain for a recording that may not declare one.

    Explicit gain wins. Otherwise metadata units decide; failing that,
    integer samples are treated as raw ADC counts at the default gain and
    float samples as already-millivolt.
    """
    if rec.adc_gain is not None:
        return float(rec.adc_gain)
    units = str(rec.metadata.get("units", "")).strip().lower()
    if units in {"adu", "adc"}:
        return opts.adc_gain_target
    if units in {"mv", "millivolt", "millivolts"}:
        return 1.0
    if np.issubdtype(rec.samples.dtype, np.integer):
        return opts.adc_gain_target
    return 1.0


def normalize(rec: RawRecording, opts: NormalizationOptions | None = None) -> StandardEcg:
    """Run the full normalization pipeline and return a StandardEcg."""
    opts = opts or NormalizationOptions()
    gain = resolve_gain(rec, opts)
    rec12 = canonicalize_leads(rec)
    mv = scale_to_mv(rec12.samples, gain, rec12.baseline)
    rows = [resample_fft(row, rec12.sampling_rate_hz, opts.target_rate_hz) for row in mv]
    out = fit_duration(np.stack(rows), opts.target_samples)
    if opts.enable_baseline_removal:
        out = np.stack([remove_baseline_wander(row, opts.target_rate_hz, opts.baseline_window_ms)
                        for row in out])
    if opts.enable_clipping:
        out = np.stack([clip_quantiles(row, opts.clip_low_quantile, opts.clip_high_quantile)
                        for row in out])
    return StandardEcg(out)
