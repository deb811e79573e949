"""ecgkit: end-to-end 12-lead ECG toolkit.

Parsing for the common ECG container formats, a fixed normalization
pipeline onto a 12 x 1000 millivolt canvas at 100 Hz, beat-level analysis
(R-peaks, template alignment, median beats), mixture-of-architectures
routing math, classification-head fine-tuning, evaluation statistics, and
a WebDAV model exchange, with an HTTP service and a CLI on top.
"""

from .signal import (  # noqa: F401
    LEAD_ORDER,
    NormalizationOptions,
    RawRecording,
    StandardEcg,
    canonicalize_leads,
    clip_quantiles,
    fit_duration,
    normalize,
    remove_baseline_wander,
    resample_fft,
    scale_to_mv,
)
from .analysis import (  # noqa: F401
    AlignedEcg,
    FiducialMap,
    MedianBeat,
    detect_rpeaks,
    extract_qrs_windows,
    median_beat,
    rlign_transform,
)
from .finetune import (  # noqa: F401
    FineTuneConfig,
    LinearHead,
    TrainingReport,
    embed,
    predict,
    train_head,
)
from .metrics import aggregate, evaluate_dataset, f1_scores, load_label_rules, map_labels  # noqa: F401

__version__ = "0.1.0"
