"""Classification-head fine-tuning.

The frozen feature stage is a deterministic median-beat embedding; on top
of it a linear head trains with weighted cross-entropy, AdamW, an
exponential learning-rate schedule, an automatic learning-rate finder,
checkpointing on the lowest weighted validation loss, and early stopping.
The whole run is a pure function of (data, config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import detect_rpeaks, median_beat
from .errors import EcgKitError
from .metrics import f1_scores
from .router import LATENT_DIM, softmax
from .signal import StandardEcg


class ClassTooSmall(EcgKitError):
    code = "class_too_small"


class NonFiniteLoss(EcgKitError):
    code = "non_finite_loss"


class ShapeMismatch(EcgKitError):
    code = "shape_mismatch"


class DivergedImmediately(EcgKitError):
    code = "diverged_immediately"


class UnsupportedAtDeskScale(EcgKitError):
    code = "unsupported_at_desk_scale"


@dataclass(frozen=True)
class LinearHead:
    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray     # (n_classes,)
    class_names: tuple
    activation: str = "softmax"  # or "sigmoid" for one-vs-rest multi-label

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ValueError("weights (C, d) and bias (C,) must agree")
        if len(self.class_names) != weights.shape[0] or len(self.class_names) < 2:
            raise ValueError("need one name per class and at least two classes")
        if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise ValueError("parameters must be finite")
        if self.activation not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class FineTuneConfig:
    max_epochs: int = 50
    batch_size: int = 64
    gamma: float = 0.9
    lr: float | None = None  # absent: run the learning-rate finder
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip_value: float = 2.0
    patience: int = 10
    val_fraction: float = 0.2
    seed: int = 0
    method: str = "head"  # or "full"
    lr_select: str = "min_loss"  # or "steepest"

    def __post_init__(self):
        if not (0 < self.gamma <= 1):
            raise ValueError("require 0 < gamma <= 1")
        if not (0 < self.val_fraction < 1):
            raise ValueError("require 0 < val_fraction < 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")
        if self.method not in ("head", "full"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.lr_select not in ("steepest", "min_loss"):
            raise ValueError(f"unknown lr_select {self.lr_select!r}")


@dataclass(frozen=True)
class TrainingReport:
    n_samples: int
    label_distribution: dict
    base_model: str
    train_loss_per_epoch: list
    val_loss_per_epoch: list
    eval_f1: dict
    best_epoch: int
    lr_used: float

    def __post_init__(self):
        if len(self.train_loss_per_epoch) != len(self.val_loss_per_epoch):
            raise ValueError("loss curves must have equal length")
        if not (0 <= self.best_epoch < len(self.val_loss_per_epoch)):
            raise ValueError("best_epoch must index the loss curves")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "label_distribution": dict(self.label_distribution),
            "base_model": self.base_model,
            "train_loss_per_epoch": list(self.train_loss_per_epoch),
            "val_loss_per_epoch": list(self.val_loss_per_epoch),
            "eval_f1": dict(self.eval_f1),
            "best_epoch": self.best_epoch,
            "lr_used": self.lr_used,
        }


def embed(ecg: StandardEcg, dim: int = LATENT_DIM) -> np.ndarray:
    """Deterministic feature vector: per-lead median beat, flattened,
    linearly resampled to ``dim`` and standardized."""
    beat = median_beat(ecg, detect_rpeaks(ecg))
    flat = beat.samples.ravel()
    grid = np.linspace(0.0, flat.size - 1.0, dim)
    vec = np.interp(grid, np.arange(flat.size, dtype=np.float64), flat)
    std = vec.std()
    if std == 0:
        return np.zeros(dim)
    return (vec - vec.mean()) / std


def stratified_split(labels, val_fraction: float, seed: int):
    """Split into (train_idx, val_idx) preserving per-stratum proportions.

    Samples stratify by their full label combination; proportions hold to
    within one sample per stratum and the split is deterministic per seed.
    """
    keys = [tuple(sorted(lab)) if not isinstance(lab, str) else (lab,) for lab in labels]
    class_counts: dict = {}
    for key in keys:
        for cls in key:
            class_counts[cls] = class_counts.get(cls, 0) + 1
    small = [c for c, n in class_counts.items() if n < 2]
    if small:
        raise ClassTooSmall(f"classes with fewer than two samples: {sorted(small)}")

    by_key: dict = {}
    for i, key in enumerate(keys):
        by_key.setdefault(key, []).append(i)

    rng = np.random.default_rng(seed)
    train, val = [], []
    for key in sorted(by_key):
        idx = np.array(by_key[key])
        rng.shuffle(idx)
        n_val = int(round(len(idx) * val_fraction))
        n_val = min(n_val, len(idx) - 1)
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    if not val:  # tiny datasets still need a validation sample
        val.append(train.pop())
    return np.array(sorted(train)), np.array(sorted(val))


def adamw_step(param, grad, state, lr, betas=(0.9, 0.999), eps=1e-8,
               weight_decay=0.0, t=1):
    """One AdamW update with decoupled weight decay; returns (param', state')."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ShapeMismatch(f"param {param.shape} vs grad {grad.shape}")
    if state is None:
        state = (np.zeros_like(param), np.zeros_like(param))
    m, v = state
    if m.shape != param.shape or v.shape != param.shape:
        raise ShapeMismatch("optimizer state shape drifted from the parameter")
    beta1, beta2 = betas
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad**2
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * param
    return new_param, (m, v)


def exponential_lr(lr0: float, gamma: float, epoch: int) -> float:
    """lr0 * gamma ** epoch."""
    return lr0 * gamma**epoch


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def head_loss_and_grad(weights, bias, x, target, class_weights, activation):
    """Weighted cross-entropy loss and its analytic gradients.

    Softmax heads take integer targets and weight each sample by its class
    weight; sigmoid heads take multi-hot targets and weight each class
    column. Both normalize by the total weight so the scale is batch-free.
    """
    z = x @ weights.T + bias
    if activation == "softmax":
        probs = softmax(z)
        sample_w = class_weights[target]
        total = sample_w.sum()
        picked = np.clip(probs[np.arange(len(target)), target], 1e-300, None)
        loss = float(-(sample_w * np.log(picked)).sum() / total)
        grad_z = probs.copy()
        grad_z[np.arange(len(target)), target] -= 1.0
        grad_z *= (sample_w / total)[:, None]
    else:
        y = target
        # Stable elementwise BCE on logits.
        bce = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
        total = len(x) * class_weights.sum()
        loss = float((bce * class_weights[None, :]).sum() / total)
        grad_z = (_sigmoid(z) - y) * class_weights[None, :] / total
    return loss, grad_z.T @ x, grad_z.sum(axis=0)


def lr_finder(loss_and_grad, params0: dict, batches, lr_min: float = 1e-6,
              lr_max: float = 1.0, steps: int = 100, select: str = "steepest") -> float:
    """Sweep the learning rate log-uniformly and pick the promising region.

    One plain gradient step per candidate rate over cycling mini-batches;
    the loss curve smooths with a bias-corrected EMA (beta 0.9) and the
    sweep aborts once the smoothed loss exceeds four times its best. The
    returned rate sits at the minimum of the smoothed curve (or, with
    select="steepest", at its steepest negative slope versus log-rate),
    divided by 10 and clamped into [lr_min, lr_max]. The minimum-loss
    rule is the default because the steepest-slope pick lands two orders
    of magnitude below a usable rate on clean convex problems.
    """
    if not batches:
        raise DivergedImmediately("no data to sweep over")
    rates = np.logspace(np.log10(lr_min), np.log10(lr_max), steps)
    params = {k: np.array(v, dtype=np.float64) for k, v in params0.items()}
    beta = 0.9
    ema = 0.0
    smoothed: list[float] = []
    used: list[float] = []
    best = np.inf
    for i, rate in enumerate(rates):
        loss, grads = loss_and_grad(params, batches[i % len(batches)])
        if not np.isfinite(loss):
            if i == 0:
                raise DivergedImmediately("loss non-finite at lr_min")
            break
        ema = beta * ema + (1 - beta) * loss
        value = ema / (1 - beta ** (i + 1))
        smoothed.append(value)
        used.append(rate)
        best = min(best, value)
        if value > 4.0 * best:
            break
        for key in params:
            params[key] = params[key] - rate * grads[key]

    if len(smoothed) < 2:
        return lr_min
    curve = np.asarray(smoothed)
    if select == "min_loss":
        chosen = used[int(np.argmin(curve))]
    else:
        slopes = np.diff(curve) / np.diff(np.log10(np.asarray(used)))
        chosen = used[int(np.argmin(slopes))]
    return float(np.clip(chosen / 10.0, lr_min, lr_max))


def _encode_labels(labels):
    sets = [frozenset({lab}) if isinstance(lab, str) else frozenset(lab) for lab in labels]
    classes = tuple(sorted({cls for s in sets for cls in s}))
    multilabel = any(len(s) != 1 for s in sets)
    if multilabel:
        target = np.zeros((len(sets), len(classes)))
        for i, s in enumerate(sets):
            for cls in s:
                target[i, classes.index(cls)] = 1.0
        return classes, target, "sigmoid", sets
    target = np.array([classes.index(next(iter(s))) for s in sets])
    return classes, target, "softmax", sets


def _class_weights(classes, label_sets):
    counts = np.array([sum(cls in s for s in label_sets) for cls in classes], dtype=np.float64)
    return len(label_sets) / (len(classes) * counts)


def _epoch_loss(weights, bias, x, target, class_weights, activation):
    loss, _, _ = head_loss_and_grad(weights, bias, x, target, class_weights, activation)
    return loss


def train_head(embeddings, labels, cfg: FineTuneConfig | None = None,
               base_model: str = "median-beat-embedding",
               on_epoch=None) -> tuple[LinearHead, TrainingReport]:
    """Train a linear head and return it with the training report.

    ``on_epoch(epoch, train_loss, val_loss)`` runs after every epoch; any
    exception it raises aborts training (the service uses this to cancel).
    """
    cfg = cfg or FineTuneConfig()
    if cfg.method == "full":
        raise UnsupportedAtDeskScale(
            "full-model fine-tuning needs a deep runtime; only head training is supported")
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if x.shape[0] != len(labels):
        raise ShapeMismatch(f"{x.shape[0]} embeddings vs {len(labels)} labels")
    if x.shape[0] < 10:
        raise ClassTooSmall("need at least 10 labelled samples")
    classes, target, activation, label_sets = _encode_labels(labels)
    if len(classes) < 2:
        raise ClassTooSmall("need at least two distinct classes")

    weights_cls = _class_weights(classes, label_sets)
    train_idx, val_idx = stratified_split(labels, cfg.val_fraction, cfg.seed)
    x_train, x_val = x[train_idx], x[val_idx]
    t_train, t_val = target[train_idx], target[val_idx]

    dim = x.shape[1]
    params = {"weights": np.zeros((len(classes), dim)), "bias": np.zeros(len(classes))}

    def batch_loss_and_grad(p, batch):
        bx, bt = batch
        loss, gw, gb = head_loss_and_grad(p["weights"], p["bias"], bx, bt,
                                          weights_cls, activation)
        return loss, {"weights": gw, "bias": gb}

    lr0 = cfg.lr
    if lr0 is None:
        sweep_batches = [(x_train[i: i + cfg.batch_size], t_train[i: i + cfg.batch_size])
                         for i in range(0, len(x_train), cfg.batch_size)]
        lr0 = lr_finder(batch_loss_and_grad, params, sweep_batches, select=cfg.lr_select)

    state = {"weights": None, "bias": None}
    train_curve: list[float] = []
    val_curve: list[float] = []
    best_loss = np.inf
    best_epoch = 0
    best_params = {k: v.copy() for k, v in params.items()}
    t = 0
    for epoch in range(cfg.max_epochs):
        lr_epoch = exponential_lr(lr0, cfg.gamma, epoch)
        order = np.random.default_rng((cfg.seed, epoch)).permutation(len(x_train))
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start: start + cfg.batch_size]
            loss, grads = batch_loss_and_grad(params, (x_train[rows], t_train[rows]))
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"training loss became non-finite at epoch {epoch}")
            t += 1
            for key in params:
                clipped = np.clip(grads[key], -cfg.grad_clip_value, cfg.grad_clip_value)
                params[key], state[key] = adamw_step(
                    params[key], clipped, state[key], lr_epoch, cfg.betas, cfg.eps,
                    cfg.weight_decay, t)

        train_loss = _epoch_loss(params["weights"], params["bias"], x_train, t_train,
                                 weights_cls, activation)
        val_loss = _epoch_loss(params["weights"], params["bias"], x_val, t_val,
                               weights_cls, activation)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NonFiniteLoss(f"loss became non-finite at epoch {epoch}")
        train_curve.append(train_loss)
        val_curve.append(val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        if epoch - best_epoch >= cfg.patience:
            break

    head = LinearHead(weights=best_params["weights"], bias=best_params["bias"],
                      class_names=classes, activation=activation)
    probs = predict(head, x_val)
    if activation == "softmax":
        pred_sets = [{classes[int(i)]} for i in probs.argmax(axis=1)]
    else:
        pred_sets = [{c for c, p in zip(classes, row) if p >= 0.5} for row in probs]
    truth_sets = [set(label_sets[i]) for i in val_idx]
    scores = f1_scores(truth_sets, pred_sets, classes)
    eval_f1 = {"per_class": scores["per_class"], "macro": scores["macro"],
               "weighted": scores["weighted"]}

    distribution = {cls: int(sum(cls in s for s in label_sets)) for cls in classes}
    report = TrainingReport(
        n_samples=x.shape[0],
        label_distribution=distribution,
        base_model=base_model,
        train_loss_per_epoch=train_curve,
        val_loss_per_epoch=val_curve,
        eval_f1=eval_f1,
        best_epoch=best_epoch,
        lr_used=float(lr0),
    )
    return head, report


def predict(head: LinearHead, embeddings) -> np.ndarray:
    """Per-class probability rows: softmax(Wx + b) or sigmoid per class."""
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if x.shape[1] != head.dim:
        raise ShapeMismatch(f"embeddings have dim {x.shape[1]}, head expects {head.dim}")
    z = x @ head.weights.T + head.bias
    return softmax(z) if head.activation == "softmax" else _sigmoid(z)
