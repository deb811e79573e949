"""Mixture-of-architectures routing math and pretraining losses.

Desk-scale, fully deterministic implementations: noisy top-k gating with
Gumbel-Softmax annealing, the load-balance and route-entropy regularizers,
an RBF maximum-mean-discrepancy loss, the time-series positional encoding,
and a central-difference gradient oracle used to verify every loss.

Randomness is never global: train-mode routing draws from a generator
seeded by (config seed, step), so identical calls produce identical
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EcgKitError

LATENT_DIM = 512


class BadLength(EcgKitError):
    code = "bad_length"


class NonPositiveTau(EcgKitError):
    code = "non_positive_tau"


class EmptyBatch(EcgKitError):
    code = "empty_batch"


class DimMismatch(EcgKitError):
    code = "dim_mismatch"


class OddDim(EcgKitError):
    code = "odd_dim"


class NonFiniteEvaluation(EcgKitError):
    code = "non_finite_evaluation"


@dataclass(frozen=True)
class RouterConfig:
    n_experts: int = 4
    k: int = 2
    gumbel_tau0: float = 1.0
    gumbel_tau_min: float = 0.1
    gumbel_decay: float = 0.97
    noise_scale: tuple = None  # pre-softplus, one value per expert
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.k <= self.n_experts):
            raise ValueError("require 1 <= k <= n_experts")
        if not (self.gumbel_tau0 >= self.gumbel_tau_min > 0):
            raise ValueError("require tau0 >= tau_min > 0")
        if not (0 < self.gumbel_decay <= 1):
            raise ValueError("require 0 < decay <= 1")
        scale = self.noise_scale
        if scale is None:
            scale = (0.0,) * self.n_experts
        scale = tuple(float(s) for s in scale)
        if len(scale) != self.n_experts:
            raise ValueError("noise_scale needs one entry per expert")
        object.__setattr__(self, "noise_scale", scale)


@dataclass(frozen=True)
class RouterOutput:
    logits: np.ndarray
    gates: np.ndarray        # full length, zero outside the selection
    selected: tuple          # k expert indices, ascending
    probs_full: np.ndarray

    def __post_init__(self):
        gates = np.asarray(self.gates, dtype=np.float64)
        object.__setattr__(self, "gates", gates)
        object.__setattr__(self, "logits", np.asarray(self.logits, dtype=np.float64))
        object.__setattr__(self, "probs_full", np.asarray(self.probs_full, dtype=np.float64))
        object.__setattr__(self, "selected", tuple(int(i) for i in self.selected))
        if abs(float(gates.sum()) - 1.0) > 1e-9 or (gates < 0).any():
            raise ValueError("gates must form a simplex vector")
        off = np.ones(len(gates), dtype=bool)
        off[list(self.selected)] = False
        if np.any(gates[off] != 0):
            raise ValueError("gates must be zero outside the selection")


@dataclass(frozen=True)
class MoALosses:
    load_balance: float
    route_entropy: float
    mmd: float
    reconstruction_mse: float

    def __post_init__(self):
        values = (self.load_balance, self.route_entropy, self.mmd, self.reconstruction_mse)
        if not all(np.isfinite(v) for v in values):
            raise ValueError("losses must be finite")
        if self.reconstruction_mse < 0:
            raise ValueError("reconstruction_mse must be non-negative")


@dataclass(frozen=True)
class TapeEncoding:
    matrix: np.ndarray
    length: int
    dim: int


def softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - np.max(values, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softplus(values: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, values)


def tau_schedule(cfg: RouterConfig, step: int) -> float:
    """Exponential per-step decay with a floor at tau_min."""
    return max(cfg.gumbel_tau_min, cfg.gumbel_tau0 * cfg.gumbel_decay**step)


def gumbel_softmax(logits: np.ndarray, tau: float, noise: np.ndarray) -> np.ndarray:
    """softmax((logits + noise) / tau)."""
    if tau <= 0:
        raise NonPositiveTau(f"tau must be positive, got {tau}")
    return softmax((np.asarray(logits, dtype=np.float64) + np.asarray(noise)) / tau)


def _topk_lowest_index(values: np.ndarray, k: int):
    """Indices of the k largest values, ties broken toward lower indices."""
    order = np.argsort(-values, kind="stable")
    return tuple(sorted(int(i) for i in order[:k]))


def route(logits: np.ndarray, cfg: RouterConfig, mode: str = "eval", step: int = 0) -> RouterOutput:
    """Noisy top-k gating (train) or plain top-k of the softmax (eval)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (cfg.n_experts,) or not np.isfinite(logits).all():
        raise BadLength(f"need {cfg.n_experts} finite logits, got shape {logits.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")

    if mode == "eval":
        probs = softmax(logits)
    else:
        rng = np.random.default_rng((cfg.seed, step))
        eps = rng.standard_normal(cfg.n_experts)
        noisy = logits + eps * softplus(np.asarray(cfg.noise_scale))
        u = np.clip(rng.random(cfg.n_experts), 1e-12, 1.0 - 1e-12)
        gumbel = -np.log(-np.log(u))
        probs = gumbel_softmax(noisy, tau_schedule(cfg, step), gumbel)

    selected = _topk_lowest_index(probs, cfg.k)
    gates = np.zeros(cfg.n_experts)
    chosen = probs[list(selected)]
    gates[list(selected)] = chosen / chosen.sum()
    return RouterOutput(logits=logits, gates=gates, selected=selected, probs_full=probs)


def load_balance_loss(batch_probs: np.ndarray, batch_selected) -> float:
    """Switch-style balance loss: n_experts * sum_i f_i * P_i.

    f_i is the fraction of (sample, slot) selections routed to expert i and
    P_i the batch-mean routing probability. Equals 1 at perfect uniformity
    and n_experts at total collapse.
    """
    probs = np.atleast_2d(np.asarray(batch_probs, dtype=np.float64))
    selections = list(batch_selected)
    if probs.shape[0] == 0 or len(selections) == 0:
        raise EmptyBatch("need at least one routed sample")
    n = probs.shape[1]
    counts = np.zeros(n)
    total = 0
    for sel in selections:
        for idx in sel:
            counts[int(idx)] += 1
            total += 1
    fractions = counts / total
    mean_probs = probs.mean(axis=0)
    return float(n * np.dot(fractions, mean_probs))


def route_entropy_loss(batch_probs: np.ndarray) -> float:
    """Uniformity deficit ln(N) - H(mean routing); zero when balanced."""
    probs = np.atleast_2d(np.asarray(batch_probs, dtype=np.float64))
    if probs.shape[0] == 0:
        raise EmptyBatch("need at least one routed sample")
    mean = probs.mean(axis=0)
    positive = mean[mean > 0]
    entropy = -float(np.sum(positive * np.log(positive)))
    return float(np.log(probs.shape[1]) - entropy)


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise distance over the pooled samples (1.0 if degenerate)."""
    pooled = np.vstack((np.atleast_2d(x), np.atleast_2d(y)))
    diff = pooled[:, None, :] - pooled[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    upper = dist[np.triu_indices(len(pooled), k=1)]
    upper = upper[upper > 0]
    return float(np.median(upper)) if upper.size else 1.0


def _rbf(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2.0 * sigma**2))


def mmd_loss(x: np.ndarray, y: np.ndarray, sigma: float | None = None) -> float:
    """Biased V-statistic MMD^2 with an RBF kernel; non-negative, zero iff
    the two multisets coincide."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] < 1 or y.shape[0] < 1:
        raise EmptyBatch("both sample sets must be non-empty")
    if x.shape[1] != y.shape[1]:
        raise DimMismatch(f"sample dims differ: {x.shape[1]} vs {y.shape[1]}")
    if sigma is None:
        sigma = median_bandwidth(x, y)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    value = (_rbf(x, x, sigma).mean() + _rbf(y, y, sigma).mean()
             - 2.0 * _rbf(x, y, sigma).mean())
    # The estimator is a squared RKHS norm; clamp float residue only.
    return float(max(value, 0.0))


def tape_encoding(length: int, dim: int = LATENT_DIM) -> TapeEncoding:
    """Sinusoidal positional encoding with frequencies rescaled by dim/length,
    the variant tuned for time series."""
    if dim % 2:
        raise OddDim(f"embedding dim must be even, got {dim}")
    if length < 1:
        raise ValueError("length must be >= 1")
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim // 2, dtype=np.float64)[None, :]
    omega = 10000.0 ** (-2.0 * idx / dim)
    angle = pos * omega * (dim / length)
    matrix = np.empty((length, dim))
    matrix[:, 0::2] = np.sin(angle)
    matrix[:, 1::2] = np.cos(angle)
    return TapeEncoding(matrix=matrix, length=length, dim=dim)


def moa_forward(features: np.ndarray, experts, router, cfg: RouterConfig,
                mode: str = "eval", step: int = 0,
                latent_dim: int = LATENT_DIM) -> tuple[np.ndarray, RouterOutput]:
    """Route, run the selected experts, and concatenate their gate-weighted
    outputs (ascending expert index) into the latent vector."""
    if len(experts) != cfg.n_experts:
        raise DimMismatch(f"need {cfg.n_experts} experts, got {len(experts)}")
    if latent_dim % cfg.k:
        raise DimMismatch(f"latent dim {latent_dim} not divisible by k={cfg.k}")
    logits = np.asarray(router(features) if callable(router) else router, dtype=np.float64)
    out = route(logits, cfg, mode=mode, step=step)
    piece_dim = latent_dim // cfg.k
    pieces = []
    for idx in out.selected:
        piece = np.asarray(experts[idx](features), dtype=np.float64).ravel()
        if piece.shape != (piece_dim,):
            raise DimMismatch(f"expert {idx} returned {piece.shape}, expected ({piece_dim},)")
        pieces.append(out.gates[idx] * piece)
    return np.concatenate(pieces), out


def numeric_gradient(f, p: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle, (f(p+h e_j) - f(p-h e_j)) / 2h."""
    p = np.asarray(p, dtype=np.float64)
    grad = np.empty_like(p)
    for j in range(p.size):
        step = np.zeros_like(p)
        step.flat[j] = h
        hi = float(f(p + step))
        lo = float(f(p - step))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteEvaluation(f"f non-finite near coordinate {j}")
        grad.flat[j] = (hi - lo) / (2.0 * h)
    return grad


def make_affine_expert(seed: int, in_size: int, out_dim: int, scale: float = 0.05):
    """Tiny fixed-seed affine map; stands in for a deep expert in tests."""
    rng = np.random.default_rng(seed)
    weight = rng.normal(scale=scale, size=(out_dim, in_size))
    bias = rng.normal(scale=scale, size=out_dim)

    def expert(features):
        return weight @ np.asarray(features, dtype=np.float64).ravel() + bias

    return expert
