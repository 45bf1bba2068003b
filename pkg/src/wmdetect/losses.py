"""Loss menu for the two-sided training objective.

The detector trains against two batches at once: a "minimize" loss pulls
the clean batch's outputs down, a "maximize" loss pushes the detection
batch's outputs up. Both sides reduce by the batch mean, so the loss scale
does not depend on batch size. The softmax/softmin kinds are batch
log-sum-exp (computed stably via max subtraction), which concentrates
pressure on the highest-output clean samples while the linear side weighs
every detection sample equally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_MIN_KINDS = ("bce", "linear", "exp", "softmax")
LOSS_MAX_KINDS = ("bce", "linear", "exp", "softmin")


@dataclass(frozen=True)
class LossConfig:
    min_kind: str = "softmax"
    max_kind: str = "linear"
    tau: float = 1.0

    def __post_init__(self):
        if self.min_kind not in LOSS_MIN_KINDS:
            raise ValueError(f"min_kind must be one of {LOSS_MIN_KINDS}, got {self.min_kind!r}")
        if self.max_kind not in LOSS_MAX_KINDS:
            raise ValueError(f"max_kind must be one of {LOSS_MAX_KINDS}, got {self.max_kind!r}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be a finite positive scalar, got {self.tau}")


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def loss_min(outputs: np.ndarray, kind: str, tau: float = 1.0) -> float:
    """Batch loss that decreases as outputs decrease."""
    f = np.asarray(outputs, dtype=np.float64)
    if f.size < 1:
        raise ValueError("empty batch")
    if kind == "bce":
        return float(np.mean(_softplus(f)))  # mean -log(1 - sigmoid(f))
    if kind == "linear":
        return float(np.mean(f))
    if kind == "exp":
        return float(np.mean(np.exp(f / tau)))
    if kind == "softmax":
        m = float(np.max(f))
        return m + tau * float(np.log(np.mean(np.exp((f - m) / tau))))
    raise ValueError(f"unknown min kind {kind!r}")


def loss_max(outputs: np.ndarray, kind: str, tau: float = 1.0) -> float:
    """Batch loss that decreases as outputs increase."""
    f = np.asarray(outputs, dtype=np.float64)
    if f.size < 1:
        raise ValueError("empty batch")
    if kind == "bce":
        return float(np.mean(_softplus(-f)))  # mean -log sigmoid(f)
    if kind == "linear":
        return float(np.mean(-f))
    if kind == "exp":
        return float(np.mean(np.exp(-f / tau)))
    if kind == "softmin":
        m = float(np.max(-f))
        return m + tau * float(np.log(np.mean(np.exp((-f - m) / tau))))
    raise ValueError(f"unknown max kind {kind!r}")


def loss_min_grad(outputs: np.ndarray, kind: str, tau: float = 1.0) -> np.ndarray:
    """d loss_min / d outputs, same shape as outputs (float64)."""
    f = np.asarray(outputs, dtype=np.float64)
    b = f.size
    if kind == "bce":
        return _sigmoid(f) / b
    if kind == "linear":
        return np.full_like(f, 1.0 / b)
    if kind == "exp":
        return np.exp(f / tau) / (b * tau)
    if kind == "softmax":
        e = np.exp((f - np.max(f)) / tau)
        return e / np.sum(e)
    raise ValueError(f"unknown min kind {kind!r}")


def loss_max_grad(outputs: np.ndarray, kind: str, tau: float = 1.0) -> np.ndarray:
    """d loss_max / d outputs."""
    f = np.asarray(outputs, dtype=np.float64)
    b = f.size
    if kind == "bce":
        return -_sigmoid(-f) / b
    if kind == "linear":
        return np.full_like(f, -1.0 / b)
    if kind == "exp":
        return -np.exp(-f / tau) / (b * tau)
    if kind == "softmin":
        e = np.exp((-f - np.max(-f)) / tau)
        return -e / np.sum(e)
    raise ValueError(f"unknown max kind {kind!r}")
