"""Loss primitives and the stabilized softmax, in plain-array and graph form.

The plain-array versions are the reference definitions used by tests; the
Tensor versions build the same math into the autodiff graph for training.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor

# Probability clamp for binary cross-entropy; avoids log(0).
PROB_EPS = 1e-7


def softmax_rows(a: Array) -> Array:
    """Row-wise softmax over the last axis, stabilized by max subtraction."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("softmax_rows requires finite input")
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits: Array, label: int) -> float:
    """-log softmax(logits)[label] for a single logit vector."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} out of range for {logits.size} classes")
    shifted = logits - logits.max()
    lse = np.log(np.exp(shifted).sum())
    return float(lse - shifted[label])


def binary_cross_entropy(score: float, label: int) -> float:
    """-[l*ln(p) + (1-l)*ln(1-p)] with p clamped to [PROB_EPS, 1-PROB_EPS]."""
    if label not in (0, 1):
        raise ValueError(f"binary label must be 0 or 1, got {label}")
    p = min(max(float(score), PROB_EPS), 1.0 - PROB_EPS)
    return float(-(label * np.log(p) + (1 - label) * np.log(1.0 - p)))


# -- graph (Tensor) versions -------------------------------------------------


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy; logits (..., M), integer labels broadcastable to the
    leading shape. Scalar output."""
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels out of range for {n_classes} classes")
    logp = ad.log_softmax(logits)
    if logits.ndim == 1:
        return -logp[int(labels)]
    picked = logp[np.arange(labels.size), labels.reshape(-1)]
    return -ad.mean_(picked)


def binary_cross_entropy_graph(scores: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy on probability scores in (0, 1)."""
    labels = np.asarray(labels, dtype=scores.dtype)
    if labels.size and (labels.min() < 0 or labels.max() > 1):
        raise ValueError("binary labels must be 0 or 1")
    p = ad.clip(scores, PROB_EPS, 1.0 - PROB_EPS)
    term = ad.add(ad.mul(ad.log(p), labels), ad.mul(ad.log(ad.sub(1.0, p)), 1.0 - labels))
    return -ad.mean_(term)
