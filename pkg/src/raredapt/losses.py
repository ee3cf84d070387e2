"""Scalar training objectives with exact input gradients.

Four building blocks: classification cross-entropy, the two-class domain
confusion loss of the adversarial path, the covariance-alignment loss, and the
two composites that sum them. Each loss returns its value together with the
gradient w.r.t. its input logits/activations so the network backward pass never
has to re-derive loss gradients.

Domain label convention: 0 = source, 1 = target. The discriminator's two logit
columns follow the same order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import as_matrix, require_finite, softmax_rows

DOMAIN_SOURCE = 0
DOMAIN_TARGET = 1


@dataclass
class LossValue:
    """A scalar loss plus its gradient w.r.t. the input logits."""

    value: float
    dlogits: np.ndarray
    n_terms: int


@dataclass
class CoralValue:
    """Covariance-alignment loss with gradients w.r.t. both input batches."""

    value: float
    d_source: np.ndarray
    d_target: np.ndarray


def cross_entropy(logits: np.ndarray, labels: Sequence[int]) -> LossValue:
    """Mean negative log softmax-probability of the true class.

    Gradient w.r.t. logits is (softmax - onehot) / n.
    """
    logits = as_matrix(logits, "logits")
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k}): {labels[(labels < 0) | (labels >= k)][0]}")
    probs = softmax_rows(logits)
    rows = np.arange(n)
    # true-class probability can underflow to exactly 0 for huge margins; the
    # resulting inf loss is the caller's divergence signal, not an error here
    with np.errstate(divide="ignore"):
        value = float(-np.mean(np.log(probs[rows, labels])))
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return LossValue(value=value, dlogits=dlogits, n_terms=n)


def domain_confusion(logits: np.ndarray, domain_labels: Sequence[int]) -> LossValue:
    """Two-class cross-entropy of the discriminator (source vs target).

    An empty batch is an error: it signals that routing selected no rare-class
    samples, and the caller is expected to skip the term instead.
    """
    logits = as_matrix(logits, "discriminator logits")
    if logits.shape[0] < 1:
        raise ValueError("domain_confusion got an empty batch; skip the term instead")
    if logits.shape[1] != 2:
        raise ValueError(f"discriminator logits must have 2 columns, got {logits.shape[1]}")
    labels = np.asarray(domain_labels, dtype=np.int64)
    bad = (labels != DOMAIN_SOURCE) & (labels != DOMAIN_TARGET)
    if bad.any():
        raise ValueError(f"domain label must be {DOMAIN_SOURCE} or {DOMAIN_TARGET}")
    return cross_entropy(logits, labels)


def covariance(batch: np.ndarray) -> np.ndarray:
    """Unbiased covariance estimator of a batch of row vectors.

    Computed as (B'B - (1'B)'(1'B)/n) / (n-1); symmetric PSD up to roundoff.
    """
    batch = as_matrix(batch, "covariance input")
    n, _ = batch.shape
    if n < 2:
        raise ValueError(f"covariance needs at least 2 rows, got {n}")
    require_finite(batch, "covariance input")
    col_sums = batch.sum(axis=0, keepdims=True)
    cov = (batch.T @ batch - col_sums.T @ col_sums / n) / (n - 1)
    return require_finite(cov, "covariance output")


def coral_loss(source_acts: np.ndarray, target_acts: np.ndarray) -> CoralValue:
    """Squared Frobenius distance of the two batch covariances, scaled by 1/(4 d^2).

    Gradients are exact backprop through the covariance estimator:
    d/dS = S_centered (C_S - C_T) / (d^2 (n_S - 1)), and the negated analogue
    for the target batch.
    """
    source_acts = as_matrix(source_acts, "source activations")
    target_acts = as_matrix(target_acts, "target activations")
    if source_acts.shape[1] != target_acts.shape[1]:
        raise ValueError(
            f"dimension mismatch: source {source_acts.shape} vs target {target_acts.shape}"
        )
    d = source_acts.shape[1]
    n_s = source_acts.shape[0]
    n_t = target_acts.shape[0]
    if n_s < 2 or n_t < 2:
        raise ValueError(f"coral_loss needs >= 2 rows per batch, got {n_s} and {n_t}")
    diff = covariance(source_acts) - covariance(target_acts)
    value = float(np.sum(diff * diff) / (4.0 * d * d))
    s_centered = source_acts - source_acts.mean(axis=0, keepdims=True)
    t_centered = target_acts - target_acts.mean(axis=0, keepdims=True)
    d_source = s_centered @ diff / (d * d * (n_s - 1))
    d_target = -(t_centered @ diff) / (d * d * (n_t - 1))
    return CoralValue(value=value, d_source=d_source, d_target=d_target)


def composite_dann(
    classification: LossValue, confusion: LossValue | None, domain_weight: float = 1.0
) -> float:
    """Adversarial composite: classification loss plus the confusion term.

    The equation-level form is an unweighted sum; ``domain_weight`` is an
    off-by-default extension (1.0 reproduces the plain sum, 0.0 ablates the
    adversarial term). A batch with no routed samples passes ``confusion=None``
    and degenerates to the classification loss alone.
    """
    total = classification.value
    if confusion is not None:
        total += domain_weight * confusion.value
    return total


def composite_coral(classification: LossValue, coral: CoralValue, trade_off: float) -> float:
    """Covariance-alignment composite: L_classification + trade_off * L_coral."""
    if trade_off < 0:
        raise ValueError(f"trade_off must be >= 0, got {trade_off}")
    return classification.value + trade_off * coral.value
