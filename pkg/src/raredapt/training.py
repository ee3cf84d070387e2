"""End-to-end training of the classification + adaptation objectives.

One optimizer drives all three network parts every step (so ablated methods
share bit-identical trajectories): the classifier path always minimizes
cross-entropy on source batches; the adversarial methods add the domain
confusion term with the reversal layer between extractor and discriminator;
the covariance method forwards a target batch and adds the weighted alignment
term. Per epoch, every split is evaluated and a parameter snapshot is kept;
the returned checkpoint is the epoch with the best trans-validation rare-class
accuracy among epochs whose trans-validation other-class accuracy stays within
a tolerance of the best value seen.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .data import SPLITS, Dataset
from .domains import METHODS, BatchPair, build_domains, paired_sampler
from .losses import (
    DOMAIN_SOURCE,
    DOMAIN_TARGET,
    composite_coral,
    composite_dann,
    coral_loss,
    cross_entropy,
    domain_confusion,
)
from .metrics import RunMetrics, evaluate
from .network import Network, default_network_spec
from .numerics import make_rng

_INIT_STREAM = 20
_JITTER_STREAM = 21


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradient encountered; the run is aborted."""


@dataclass(frozen=True)
class SelectionRule:
    """Checkpoint selection on the trans validation split.

    Primary metric: rare-class accuracy. Constraint: other-class macro
    accuracy within ``tolerance_points`` (percentage points) of the best value
    observed over the run. Ties break to the earliest epoch.
    """

    tolerance_points: float = 1.0


def select_epoch(
    rare_acc: Sequence[float], other_macro: Sequence[float], rule: SelectionRule
) -> int:
    if len(rare_acc) != len(other_macro) or not rare_acc:
        raise ValueError("selection needs equal-length, non-empty metric histories")
    other = np.asarray(other_macro, dtype=np.float64)
    rare = np.asarray(rare_acc, dtype=np.float64)
    best_other = np.nanmax(other)
    eligible = np.flatnonzero(other >= best_other - rule.tolerance_points / 100.0)
    ranked = rare[eligible]
    ranked = np.where(np.isnan(ranked), -np.inf, ranked)
    return int(eligible[np.argmax(ranked)])


@dataclass(frozen=True)
class TrainConfig:
    """All hyperparameters of one run; hashable for provenance tracking."""

    method: str
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    l2: float = 1e-4
    coral_weight: float = 0.5
    domain_weight: float = 1.0
    grl_scale: float = 1.0
    grl_ramp_epochs: int = 0
    head_lr_multiplier: float = 10.0
    oversample_factor: int = 50
    synthetic_count: int = 2000
    coral_layer: str = "logits"
    discriminator_labels: str = "membership"
    feature_jitter: float = 0.0
    feature_dims: tuple[int, ...] = (64, 32)
    classifier_hidden: tuple[int, ...] = ()
    discriminator_hidden: tuple[int, ...] = (32,)
    selection_tolerance_points: float = 1.0
    rare_class_id: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.coral_weight < 0 or self.grl_scale < 0:
            raise ValueError("coral_weight and grl_scale must be >= 0")
        if self.coral_layer not in ("logits", "features"):
            raise ValueError(f"coral_layer must be 'logits' or 'features', got {self.coral_layer!r}")
        if self.discriminator_labels not in ("membership", "provenance"):
            raise ValueError(
                "discriminator_labels must be 'membership' or 'provenance', "
                f"got {self.discriminator_labels!r}"
            )

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def effective_grl_scale(self, epoch: int) -> float:
        if self.grl_ramp_epochs > 0:
            return self.grl_scale * min(1.0, (epoch + 1) / self.grl_ramp_epochs)
        return self.grl_scale


class Adam:
    """Adam with bias correction and classical L2 on the weight matrices.

    The L2 term is added to the gradient before the moment updates (weight
    decay inside the loss, not the decoupled variant) and is applied to
    weights only, never biases. Classifier-head layers use the base learning
    rate times ``head_lr_multiplier``; every parameter of every part is
    stepped on every call so ablated methods stay on identical trajectories.
    """

    def __init__(self, net: Network, config: TrainConfig):
        self.net = net
        self.config = config
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        for part, i, layer in net.parameters():
            for attr in ("w", "b"):
                key = f"{part}.{i}.{attr}"
                self._m[key] = np.zeros_like(getattr(layer, attr))
                self._v[key] = np.zeros_like(getattr(layer, attr))

    def step(self) -> None:
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for part, i, layer in self.net.parameters():
            lr = cfg.learning_rate
            if part == "classifier":
                lr *= cfg.head_lr_multiplier
            for attr, grad_attr in (("w", "gw"), ("b", "gb")):
                key = f"{part}.{i}.{attr}"
                param = getattr(layer, attr)
                g = getattr(layer, grad_attr)
                if attr == "w":
                    g = g + cfg.l2 * param
                if not np.all(np.isfinite(g)):
                    raise TrainingDiverged(f"non-finite gradient in {key} at step {self.t}")
                m = self._m[key] = cfg.beta1 * self._m[key] + (1.0 - cfg.beta1) * g
                v = self._v[key] = cfg.beta2 * self._v[key] + (1.0 - cfg.beta2) * g * g
                param -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


@dataclass
class EpochRecord:
    """Learning-curve entry: loss terms plus metrics on every split."""

    epoch: int
    classification_loss: float
    domain_loss: float
    coral_term: float
    composite_loss: float
    discriminator_acc: float
    split_metrics: dict[str, RunMetrics] = field(repr=False)


def _discriminator_labels(pair: BatchPair, config: TrainConfig) -> np.ndarray:
    """Domain labels for the routed rows, source block then target block.

    'membership' labels by set: source-batch rows are DOMAIN_SOURCE even for
    the real rare samples living in S. 'provenance' labels by sample origin
    (synthetic -> source, real -> target) regardless of set.
    """
    rs, rt = pair.routed_source_rows, pair.routed_target_rows
    if config.discriminator_labels == "membership":
        src = np.full(rs.size, DOMAIN_SOURCE, dtype=np.int64)
    else:
        src = np.where(
            pair.source.domains[rs] == "synthetic", DOMAIN_SOURCE, DOMAIN_TARGET
        ).astype(np.int64)
    tgt = np.full(rt.size, DOMAIN_TARGET, dtype=np.int64)
    return np.concatenate([src, tgt])


class _Totals:
    def __init__(self):
        self.ce_sum = 0.0
        self.ce_n = 0
        self.dom_sum = 0.0
        self.dom_n = 0
        self.coral_sum = 0.0
        self.coral_n = 0
        self.comp_sum = 0.0
        self.comp_n = 0
        # per-domain correct/total; the reported discriminator accuracy is
        # balanced over domains, so chance stays 0.5 under routing imbalance
        self.disc_correct = np.zeros(2, dtype=np.int64)
        self.disc_total = np.zeros(2, dtype=np.int64)

    def record(self, ce, n, composite, dom=None, dom_n=0, coral=None):
        self.ce_sum += ce * n
        self.ce_n += n
        self.comp_sum += composite * n
        self.comp_n += n
        if dom is not None:
            self.dom_sum += dom * dom_n
            self.dom_n += dom_n
        if coral is not None:
            self.coral_sum += coral
            self.coral_n += 1

    def record_discriminator(self, preds: np.ndarray, labels: np.ndarray) -> None:
        for domain in (0, 1):
            mask = labels == domain
            self.disc_correct[domain] += int(np.sum(preds[mask] == domain))
            self.disc_total[domain] += int(mask.sum())

    def summary(self) -> dict[str, float]:
        present = self.disc_total > 0
        disc = (
            float(np.mean(self.disc_correct[present] / self.disc_total[present]))
            if present.any()
            else math.nan
        )
        return {
            "classification_loss": self.ce_sum / self.ce_n if self.ce_n else math.nan,
            "domain_loss": self.dom_sum / self.dom_n if self.dom_n else math.nan,
            "coral_term": self.coral_sum / self.coral_n if self.coral_n else math.nan,
            "composite_loss": self.comp_sum / self.comp_n if self.comp_n else math.nan,
            "discriminator_acc": disc,
        }


def _train_batch(
    net: Network,
    pair: BatchPair,
    config: TrainConfig,
    grl_scale: float,
    jitter_rng: np.random.Generator,
    totals: _Totals,
) -> None:
    xs = pair.source.features
    if config.feature_jitter > 0:
        xs = xs + jitter_rng.standard_normal(xs.shape) * config.feature_jitter
    n = xs.shape[0]
    net.zero_grads()
    f_src, tr_f_src = net.forward_features(xs)
    logits_src, tr_c_src = net.forward_classifier(f_src)
    classification = cross_entropy(logits_src, pair.source.class_ids)
    dlogits_c_src = classification.dlogits

    if config.method in ("deerdann", "alldann"):
        xt = pair.target.features
        if config.feature_jitter > 0:
            xt = xt + jitter_rng.standard_normal(xt.shape) * config.feature_jitter
        f_tgt, tr_f_tgt = net.forward_features(xt)
        rs, rt = pair.routed_source_rows, pair.routed_target_rows
        confusion = None
        tr_d_src = tr_d_tgt = None
        d_src = d_tgt = None
        if rs.size + rt.size > 0:
            blocks = []
            if rs.size:
                d_logits_src, tr_d_src = net.forward_discriminator(f_src[rs])
                blocks.append(d_logits_src)
            if rt.size:
                d_logits_tgt, tr_d_tgt = net.forward_discriminator(f_tgt[rt])
                blocks.append(d_logits_tgt)
            stacked = np.vstack(blocks)
            labels = _discriminator_labels(pair, config)
            confusion = domain_confusion(stacked, labels)
            totals.record_discriminator(np.argmax(stacked, axis=1), labels)
            dlogits_d = config.domain_weight * confusion.dlogits
            d_src = dlogits_d[: rs.size] if rs.size else None
            d_tgt = dlogits_d[rs.size :] if rt.size else None
        net.backward(
            tr_f_src,
            classifier_trace=tr_c_src,
            dlogits_classifier=dlogits_c_src,
            discriminator_trace=tr_d_src,
            dlogits_discriminator=d_src,
            discriminator_rows=rs if rs.size else None,
            grl_scale=grl_scale,
        )
        if rt.size:
            net.backward(
                tr_f_tgt,
                discriminator_trace=tr_d_tgt,
                dlogits_discriminator=d_tgt,
                discriminator_rows=rt,
                grl_scale=grl_scale,
            )
        composite = composite_dann(classification, confusion, config.domain_weight)
        totals.record(
            classification.value,
            n,
            composite,
            dom=None if confusion is None else confusion.value,
            dom_n=0 if confusion is None else confusion.n_terms,
        )
    elif config.method == "deercoral":
        xt = pair.target.features
        if config.feature_jitter > 0:
            xt = xt + jitter_rng.standard_normal(xt.shape) * config.feature_jitter
        f_tgt, tr_f_tgt = net.forward_features(xt)
        logits_tgt, tr_c_tgt = net.forward_classifier(f_tgt)
        if config.coral_layer == "logits":
            coral = coral_loss(logits_src, logits_tgt)
            net.backward(
                tr_f_src,
                classifier_trace=tr_c_src,
                dlogits_classifier=dlogits_c_src + config.coral_weight * coral.d_source,
            )
            net.backward(
                tr_f_tgt,
                classifier_trace=tr_c_tgt,
                dlogits_classifier=config.coral_weight * coral.d_target,
            )
        else:
            coral = coral_loss(f_src, f_tgt)
            net.backward(
                tr_f_src,
                classifier_trace=tr_c_src,
                dlogits_classifier=dlogits_c_src,
                dfeatures=config.coral_weight * coral.d_source,
            )
            net.backward(tr_f_tgt, dfeatures=config.coral_weight * coral.d_target)
        composite = composite_coral(classification, coral, config.coral_weight)
        totals.record(classification.value, n, composite, coral=coral.value)
    else:
        net.backward(
            tr_f_src, classifier_trace=tr_c_src, dlogits_classifier=dlogits_c_src
        )
        totals.record(classification.value, n, classification.value)

    if not math.isfinite(classification.value):
        raise TrainingDiverged("non-finite classification loss")


def train(dataset: Dataset, config: TrainConfig) -> tuple[Checkpoint, list[EpochRecord]]:
    """Run the full optimization; returns the selected checkpoint and history.

    Deterministic: identical dataset + config reproduce the history and the
    selected parameters bit for bit.
    """
    net_spec = default_network_spec(
        dataset.feature_dim,
        dataset.num_classes,
        feature_dims=config.feature_dims,
        classifier_hidden=config.classifier_hidden,
        discriminator_hidden=config.discriminator_hidden,
    )
    net = Network.initialize(net_spec, make_rng(config.seed, _INIT_STREAM))
    org = build_domains(
        dataset,
        config.method,
        config.synthetic_count,
        oversample_factor=config.oversample_factor,
        seed=config.seed,
        rare_class_id=config.rare_class_id,
    )
    opt = Adam(net, config)
    jitter_rng = make_rng(config.seed, _JITTER_STREAM)
    history: list[EpochRecord] = []
    snapshots: list[dict[str, np.ndarray]] = []
    for epoch in range(config.epochs):
        grl_scale = config.effective_grl_scale(epoch)
        totals = _Totals()
        for batch_i, pair in enumerate(
            paired_sampler(org, config.batch_size, config.seed, epoch)
        ):
            try:
                _train_batch(net, pair, config, grl_scale, jitter_rng, totals)
                opt.step()
            except (TrainingDiverged, ValueError) as exc:
                raise TrainingDiverged(
                    f"run aborted at epoch {epoch} batch {batch_i}: {exc}"
                ) from exc
        split_metrics = {
            split: evaluate(net, dataset, split, org.rare_class_id) for split in SPLITS
        }
        history.append(EpochRecord(epoch=epoch, split_metrics=split_metrics, **totals.summary()))
        snapshots.append(net.snapshot())

    rule = SelectionRule(tolerance_points=config.selection_tolerance_points)
    selected = select_epoch(
        [rec.split_metrics["trans_val"].rare_acc for rec in history],
        [rec.split_metrics["trans_val"].other_macro for rec in history],
        rule,
    )
    best = Checkpoint(
        params=snapshots[selected],
        network_spec=net_spec,
        epoch=selected,
        config_hash=config.config_hash(),
        metrics={
            "selected_epoch": selected,
            "method": config.method,
            "synthetic_count": config.synthetic_count,
            "seed": config.seed,
            "splits": {
                split: m.to_dict()
                for split, m in history[selected].split_metrics.items()
            },
        },
    )
    return best, history
