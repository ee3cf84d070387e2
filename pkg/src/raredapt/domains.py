"""Method-specific source/target domain organization and batch pairing.

Unlike classic domain adaptation, both domains here live inside the training
data. The source set S is always the real training set extended with the
chosen synthetic rare-class samples. The target set T depends on the method:

    baseline   T = {} (plain classification on S)
    deerdann   T = real rare-class train samples, oversampled (default x50)
    alldann    T = train + oversampled real rare samples
    deercoral  T = train + oversampled real rare samples

T never contains synthetic samples, and oversampling is index multiplicity,
not data duplication. The routing rule picks which rows of a batch reach the
discriminator: rare-class rows for the deer-specific methods, every row for
alldann.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .data import Dataset
from .numerics import make_rng

METHODS = ("baseline", "deerdann", "alldann", "deercoral")

_SRC_STREAM = 10
_TGT_STREAM = 11
_SYN_CHOICE_STREAM = 12


@dataclass
class DomainOrg:
    """Resolved source/target index sets for one training run."""

    method: str
    source_indices: np.ndarray
    target_indices: np.ndarray
    rare_class_id: int
    oversample_factor: int
    synthetic_count: int
    dataset: Dataset = field(repr=False)

    @property
    def needs_target(self) -> bool:
        return self.method != "baseline"


@dataclass
class SideBatch:
    """One side of a batch pair, gathered from the dataset."""

    features: np.ndarray
    class_ids: np.ndarray
    domains: np.ndarray
    indices: np.ndarray


@dataclass
class BatchPair:
    source: SideBatch
    target: SideBatch | None
    routed_source_rows: np.ndarray
    routed_target_rows: np.ndarray


def build_domains(
    dataset: Dataset,
    method: str,
    synthetic_count: int,
    oversample_factor: int = 50,
    seed: int = 0,
    rare_class_id: int | None = None,
) -> DomainOrg:
    """Assemble S and T for a method; sizes are exact and seed-deterministic.

    |S| = |train| + synthetic_count for every method. The synthetic subset is
    a seeded draw without replacement from the pool.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if oversample_factor < 1:
        raise ValueError(f"oversample_factor must be >= 1, got {oversample_factor}")
    rare = dataset.rare_class_id if rare_class_id is None else rare_class_id
    train = dataset.train_real_indices()
    pool = dataset.synthetic_pool_indices()
    if synthetic_count < 0:
        raise ValueError(f"synthetic_count must be >= 0, got {synthetic_count}")
    if synthetic_count > len(pool):
        raise ValueError(
            f"requested {synthetic_count} synthetic samples but the pool has {len(pool)}"
        )
    rng = make_rng(seed, _SYN_CHOICE_STREAM)
    chosen = np.sort(rng.permutation(pool)[:synthetic_count])
    source = np.concatenate([train, chosen])

    rare_train = train[dataset.class_ids[train] == rare]
    if rare_train.size == 0:
        raise ValueError(f"no real train samples of rare class {rare}")
    oversampled = np.tile(rare_train, oversample_factor)
    if method == "baseline":
        target = np.empty(0, dtype=np.int64)
    elif method == "deerdann":
        target = oversampled
    else:
        target = np.concatenate([train, oversampled])
    return DomainOrg(
        method=method,
        source_indices=source,
        target_indices=target,
        rare_class_id=rare,
        oversample_factor=oversample_factor,
        synthetic_count=synthetic_count,
        dataset=dataset,
    )


def route_delta(class_ids: np.ndarray, method: str, rare_class_id: int) -> np.ndarray:
    """Rows whose features reach the discriminator.

    Deer-specific methods select rare-class rows; alldann selects every row;
    the baseline routes nothing (it has no adversarial term).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    class_ids = np.asarray(class_ids)
    if method == "alldann":
        return np.arange(class_ids.shape[0])
    if method == "baseline":
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero(class_ids == rare_class_id)


def _gather(dataset: Dataset, idx: np.ndarray) -> SideBatch:
    return SideBatch(
        features=dataset.features[idx],
        class_ids=dataset.class_ids[idx],
        domains=dataset.domains[idx],
        indices=idx,
    )


def paired_sampler(
    org: DomainOrg, batch_size: int, seed: int, epoch: int
) -> Iterator[BatchPair]:
    """One seeded epoch: a shuffled pass over S, each batch paired with T rows.

    Target batches match the source batch size, cycling through reshuffled
    passes over T as needed. Source batches with fewer than 2 rows are dropped
    (covariance over a single row is undefined). Source and target shuffles
    use independent streams, so the source sequence is identical across
    methods for a given seed.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    if org.needs_target and org.target_indices.size == 0:
        raise ValueError(f"method {org.method!r} requires a non-empty target set")
    dataset = org.dataset
    src_perm = make_rng(seed, _SRC_STREAM, epoch).permutation(org.source_indices)
    tgt_rng = make_rng(seed, _TGT_STREAM, epoch)
    tgt_perm = tgt_rng.permutation(org.target_indices) if org.needs_target else None
    cursor = 0
    for start in range(0, src_perm.size, batch_size):
        chunk = src_perm[start : start + batch_size]
        if chunk.size < 2:
            continue
        source = _gather(dataset, chunk)
        target = None
        routed_tgt = np.empty(0, dtype=np.int64)
        if org.needs_target:
            pieces = []
            need = chunk.size
            while need > 0:
                if cursor >= tgt_perm.size:
                    tgt_perm = tgt_rng.permutation(org.target_indices)
                    cursor = 0
                grab = min(need, tgt_perm.size - cursor)
                pieces.append(tgt_perm[cursor : cursor + grab])
                cursor += grab
                need -= grab
            target = _gather(dataset, np.concatenate(pieces))
            routed_tgt = route_delta(target.class_ids, org.method, org.rare_class_id)
        routed_src = route_delta(source.class_ids, org.method, org.rare_class_id)
        yield BatchPair(
            source=source,
            target=target,
            routed_source_rows=routed_src,
            routed_target_rows=routed_tgt,
        )
