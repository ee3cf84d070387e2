"""Long-tailed benchmark generation and CSV ingestion.

The generated benchmark mimics a camera-trap-style classification problem at
desk scale: each class is a Gaussian mixture over a handful of "locations"
(jittered copies of the class mean), the train/cis splits draw from one subset
of locations and the trans splits from held-out locations, and the rarest
class additionally gets a pool of synthetic samples. The synthetic generator
draws a fresh location jitter per sample (synthetic scenes are not tied to
physical cameras) and then pushes the point through a controllable affine gap

    x_syn = A @ z + b + render_noise

so the real/synthetic discrepancy can be dialed from zero (A=I, b=0, matched
noise) up to a shift comparable to the spacing between classes.

CSV schema (UTF-8, comma-separated, '.' decimal, header required):

    f0,...,f{d-1},class_id,domain,location_id,split

with domain in {real, synthetic} and split in {train, cis_val, cis_test,
trans_val, trans_test}. Floats are written with shortest round-trip repr, so
save -> load reproduces every value bit for bit and re-saving is
byte-identical. Synthetic samples carry split=train (they exist only as
training augmentation) and location_id -1 (no physical camera).

Split/histogram semantics: "train" throughout this package means the *real*
training samples; the synthetic pool is a separate population selected by
domain. ``class_histogram`` therefore defaults to counting real samples.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .numerics import make_rng, require_finite

SPLITS = ("train", "cis_val", "cis_test", "trans_val", "trans_test")
DOMAIN_TOKENS = ("real", "synthetic")
SYNTHETIC_LOCATION = -1


class DataFormatError(ValueError):
    """Malformed dataset file or invariant-violating dataset contents."""


@dataclass(frozen=True)
class GenSpec:
    """Benchmark generator configuration.

    ``gap_offset`` is measured in class-separation units: one unit is the RMS
    distance between two class means, ``class_mean_scale * sqrt(2 d)``. The
    default gap (condition ~1.5, one-unit offset, 1.5x render noise) puts the
    raw synthetic cluster about as far from the real rare cluster as two
    classes sit from each other.
    """

    class_count: int = 8
    feature_dim: int = 32
    rare_class_id: int = 7
    train_counts: tuple[int, ...] | None = None
    max_train_count: int = 1000
    rare_train_count: int = 41
    val_count_per_class: int = 40
    test_count_per_class: int = 80
    locations_per_class: int = 6
    trans_locations_per_class: int = 2
    class_mean_scale: float = 1.0
    location_jitter: float = 0.5
    noise_scale: float = 0.35
    synthetic_pool_size: int = 10000
    gap_condition: float = 1.5
    gap_rotation: float = 0.5236
    gap_offset: float = 1.0
    gap_noise_factor: float = 1.5
    gap_matrix: tuple | None = None
    gap_offset_vector: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if self.feature_dim < 2:
            raise ValueError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if not 0 <= self.rare_class_id < self.class_count:
            raise ValueError(f"rare_class_id {self.rare_class_id} out of range")
        if self.trans_locations_per_class < 1:
            raise ValueError("need at least one trans location per class")
        if self.locations_per_class - self.trans_locations_per_class < 1:
            raise ValueError(
                f"{self.locations_per_class} locations with "
                f"{self.trans_locations_per_class} held out leaves no train locations"
            )
        if self.gap_condition < 1.0:
            raise ValueError(f"gap_condition must be >= 1, got {self.gap_condition}")
        if self.gap_noise_factor < 0:
            raise ValueError("gap_noise_factor must be >= 0")
        counts = self.resolved_train_counts()
        if len(counts) != self.class_count:
            raise ValueError(
                f"train_counts has {len(counts)} entries for {self.class_count} classes"
            )
        if any(c < 1 for c in counts):
            raise ValueError(f"train counts must be >= 1, got {counts}")
        if counts[self.rare_class_id] != min(counts):
            raise ValueError(
                f"rare class train count {counts[self.rare_class_id]} is not the minimum"
            )

    def resolved_train_counts(self) -> tuple[int, ...]:
        """Long-tail defaults: geometric decay from the largest class down to the rare one."""
        if self.train_counts is not None:
            return tuple(int(c) for c in self.train_counts)
        k = self.class_count
        ratio = (self.rare_train_count / self.max_train_count) ** (1.0 / (k - 1))
        counts = [int(round(self.max_train_count * ratio**c)) for c in range(k)]
        counts[self.rare_class_id] = self.rare_train_count
        return tuple(counts)

    def spec_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    @classmethod
    def zero_gap(cls, **overrides) -> "GenSpec":
        """Control spec with no real/synthetic discrepancy.

        Sets A=I, b=0 and matched noise; also zeroes the location jitter so
        real and synthetic rare samples are drawn i.i.d. from the same
        Gaussian, which makes the population-identity checks exact.
        """
        base = cls(
            gap_condition=1.0,
            gap_rotation=0.0,
            gap_offset=0.0,
            gap_noise_factor=1.0,
            location_jitter=0.0,
        )
        return replace(base, **overrides)


@dataclass
class Sample:
    """One labeled feature vector (a read-only view into a Dataset)."""

    features: np.ndarray
    class_id: int
    domain: str
    location_id: int
    split: str


@dataclass
class Dataset:
    """Column-oriented sample store with validated invariants."""

    features: np.ndarray
    class_ids: np.ndarray
    domains: np.ndarray
    location_ids: np.ndarray
    splits: np.ndarray
    class_names: list[str]
    provenance: str = ""
    rare_class_id: int = field(init=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype=np.str_)
        self.location_ids = np.asarray(self.location_ids, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=np.str_)
        self.rare_class_id = -1
        self.validate()

    def validate(self) -> None:
        n = self.features.shape[0] if self.features.ndim == 2 else -1
        if self.features.ndim != 2:
            raise DataFormatError(f"features must be 2-D, got shape {self.features.shape}")
        for name in ("class_ids", "domains", "location_ids", "splits"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise DataFormatError(f"{name} has shape {arr.shape}, expected ({n},)")
        require_finite(self.features, "dataset features")
        k = len(self.class_names)
        if n and (self.class_ids.min() < 0 or self.class_ids.max() >= k):
            raise DataFormatError(f"class_id out of range [0, {k})")
        bad_domain = ~np.isin(self.domains, DOMAIN_TOKENS)
        if bad_domain.any():
            raise DataFormatError(f"unknown domain token {self.domains[bad_domain][0]!r}")
        bad_split = ~np.isin(self.splits, SPLITS)
        if bad_split.any():
            raise DataFormatError(f"unknown split token {self.splits[bad_split][0]!r}")

        real = self.domains == "real"
        synthetic = ~real
        train_real = real & (self.splits == "train")
        train_counts = np.bincount(self.class_ids[train_real], minlength=k)
        if (train_counts == 0).any():
            missing = int(np.argmin(train_counts))
            raise DataFormatError(f"class {missing} has no real train samples")

        if synthetic.any():
            syn_classes = np.unique(self.class_ids[synthetic])
            if len(syn_classes) > 1:
                raise DataFormatError(
                    f"synthetic samples span classes {syn_classes.tolist()}; "
                    "synthetic data must belong to the single rare class"
                )
            rare = int(syn_classes[0])
            if train_counts[rare] != train_counts.min():
                raise DataFormatError(
                    f"synthetic samples carry class {rare} "
                    f"({train_counts[rare]} train samples), but class "
                    f"{int(np.argmin(train_counts))} is rarer"
                )
            off_split = synthetic & (self.splits != "train")
            if off_split.any():
                raise DataFormatError("synthetic samples must carry split 'train'")
        else:
            rare = int(np.argmin(train_counts))
        self.rare_class_id = rare

        seen = set(self.location_ids[(self.splits == "train") & real])
        for split in ("cis_val", "cis_test"):
            seen |= set(self.location_ids[self.splits == split])
        for split in ("trans_val", "trans_test"):
            trans_locs = set(self.location_ids[self.splits == split])
            overlap = trans_locs & seen
            if overlap:
                raise DataFormatError(
                    f"{split} reuses train/cis location ids {sorted(overlap)}"
                )
        for split in ("cis_test", "trans_test"):
            mask = (self.splits == split) & (self.class_ids == rare) & real
            if not mask.any():
                raise DataFormatError(f"rare class {rare} missing from {split}")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def indices(self, split: str | None = None, domain: str | None = None) -> np.ndarray:
        mask = np.ones(len(self), dtype=bool)
        if split is not None:
            mask &= self.splits == split
        if domain is not None:
            mask &= self.domains == domain
        return np.flatnonzero(mask)

    def train_real_indices(self) -> np.ndarray:
        return self.indices(split="train", domain="real")

    def synthetic_pool_indices(self) -> np.ndarray:
        return self.indices(domain="synthetic")

    def sample(self, i: int) -> Sample:
        return Sample(
            features=self.features[i],
            class_id=int(self.class_ids[i]),
            domain=str(self.domains[i]),
            location_id=int(self.location_ids[i]),
            split=str(self.splits[i]),
        )


def synthetic_map(spec: GenSpec) -> tuple[np.ndarray, np.ndarray, float]:
    """Resolve the affine gap (A, b) and the synthetic render-noise scale.

    Parametric form: A = R @ diag(spread) with R a rotation by gap_rotation in
    one random plane and spread spanning condition number gap_condition; b has
    norm gap_offset * class_mean_scale * sqrt(2 d). Explicit gap_matrix /
    gap_offset_vector fields override the parametric construction.
    """
    d = spec.feature_dim
    rng = make_rng(spec.seed, 2)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    v = rng.standard_normal(d)
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)

    if spec.gap_matrix is not None:
        a = np.asarray(spec.gap_matrix, dtype=np.float64)
        if a.shape != (d, d):
            raise ValueError(f"gap_matrix must be {d}x{d}, got {a.shape}")
    else:
        theta = spec.gap_rotation
        eye = np.eye(d)
        rot = (
            eye
            + (np.cos(theta) - 1.0) * (np.outer(u, u) + np.outer(v, v))
            + np.sin(theta) * (np.outer(u, v) - np.outer(v, u))
        )
        c = spec.gap_condition
        spread = np.geomspace(np.sqrt(c), 1.0 / np.sqrt(c), d)
        a = rot @ np.diag(spread)

    if spec.gap_offset_vector is not None:
        b = np.asarray(spec.gap_offset_vector, dtype=np.float64)
        if b.shape != (d,):
            raise ValueError(f"gap_offset_vector must have length {d}, got {b.shape}")
    else:
        separation_unit = spec.class_mean_scale * np.sqrt(2.0 * d)
        b = direction * spec.gap_offset * separation_unit
    return a, b, spec.noise_scale * spec.gap_noise_factor


def generate(spec: GenSpec) -> Dataset:
    """Draw the full benchmark deterministically from ``spec.seed``.

    Per-class location means are class mean plus jitter; train/cis samples use
    the first locations, trans samples the held-out ones. The rare class's
    synthetic pool maps fresh class-level draws through the affine gap.
    """
    k, d = spec.class_count, spec.feature_dim
    counts = spec.resolved_train_counts()
    means_rng = make_rng(spec.seed, 0)
    loc_rng = make_rng(spec.seed, 1)
    sample_rng = make_rng(spec.seed, 3)
    syn_rng = make_rng(spec.seed, 4)

    class_means = means_rng.standard_normal((k, d)) * spec.class_mean_scale
    n_loc = spec.locations_per_class
    n_cis = n_loc - spec.trans_locations_per_class
    loc_means = np.empty((k, n_loc, d))
    for c in range(k):
        loc_means[c] = class_means[c] + loc_rng.standard_normal((n_loc, d)) * spec.location_jitter

    gap_a, gap_b, syn_noise = synthetic_map(spec)

    split_counts = {
        "train": counts,
        "cis_val": (spec.val_count_per_class,) * k,
        "cis_test": (spec.test_count_per_class,) * k,
        "trans_val": (spec.val_count_per_class,) * k,
        "trans_test": (spec.test_count_per_class,) * k,
    }
    feats, classes, domains, locations, splits = [], [], [], [], []
    for c in range(k):
        for split in SPLITS:
            n = split_counts[split][c]
            if split.startswith("trans"):
                local = n_cis + sample_rng.integers(0, spec.trans_locations_per_class, n)
            else:
                local = sample_rng.integers(0, n_cis, n)
            x = loc_means[c, local] + sample_rng.standard_normal((n, d)) * spec.noise_scale
            feats.append(x)
            classes.append(np.full(n, c))
            domains.append(np.full(n, "real"))
            locations.append(c * n_loc + local)
            splits.append(np.full(n, split))

    p = spec.synthetic_pool_size
    if p > 0:
        scene = class_means[spec.rare_class_id] + syn_rng.standard_normal((p, d)) * spec.location_jitter
        x = scene @ gap_a.T + gap_b + syn_rng.standard_normal((p, d)) * syn_noise
        feats.append(x)
        classes.append(np.full(p, spec.rare_class_id))
        domains.append(np.full(p, "synthetic"))
        locations.append(np.full(p, SYNTHETIC_LOCATION))
        splits.append(np.full(p, "train"))

    return Dataset(
        features=np.concatenate(feats),
        class_ids=np.concatenate(classes),
        domains=np.concatenate(domains),
        location_ids=np.concatenate(locations),
        splits=np.concatenate(splits),
        class_names=[f"class{i}" for i in range(k)],
        provenance=f"generated:seed={spec.seed}:spec={spec.spec_hash()[:12]}",
    )


def class_histogram(dataset: Dataset, split: str, domain: str | None = "real") -> np.ndarray:
    """Per-class sample counts for a split (real samples by default)."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    idx = dataset.indices(split=split, domain=domain)
    return np.bincount(dataset.class_ids[idx], minlength=dataset.num_classes)


def expected_header(feature_dim: int) -> list[str]:
    return [f"f{i}" for i in range(feature_dim)] + ["class_id", "domain", "location_id", "split"]


def save_csv(dataset: Dataset, path) -> None:
    """Write the documented CSV schema; floats use shortest round-trip repr."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(expected_header(dataset.feature_dim)) + "\n")
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            row += [
                str(int(dataset.class_ids[i])),
                str(dataset.domains[i]),
                str(int(dataset.location_ids[i])),
                str(dataset.splits[i]),
            ]
            fh.write(",".join(row) + "\n")


def load_csv(path) -> Dataset:
    """Parse the CSV schema back into a Dataset, validating every invariant.

    Errors carry 1-based line numbers. The header determines the feature
    dimension; every row must match it exactly.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    n_meta = 4
    d = len(header) - n_meta
    if d < 1 or header != expected_header(d):
        raise DataFormatError(
            f"{path}: line 1: malformed header; expected f0..f{{d-1}},class_id,domain,"
            f"location_id,split, got {lines[0][:80]!r}"
        )
    feats = np.empty((len(lines) - 1, d))
    classes = np.empty(len(lines) - 1, dtype=np.int64)
    domains = []
    locations = np.empty(len(lines) - 1, dtype=np.int64)
    splits = []
    for row_i, line in enumerate(lines[1:]):
        line_no = row_i + 2
        parts = line.split(",")
        if len(parts) != d + n_meta:
            raise DataFormatError(
                f"{path}: line {line_no}: expected {d + n_meta} columns "
                f"({d} features + {n_meta} metadata), got {len(parts)}"
            )
        try:
            feats[row_i] = [float(v) for v in parts[:d]]
            classes[row_i] = int(parts[d])
            locations[row_i] = int(parts[d + 2])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {line_no}: {exc}") from exc
        domain, split = parts[d + 1], parts[d + 3]
        if domain not in DOMAIN_TOKENS:
            raise DataFormatError(f"{path}: line {line_no}: unknown domain token {domain!r}")
        if split not in SPLITS:
            raise DataFormatError(f"{path}: line {line_no}: unknown split token {split!r}")
        domains.append(domain)
        splits.append(split)
    k = int(classes.max()) + 1 if len(classes) else 0
    try:
        return Dataset(
            features=feats,
            class_ids=classes,
            domains=np.array(domains),
            location_ids=locations,
            splits=np.array(splits),
            class_names=[f"class{i}" for i in range(k)],
            provenance=str(path),
        )
    except DataFormatError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Field-for-field sample equality (provenance excluded)."""
    return (
        np.array_equal(a.features, b.features)
        and np.array_equal(a.class_ids, b.class_ids)
        and np.array_equal(a.domains, b.domains)
        and np.array_equal(a.location_ids, b.location_ids)
        and np.array_equal(a.splits, b.splits)
        and a.class_names == b.class_names
    )
