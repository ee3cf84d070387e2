"""Feature-space projection and the bimodality check.

Features of the last pre-logit layer are projected with plain PCA (mean
center, eigendecompose the covariance, keep the top components with a
deterministic sign convention). The projection is exported as a scatter CSV
plus a static SVG, and a quantified bimodality score replaces eyeballing:
2-means on the rare class's projected points, scored by balanced accuracy
against the real/synthetic labels. 0.5 means the domains are mixed, 1.0 means
they form fully separated clusters. The score is an invented proxy metric,
not a published quantity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .network import Network
from .numerics import make_rng

_KMEANS_STREAM = 30


@dataclass
class ProjectedFeatures:
    """2-D (or k-D) coordinates plus the labels needed for inspection plots."""

    coords: np.ndarray
    class_ids: np.ndarray
    domains: np.ndarray
    splits: np.ndarray
    correct: np.ndarray
    components: np.ndarray
    explained_variances: np.ndarray
    mean: np.ndarray


def pca_fit(data: np.ndarray, n_components: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """PCA via eigendecomposition of the sample covariance.

    Returns (components, explained_variances, mean); components are the top
    eigenvectors as columns, orthonormal, sign-fixed so each component's
    largest-magnitude entry is positive, with variances non-increasing.
    """
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    if n <= n_components:
        raise ValueError(f"need more than {n_components} samples, got {n}")
    if not 1 <= n_components <= d:
        raise ValueError(f"n_components must be in [1, {d}], got {n_components}")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]
    rank = int(np.sum(evals > max(evals[0], 1e-30) * 1e-10))
    if rank < n_components:
        raise ValueError(
            f"covariance rank {rank} is below the requested {n_components} components"
        )
    components = evecs[:, :n_components]
    for j in range(n_components):
        lead = np.argmax(np.abs(components[:, j]))
        if components[lead, j] < 0:
            components[:, j] = -components[:, j]
    return components, evals[:n_components], mean


def project_features(
    net: Network, dataset: Dataset, indices: np.ndarray, n_components: int = 2
) -> ProjectedFeatures:
    """Project the pre-logit features of the selected samples.

    Correctness flags come from the classifier head's argmax against the true
    class, so the scatter can distinguish hits from misses.
    """
    indices = np.asarray(indices, dtype=np.int64)
    x = dataset.features[indices]
    features, _ = net.forward_features(x)
    logits, _ = net.forward_classifier(features)
    correct = np.argmax(logits, axis=1) == dataset.class_ids[indices]
    components, variances, mean = pca_fit(features, n_components)
    return ProjectedFeatures(
        coords=(features - mean) @ components,
        class_ids=dataset.class_ids[indices].copy(),
        domains=dataset.domains[indices].copy(),
        splits=dataset.splits[indices].copy(),
        correct=correct,
        components=components,
        explained_variances=variances,
        mean=mean,
    )


_PALETTE = (
    "#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee",
    "#aa3377", "#bbbbbb", "#222255", "#ee8866", "#117755",
)


def export_scatter(proj: ProjectedFeatures, prefix) -> tuple[str, str]:
    """Write ``<prefix>.csv`` and ``<prefix>.svg``; returns both paths.

    CSV columns: x,y,class_id,domain,split,correct (1/0). SVG mapping: fill
    color cycles the palette by class id, radius 4 for correct and 2 for
    incorrect predictions, black outline marks synthetic samples, and trans
    splits render at full opacity versus 0.45 for the rest.
    """
    csv_path = f"{prefix}.csv"
    svg_path = f"{prefix}.svg"
    n = proj.coords.shape[0]
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,class_id,domain,split,correct\n")
        for i in range(n):
            x = repr(float(proj.coords[i, 0]))
            y = repr(float(proj.coords[i, 1])) if proj.coords.shape[1] > 1 else "0.0"
            fh.write(
                f"{x},{y},{int(proj.class_ids[i])},{proj.domains[i]},"
                f"{proj.splits[i]},{int(proj.correct[i])}\n"
            )

    size, margin = 640, 48
    if n:
        xs, ys = proj.coords[:, 0], proj.coords[:, 1] if proj.coords.shape[1] > 1 else (
            np.zeros(n)
        )
        x_lo, x_hi = float(xs.min()), float(xs.max())
        y_lo, y_hi = float(ys.min()), float(ys.max())
    else:
        xs = ys = np.zeros(0)
        x_lo, x_hi, y_lo, y_hi = -1.0, 1.0, -1.0, 1.0
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0
    inner = size - 2 * margin
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{inner}" height="{inner}" '
        'fill="none" stroke="#999999"/>',
    ]
    for i in range(n):
        px = margin + inner * (float(xs[i]) - x_lo) / x_span
        py = margin + inner * (1.0 - (float(ys[i]) - y_lo) / y_span)
        color = _PALETTE[int(proj.class_ids[i]) % len(_PALETTE)]
        r = 4.0 if proj.correct[i] else 2.0
        stroke = ' stroke="black" stroke-width="1"' if proj.domains[i] == "synthetic" else ""
        opacity = 0.9 if str(proj.splits[i]).startswith("trans") else 0.45
        parts.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{r}" fill="{color}" '
            f'fill-opacity="{opacity}"{stroke}/>'
        )
    parts.append("</svg>")
    with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
    return csv_path, svg_path


def _two_means(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Seeded 2-means (k-means++ init, Lloyd iterations); returns 0/1 labels.

    Uses only pairwise distances and means, so assignments are invariant under
    rotations of the input coordinates given the same seed.
    """
    n = points.shape[0]
    first = int(rng.integers(n))
    d2 = np.sum((points - points[first]) ** 2, axis=1)
    total = d2.sum()
    if total == 0.0:
        second = int(rng.integers(n))
    else:
        second = int(rng.choice(n, p=d2 / total))
    centers = points[[first, second]].astype(np.float64)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(100):
        dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(dists, axis=1)
        for c in range(2):
            if not np.any(new_labels == c):
                new_labels[int(np.argmax(dists.min(axis=1)))] = c
        if np.array_equal(new_labels, labels) and _ > 0:
            break
        labels = new_labels
        for c in range(2):
            centers[c] = points[labels == c].mean(axis=0)
    return labels


def bimodality_score(
    proj: ProjectedFeatures, rare_class_id: int, seed: int = 0
) -> float:
    """Domain separability of the rare class in the projected plane.

    Balanced accuracy of a 2-means split against the real/synthetic labels,
    maximized over the two cluster-to-domain assignments, so values land in
    [0.5, 1] up to sampling noise: ~0.5 when domains are mixed, ~1.0 when they
    occupy disjoint clusters.
    """
    rare_rows = proj.class_ids == rare_class_id
    domains = proj.domains[rare_rows]
    is_synth = domains == "synthetic"
    if not is_synth.any() or is_synth.all():
        present = "synthetic" if is_synth.any() else "real"
        raise ValueError(f"rare class has only {present} samples; need both domains")
    points = proj.coords[rare_rows][:, :2]
    labels = _two_means(points, make_rng(seed, _KMEANS_STREAM))
    best = 0.0
    for synth_cluster in (0, 1):
        tpr = float(np.mean(labels[is_synth] == synth_cluster))
        tnr = float(np.mean(labels[~is_synth] != synth_cluster))
        best = max(best, 0.5 * (tpr + tnr))
    return best
