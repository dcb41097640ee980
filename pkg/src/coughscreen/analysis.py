"""Exact t-SNE embedding for visual separability checks, plus feature export.

The embedding is the O(n^2) formulation: per-point Gaussian bandwidths
found by bisection to match the target perplexity, symmetrized joint
probabilities, Student-t low-dimensional affinities, and momentum gradient
descent with early exaggeration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dsp import MfccConfig, mfcc
from .features import DEFAULT_PCA_COMPONENTS, feature_vector


class AnalysisError(Exception):
    pass


class PerplexityTooLarge(AnalysisError):
    pass


class DegenerateFeatures(AnalysisError):
    pass


@dataclass(frozen=True)
class Embedding:
    points: np.ndarray  # (n, 2)
    labels: tuple
    kl_history: np.ndarray


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _input_sq_dists(x: np.ndarray) -> np.ndarray:
    """Squared distances via explicit differences.

    Slower than the Gram-matrix form but exactly translation-invariant
    whenever the shifted coordinates are exactly representable, which keeps
    embeddings reproducible across constant feature offsets.
    """
    n = len(x)
    d = np.empty((n, n))
    for i in range(n):
        diff = x - x[i]
        d[i] = np.einsum("ij,ij->i", diff, diff)
    np.fill_diagonal(d, 0.0)
    return d


def _row_affinities(dist_row: np.ndarray, i: int, beta: float) -> np.ndarray:
    p = np.exp(-dist_row * beta)
    p[i] = 0.0
    total = p.sum()
    return p / total if total > 0 else p


def _row_perplexity(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


def _bisect_beta(dist_row: np.ndarray, i: int, target: float, tol: float = 1e-4) -> float:
    """Find beta = 1/(2 sigma^2) whose Gaussian row hits the target perplexity."""
    beta = 1.0
    lo, hi = 0.0, np.inf
    for _ in range(200):
        perp = _row_perplexity(_row_affinities(dist_row, i, beta))
        if abs(perp - target) <= tol:
            return beta
        if perp > target:  # too spread out, sharpen
            lo = beta
            beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
        else:
            hi = beta
            beta = beta / 2.0 if lo == 0.0 else (beta + lo) / 2.0
    return beta


def joint_probabilities(features: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized affinity matrix P; entries sum to 1, diagonal zero."""
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    if n < 3 * perplexity:
        raise PerplexityTooLarge(f"need n >= 3*perplexity, got n={n}")
    dists = _input_sq_dists(x)
    if np.all(dists == 0):
        raise DegenerateFeatures("all feature vectors identical")
    cond = np.zeros((n, n))
    for i in range(n):
        beta = _bisect_beta(dists[i], i, perplexity)
        cond[i] = _row_affinities(dists[i], i, beta)
    return (cond + cond.T) / (2.0 * n)


def tsne(
    features: np.ndarray,
    labels=None,
    perplexity: float = 30.0,
    iterations: int = 1000,
    learning_rate: float = 200.0,
    seed: int = 0,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    momentum_switch: int = 250,
) -> Embedding:
    """Embed features into 2-D; kl_history holds the per-iteration divergence
    against the unexaggerated P."""
    p = joint_probabilities(features, perplexity)
    n = len(p)
    p_clipped = np.maximum(p, 1e-12)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_history = np.empty(iterations)

    for it in range(iterations):
        p_eff = p * exaggeration if it < exaggeration_iters else p
        dy = _pairwise_sq_dists(y)
        w = 1.0 / (1.0 + dy)
        np.fill_diagonal(w, 0.0)
        q = np.maximum(w / w.sum(), 1e-12)

        kl_history[it] = float(np.sum(p_clipped * np.log(p_clipped / q)))

        mult = (p_eff - q) * w
        grad = 4.0 * ((np.diag(mult.sum(axis=1)) - mult) @ y)

        momentum = 0.5 if it < momentum_switch else 0.8
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)

    return Embedding(
        points=y,
        labels=tuple(labels) if labels is not None else tuple(range(n)),
        kl_history=kl_history,
    )


# ---------------------------------------------------------------------------
# feature export


def corpus_features(
    corpus,
    mfcc_config: MfccConfig | None = None,
    n_components: int = DEFAULT_PCA_COMPONENTS,
):
    """(ids, labels, feature matrix) for every sample of a corpus."""
    from .audio import validate_clip

    config = mfcc_config or MfccConfig()
    ids, labels, rows = [], [], []
    for sample in corpus.samples:
        clip = validate_clip(sample.load_clip())
        rows.append(feature_vector(mfcc(clip.samples, config), n_components))
        ids.append(sample.id)
        labels.append(sample.label)
    return ids, labels, np.array(rows)


def export_features(corpus, path, mfcc_config=None, n_components=DEFAULT_PCA_COMPONENTS):
    """CSV export: sample_id, label, then the 2M feature values."""
    ids, labels, matrix = corpus_features(corpus, mfcc_config, n_components)
    width = matrix.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"] + [f"f{i:03d}" for i in range(width)])
        for sid, label, row in zip(ids, labels, matrix):
            writer.writerow([sid, label] + [f"{v:.9g}" for v in row])
    return ids, labels, matrix


def load_features_csv(path):
    ids, labels, rows = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            ids.append(row[0])
            labels.append(row[1])
            rows.append([float(v) for v in row[2:]])
    return ids, labels, np.array(rows)


def write_embedding_csv(embedding: Embedding, ids, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "x", "y"])
        for sid, label, (x, y) in zip(ids, embedding.labels, embedding.points):
            writer.writerow([sid, label, f"{x:.6g}", f"{y:.6g}"])


_PALETTE = ["#d95f02", "#1b9e77", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"]


def write_embedding_svg(embedding: Embedding, path, size: int = 640) -> None:
    """Minimal scatter plot, one color per label."""
    pts = embedding.points
    lo = pts.min(axis=0)
    span = np.maximum(pts.max(axis=0) - lo, 1e-12)
    scaled = (pts - lo) / span * (size - 40) + 20
    label_order = list(dict.fromkeys(embedding.labels))
    color = {lab: _PALETTE[i % len(_PALETTE)] for i, lab in enumerate(label_order)}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for (x, y), lab in zip(scaled, embedding.labels):
        parts.append(
            f'<circle cx="{x:.1f}" cy="{size - y:.1f}" r="4" fill="{color[lab]}" '
            f'fill-opacity="0.75"><title>{lab}</title></circle>'
        )
    for i, lab in enumerate(label_order):
        ly = 18 + 16 * i
        parts.append(f'<circle cx="14" cy="{ly - 4}" r="5" fill="{color[lab]}"/>')
        parts.append(f'<text x="24" y="{ly}" font-size="12" font-family="sans-serif">{lab}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
