"""Per-sample feature vector for the classical classifier branch.

Each MFCC matrix (M coefficients x N frames) is reduced to a 2M vector:
the per-coefficient mean over frames, concatenated with an elementwise
magnitude of the top-P principal components of the frame cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PCA_COMPONENTS = 5

RANK_TOL = 1e-12  # relative eigenvalue floor below which a direction is "no variance"


class FeatureError(Exception):
    pass


class EmptyMatrix(FeatureError):
    pass


class InsufficientFrames(FeatureError):
    pass


@dataclass(frozen=True)
class PcaModel:
    """Top-P principal directions of the frame cloud.

    components has shape (P, M) with rows orthonormal, ordered by
    non-increasing explained variance; the largest-magnitude entry of each
    row is made positive to fix the eigenvector sign ambiguity.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    rank_deficient: bool = False


def mfcc_mean(mat: np.ndarray) -> np.ndarray:
    """Arithmetic mean of each coefficient row over frames."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] == 0:
        raise EmptyMatrix("need an M x N matrix with N >= 1")
    return mat.mean(axis=1)


def _fix_signs(components: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def pca_fit(frames: np.ndarray, n_components: int) -> PcaModel:
    """Eigendecomposition of the sample covariance of the frame columns.

    frames is M x N (columns are observations).  If fewer than n_components
    directions carry variance, the remainder is padded with standard-basis
    vectors orthogonalized against the kept components and the model is
    flagged rank_deficient.
    """
    frames = np.asarray(frames, dtype=np.float64)
    m, n = frames.shape
    if n < 2:
        raise InsufficientFrames(f"need >= 2 frames, got {n}")
    if n_components > min(m, n):
        raise InsufficientFrames(
            f"cannot extract {n_components} components from {m} x {n} data"
        )
    mean = frames.mean(axis=1)
    centered = frames - mean[:, None]
    cov = centered @ centered.T / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order].T  # rows are components

    floor = RANK_TOL * max(float(eigvals[0]), 1.0)
    rank = int(np.sum(eigvals > floor))
    if rank >= n_components:
        comps = _fix_signs(eigvecs[:n_components].copy())
        return PcaModel(mean, comps, eigvals[:n_components].copy())

    # Deterministic completion: Gram-Schmidt standard basis vectors against
    # the kept components until P rows exist.
    kept = [eigvecs[i] for i in range(rank)]
    variances = list(eigvals[:rank])
    basis_idx = 0
    while len(kept) < n_components and basis_idx < m:
        candidate = np.zeros(m)
        candidate[basis_idx] = 1.0
        for row in kept:
            candidate -= (candidate @ row) * row
        norm = np.linalg.norm(candidate)
        if norm > 1e-9:
            kept.append(candidate / norm)
            variances.append(0.0)
        basis_idx += 1
    comps = _fix_signs(np.array(kept))
    return PcaModel(mean, comps, np.array(variances), rank_deficient=True)


def pca_magnitude(
    mat: np.ndarray, n_components: int = DEFAULT_PCA_COMPONENTS, weighted: bool = True
) -> np.ndarray:
    """Elementwise magnitude of the top-P components, shape (M,).

    With weighted=True (the default) each component is scaled by the square
    root of its explained variance before the root-sum-of-squares, so
    low-variance directions contribute proportionally less; for P=1 this
    reduces to the absolute value of the leading component times its
    standard deviation.
    """
    model = pca_fit(np.asarray(mat, dtype=np.float64), n_components)
    weights = np.sqrt(model.explained_variance) if weighted else np.ones(n_components)
    scaled = model.components * weights[:, None]
    return np.sqrt(np.sum(scaled**2, axis=0))


def feature_vector(
    mat: np.ndarray, n_components: int = DEFAULT_PCA_COMPONENTS, weighted: bool = True
) -> np.ndarray:
    """Concatenation [mean ; pca magnitude], length 2M."""
    return np.concatenate(
        [mfcc_mean(mat), pca_magnitude(mat, n_components, weighted)]
    )
