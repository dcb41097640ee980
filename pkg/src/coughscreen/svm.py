"""Multi-class SVM over feature vectors: one-vs-one SMO with k-fold tuning.

Each pairwise problem is solved in the dual by maximal-violating-pair SMO
with an iteration cap; the regularization constant is chosen by mean
k-fold cross-validation accuracy over a grid, ties resolved toward the
smaller (more regularized) C.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"CSVM"
FORMAT_VERSION = 1


class SvmError(Exception):
    pass


class DegenerateClass(SvmError):
    pass


class NonFiniteFeature(SvmError):
    pass


class DimensionMismatch(SvmError):
    pass


@dataclass(frozen=True)
class SvmConfig:
    kernel: str = "rbf"  # "linear" or "rbf"
    c_grid: tuple = (0.1, 1.0, 10.0, 100.0)
    gamma: float | None = None  # None -> 1 / (n_features * var)
    k_folds: int = 5
    max_iter: int = 100_000
    tol: float = 1e-3
    seed: int = 0
    balance: bool = True


@dataclass
class PairwiseProblem:
    """Trained decision function separating class_a (+1) from class_b (-1)."""

    class_a: int
    class_b: int
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for the support vectors
    bias: float
    kkt_gap: float
    iterations: int
    hit_cap: bool


@dataclass
class SvmModel:
    kernel: str
    gamma: float
    C: float
    classes: list
    mean: np.ndarray
    std: np.ndarray
    pairs: list[PairwiseProblem]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class TuningReport:
    c_grid: list
    mean_accuracy: dict
    chosen_c: float
    gamma: float
    solver_iterations: list
    kkt_gaps: list
    any_hit_cap: bool
    balanced_counts: dict


def _kernel_matrix(kind: str, gamma: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if kind == "linear":
        return a @ b.T
    if kind == "rbf":
        aa = np.sum(a * a, axis=1)[:, None]
        bb = np.sum(b * b, axis=1)[None, :]
        sq = np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)
        return np.exp(-gamma * sq)
    raise SvmError(f"unknown kernel {kind!r}")


def _smo_solve(K, y, C, max_iter, tol):
    """Maximal-violating-pair SMO on the dual problem.

    Returns (alpha, bias, gap_at_termination, iterations, hit_cap).  The gap
    m(alpha) - M(alpha) is the KKT residual reported for the model.
    """
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective at alpha = 0
    it = 0
    gap = np.inf
    while it < max_iter:
        yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            gap = 0.0
            break
        up_vals = np.where(up, yg, -np.inf)
        low_vals = np.where(low, yg, np.inf)
        i = int(np.argmax(up_vals))
        j = int(np.argmin(low_vals))
        gap = up_vals[i] - low_vals[j]
        if gap < tol:
            break
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = 1e-12
        delta = (up_vals[i] - low_vals[j]) / quad
        old_ai, old_aj = alpha[i], alpha[j]
        alpha[i] += y[i] * delta
        alpha[j] -= y[j] * delta
        # project back onto the box while preserving the equality constraint
        total = y[i] * old_ai + y[j] * old_aj
        alpha[i] = min(max(alpha[i], 0.0), C)
        alpha[j] = y[j] * (total - y[i] * alpha[i])
        alpha[j] = min(max(alpha[j], 0.0), C)
        alpha[i] = y[i] * (total - y[j] * alpha[j])
        # G_k = y_k * sum_l alpha_l y_l K_kl - 1, hence the outer y factor
        grad += y * (
            K[:, i] * (y[i] * (alpha[i] - old_ai))
            + K[:, j] * (y[j] * (alpha[j] - old_aj))
        )
        it += 1
    hit_cap = it >= max_iter and gap >= tol

    yg = -y * grad
    free = (alpha > 1e-9) & (alpha < C - 1e-9)
    if free.any():
        bias = float(np.mean(yg[free]))
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi = yg[up].max() if up.any() else 0.0
        lo = yg[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    return alpha, bias, float(gap), it, hit_cap


def _train_pair(x, labels, a, b, kernel, gamma, C, max_iter, tol) -> PairwiseProblem:
    mask = (labels == a) | (labels == b)
    xs = x[mask]
    y = np.where(labels[mask] == a, 1.0, -1.0)
    K = _kernel_matrix(kernel, gamma, xs, xs)
    alpha, bias, gap, iters, hit_cap = _smo_solve(K, y, C, max_iter, tol)
    keep = alpha > 1e-9
    return PairwiseProblem(
        class_a=a,
        class_b=b,
        support_vectors=xs[keep].copy(),
        dual_coef=(alpha * y)[keep].copy(),
        bias=bias,
        kkt_gap=gap,
        iterations=iters,
        hit_cap=hit_cap,
    )


def _pair_decision(model: SvmModel, pair: PairwiseProblem, xs: np.ndarray) -> np.ndarray:
    K = _kernel_matrix(model.kernel, model.gamma, xs, pair.support_vectors)
    return K @ pair.dual_coef + pair.bias


def _fit_standardization(x: np.ndarray):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def _default_gamma(x_std: np.ndarray) -> float:
    var = float(x_std.var())
    if var <= 0:
        var = 1.0
    return 1.0 / (x_std.shape[1] * var)


def _balanced_indices(labels_idx: np.ndarray, n_classes: int, rng) -> np.ndarray:
    counts = [int(np.sum(labels_idx == c)) for c in range(n_classes)]
    if min(counts) == 0:
        empty = counts.index(0)
        raise DegenerateClass(f"class index {empty} has no samples")
    floor = min(counts)
    chosen = []
    for c in range(n_classes):
        members = np.flatnonzero(labels_idx == c)
        chosen.append(rng.choice(members, size=floor, replace=False))
    return np.sort(np.concatenate(chosen))


def _stratified_folds(labels_idx: np.ndarray, k: int, rng) -> list[np.ndarray]:
    folds = [[] for _ in range(k)]
    for c in np.unique(labels_idx):
        members = np.flatnonzero(labels_idx == c)
        members = members[rng.permutation(len(members))]
        for pos, idx in enumerate(members):
            folds[pos % k].append(idx)
    return [np.sort(np.array(f, dtype=int)) for f in folds]


def _fit_at_c(x, labels_idx, classes, kernel, gamma, C, max_iter, tol):
    pairs = []
    for a in range(len(classes)):
        for b in range(a + 1, len(classes)):
            pairs.append(_train_pair(x, labels_idx, a, b, kernel, gamma, C, max_iter, tol))
    return pairs


def _vote(model: SvmModel, xs: np.ndarray) -> np.ndarray:
    """Predicted class indices by pairwise voting with margin tie-break."""
    n = len(xs)
    n_classes = len(model.classes)
    votes = np.zeros((n, n_classes), dtype=int)
    margins = np.zeros((n, n_classes))
    for pair in model.pairs:
        d = _pair_decision(model, pair, xs)
        wins_a = d > 0
        votes[wins_a, pair.class_a] += 1
        votes[~wins_a, pair.class_b] += 1
        margins[:, pair.class_a] += d
        margins[:, pair.class_b] -= d
    best = np.zeros(n, dtype=int)
    for i in range(n):
        top = votes[i].max()
        tied = np.flatnonzero(votes[i] == top)
        if len(tied) > 1:
            top_margin = margins[i, tied].max()
            tied = tied[margins[i, tied] >= top_margin - 1e-12]
        best[i] = tied[0]  # remaining ties resolve by fixed class order
    return best


def train_svm(
    features: np.ndarray, labels, classes: list, config: SvmConfig | None = None
) -> tuple[SvmModel, TuningReport]:
    """Fit the one-vs-one model with balanced sampling and C-grid tuning.

    labels are values from `classes`; the class order given there is the
    tie-break order and the index space of the model.
    """
    config = config or SvmConfig()
    x = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteFeature("features contain NaN or infinity")
    class_index = {c: i for i, c in enumerate(classes)}
    labels_idx = np.array([class_index[l] for l in labels], dtype=int)

    rng = np.random.default_rng(config.seed)
    if config.balance:
        sel = _balanced_indices(labels_idx, len(classes), rng)
        x, labels_idx = x[sel], labels_idx[sel]
    balanced_counts = {
        str(classes[c]): int(np.sum(labels_idx == c)) for c in range(len(classes))
    }

    mean, std = _fit_standardization(x)
    xs = (x - mean) / std
    gamma = config.gamma if config.gamma is not None else _default_gamma(xs)

    min_count = min(int(np.sum(labels_idx == c)) for c in range(len(classes)))
    effective_k = min(config.k_folds, min_count)
    mean_acc = {}
    if effective_k >= 2:
        folds = _stratified_folds(labels_idx, effective_k, rng)
        for C in config.c_grid:
            accs = []
            for held in range(effective_k):
                test_idx = folds[held]
                train_idx = np.sort(
                    np.concatenate([folds[f] for f in range(effective_k) if f != held])
                )
                pairs = _fit_at_c(
                    xs[train_idx], labels_idx[train_idx], classes,
                    config.kernel, gamma, C, config.max_iter, config.tol,
                )
                probe = SvmModel(config.kernel, gamma, C, list(classes), np.zeros(x.shape[1]), np.ones(x.shape[1]), pairs)
                pred = _vote(probe, xs[test_idx])
                accs.append(float(np.mean(pred == labels_idx[test_idx])))
            mean_acc[C] = float(np.mean(accs))
        best_acc = max(mean_acc.values())
        chosen_c = min(c for c, acc in mean_acc.items() if acc >= best_acc - 1e-12)
    else:
        # too few samples per class to hold any out: strongest regularization
        chosen_c = min(config.c_grid)

    pairs = _fit_at_c(
        xs, labels_idx, classes, config.kernel, gamma, chosen_c, config.max_iter, config.tol
    )
    model = SvmModel(
        kernel=config.kernel,
        gamma=gamma,
        C=chosen_c,
        classes=list(classes),
        mean=mean,
        std=std,
        pairs=pairs,
    )
    report = TuningReport(
        c_grid=list(config.c_grid),
        mean_accuracy=mean_acc,
        chosen_c=chosen_c,
        gamma=gamma,
        solver_iterations=[p.iterations for p in pairs],
        kkt_gaps=[p.kkt_gap for p in pairs],
        any_hit_cap=any(p.hit_cap for p in pairs),
        balanced_counts=balanced_counts,
    )
    return model, report


def predict_svm(model: SvmModel, feature: np.ndarray):
    """Predicted class value for one feature vector."""
    x = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != len(model.mean):
        raise DimensionMismatch(f"feature length {x.shape[1]} != {len(model.mean)}")
    idx = _vote(model, model.standardize(x))[0]
    return model.classes[idx]


def predict_svm_batch(model: SvmModel, features: np.ndarray) -> list:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[1] != len(model.mean):
        raise DimensionMismatch(f"feature length {x.shape[1]} != {len(model.mean)}")
    return [model.classes[i] for i in _vote(model, model.standardize(x))]


def vote_shares(model: SvmModel, feature: np.ndarray) -> np.ndarray:
    """Normalized one-vs-one vote counts (not calibrated probabilities)."""
    x = model.standardize(np.asarray(feature, dtype=np.float64).reshape(1, -1))
    n_classes = len(model.classes)
    votes = np.zeros(n_classes)
    for pair in model.pairs:
        d = float(_pair_decision(model, pair, x)[0])
        votes[pair.class_a if d > 0 else pair.class_b] += 1
    return votes / votes.sum()


# ---------------------------------------------------------------------------
# serialization


def _class_token(c) -> str:
    value = getattr(c, "value", c)
    return str(value)


def save_svm(model: SvmModel, path) -> None:
    """JSON header (kernel, C, gamma, classes, standardization, pair layout)
    followed by one little-endian float64 blob per pair (vectors then coefs)."""
    header = {
        "format": FORMAT_VERSION,
        "kernel": model.kernel,
        "gamma": model.gamma,
        "C": model.C,
        "classes": [_class_token(c) for c in model.classes],
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "pairs": [
            {
                "class_a": p.class_a,
                "class_b": p.class_b,
                "n_support": int(len(p.dual_coef)),
                "bias": p.bias,
                "kkt_gap": p.kkt_gap,
                "iterations": p.iterations,
                "hit_cap": p.hit_cap,
            }
            for p in model.pairs
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in model.pairs:
            fh.write(np.ascontiguousarray(p.support_vectors, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(p.dual_coef, dtype="<f8").tobytes())


def load_svm(path) -> SvmModel:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise SvmError("not an svm model container")
    (length,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(length).decode())
    if header.get("format") != FORMAT_VERSION:
        raise SvmError("unsupported svm container version")
    mean = np.array(header["mean"])
    std = np.array(header["std"])
    dim = len(mean)
    pairs = []
    for meta in header["pairs"]:
        n = meta["n_support"]
        sv = np.frombuffer(buf.read(n * dim * 8), dtype="<f8").reshape(n, dim).copy()
        coef = np.frombuffer(buf.read(n * 8), dtype="<f8").copy()
        pairs.append(
            PairwiseProblem(
                class_a=meta["class_a"],
                class_b=meta["class_b"],
                support_vectors=sv,
                dual_coef=coef,
                bias=meta["bias"],
                kkt_gap=meta["kkt_gap"],
                iterations=meta["iterations"],
                hit_cap=meta["hit_cap"],
            )
        )
    return SvmModel(
        kernel=header["kernel"],
        gamma=header["gamma"],
        C=header["C"],
        classes=header["classes"],
        mean=mean,
        std=std,
        pairs=pairs,
    )
