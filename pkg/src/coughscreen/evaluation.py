"""Confusion matrices, screening metrics, and cross-validation orchestration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, kfold_split


class EvaluationError(Exception):
    pass


class LengthMismatch(EvaluationError):
    pass


class UnknownLabel(EvaluationError):
    pass


class EmptyMatrix(EvaluationError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray
    classes: tuple

    def row_normalized(self) -> np.ndarray:
        """Row percentages; all-zero rows stay zero."""
        totals = self.counts.sum(axis=1, keepdims=True)
        safe = np.where(totals == 0, 1, totals)
        return self.counts / safe * 100.0


@dataclass(frozen=True)
class Metrics:
    f1: float
    sensitivity: float
    specificity: float
    precision: float
    accuracy: float
    undefined: tuple = ()  # metric names forced to 0 by a zero denominator


def confusion_matrix(truths, preds, classes) -> ConfusionMatrix:
    truths, preds = list(truths), list(preds)
    if len(truths) != len(preds):
        raise LengthMismatch(f"{len(truths)} truths vs {len(preds)} predictions")
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(truths, preds):
        if t not in index or p not in index:
            raise UnknownLabel(f"label {t!r} or {p!r} not in {list(classes)}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts=counts, classes=tuple(classes))


def metrics(cm: ConfusionMatrix, positive) -> Metrics:
    """One-vs-rest reduction for the positive class; accuracy is the trace ratio."""
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix holds no observations")
    pos = cm.classes.index(positive)
    tp = counts[pos, pos]
    fn = counts[pos].sum() - tp
    fp = counts[:, pos].sum() - tp
    tn = total - tp - fn - fp

    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return float(num) / float(den)

    sensitivity = ratio(tp, tp + fn, "sensitivity")
    specificity = ratio(tn, tn + fp, "specificity")
    precision = ratio(tp, tp + fp, "precision")
    if precision + sensitivity == 0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2.0 * precision * sensitivity / (precision + sensitivity)
    accuracy = float(np.trace(counts)) / float(total)
    return Metrics(
        f1=f1,
        sensitivity=sensitivity,
        specificity=specificity,
        precision=precision,
        accuracy=accuracy,
        undefined=tuple(undefined),
    )


@dataclass
class FoldResult:
    fold: int
    matrix: ConfusionMatrix
    accuracy: float
    per_class: dict
    loss_history: list = field(default_factory=list)


@dataclass
class CrossValResult:
    classes: tuple
    folds: list
    mean_normalized_matrix: np.ndarray

    @property
    def accuracies(self) -> list[float]:
        return [f.accuracy for f in self.folds]

    def accuracy_cdf(self) -> list[tuple[float, float]]:
        """Empirical CDF points (accuracy, cumulative fraction)."""
        accs = sorted(self.accuracies)
        n = len(accs)
        return [(a, (i + 1) / n) for i, a in enumerate(accs)]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))


def cross_validate(pipeline_factory, corpus: Corpus, k: int, seed: int, classes=None) -> CrossValResult:
    """k-fold evaluation of a fit/predict pipeline over a corpus.

    pipeline_factory(fold_index) must return an object with
    fit(train_samples, seed) and predict(samples) -> list of labels; a
    loss_history attribute, when present, is carried into the fold result.
    """
    folds = kfold_split(corpus, k, seed)
    classes = tuple(classes) if classes is not None else tuple(sorted(corpus.label_set))
    results = []
    for held in range(k):
        train_samples = tuple(
            s for f in range(k) if f != held for s in folds[f]
        )
        test_samples = folds[held]
        pipeline = pipeline_factory(held)
        pipeline.fit(train_samples, seed + held)
        preds = pipeline.predict(test_samples)
        cm = confusion_matrix([s.label for s in test_samples], preds, classes)
        per_class = {c: metrics(cm, c) for c in classes}
        results.append(
            FoldResult(
                fold=held,
                matrix=cm,
                accuracy=metrics(cm, classes[0]).accuracy,
                per_class=per_class,
                loss_history=list(getattr(pipeline, "loss_history", [])),
            )
        )
    mean_norm = np.mean([r.matrix.row_normalized() for r in results], axis=0)
    return CrossValResult(classes=classes, folds=results, mean_normalized_matrix=mean_norm)
