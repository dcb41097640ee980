"""Concrete screening networks and their inference wrappers.

The detector is a binary CNN over 240x320x1 spectro-images; the two
transfer nets reuse its weights (first convolution frozen) with 4-class
and 2-class heads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .neuralnet import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2x2,
    Network,
    ReLU,
    Softmax,
    TrainConfig,
    train,
    transfer_from,
)

INPUT_SHAPE = (240, 320, 1)  # rows x cols x channels of the spectro-image


class DetectionClass(Enum):
    COUGH = "cough"
    NOT_COUGH = "not_cough"


class DiagnosisClass(Enum):
    COVID19 = "covid19"
    PERTUSSIS = "pertussis"
    BRONCHITIS = "bronchitis"
    NORMAL = "normal"


class BinaryClass(Enum):
    COVID = "covid"
    NOT_COVID = "not_covid"


DETECTION_ORDER = [DetectionClass.COUGH, DetectionClass.NOT_COUGH]
DIAGNOSIS_ORDER = [
    DiagnosisClass.COVID19,
    DiagnosisClass.PERTUSSIS,
    DiagnosisClass.BRONCHITIS,
    DiagnosisClass.NORMAL,
]
BINARY_ORDER = [BinaryClass.COVID, BinaryClass.NOT_COVID]


def binary_class_for(label: DiagnosisClass) -> BinaryClass:
    return BinaryClass.COVID if label is DiagnosisClass.COVID19 else BinaryClass.NOT_COVID


@dataclass(frozen=True)
class DetectionLabel:
    value: DetectionClass
    probability: float


@dataclass(frozen=True)
class DiagnosisLabel:
    value: DiagnosisClass
    probabilities: np.ndarray  # over DIAGNOSIS_ORDER

    @property
    def probability(self) -> float:
        return float(self.probabilities[DIAGNOSIS_ORDER.index(self.value)])


@dataclass(frozen=True)
class BinaryLabel:
    value: BinaryClass
    probability: float


def _stack(n_classes: int) -> list:
    return [
        MaxPool2x2(),
        Conv2D(16, 5),
        ReLU(),
        Conv2D(16, 5),
        ReLU(),
        MaxPool2x2(),
        Dropout(0.15),
        Conv2D(32, 5),
        ReLU(),
        Conv2D(32, 5),
        ReLU(),
        MaxPool2x2(),
        Dropout(0.15),
        Flatten(),
        Dense(256),
        ReLU(),
        Dropout(0.30),
        Dense(n_classes),
        Softmax(),
    ]


def build_detector(seed: int = 0) -> Network:
    """Binary cough/not-cough CNN: pool, two 16-filter 5x5 conv blocks, two
    32-filter blocks, 256-unit dense, 0.30 dropout, 2-way softmax."""
    return Network(_stack(2), INPUT_SHAPE, 2).build(seed=seed)


def build_dtl_mc(detector: Network, seed: int = 1) -> Network:
    """Four-class transfer net: detector weights, fresh 4-way head, first
    convolution frozen."""
    net = Network(_stack(4), INPUT_SHAPE, 4).build(seed=seed)
    return transfer_from(detector, net, freeze_first_conv=True)


def build_dtl_bc(detector: Network, seed: int = 2) -> Network:
    """Binary covid/not-covid transfer net with the same freeze rule."""
    net = Network(_stack(2), INPUT_SHAPE, 2).build(seed=seed)
    return transfer_from(detector, net, freeze_first_conv=True)


def _predict_one(net: Network, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != INPUT_SHAPE:
        from .neuralnet import ShapeMismatch

        raise ShapeMismatch(f"image shape {image.shape} != {INPUT_SHAPE}")
    return net.forward(image[None])[0]


def detect(net: Network, image: np.ndarray) -> DetectionLabel:
    probs = _predict_one(net, image)
    idx = int(np.argmax(probs))
    return DetectionLabel(value=DETECTION_ORDER[idx], probability=float(probs[idx]))


def classify_mc(net: Network, image: np.ndarray) -> DiagnosisLabel:
    probs = _predict_one(net, image)
    return DiagnosisLabel(value=DIAGNOSIS_ORDER[int(np.argmax(probs))], probabilities=probs)


def classify_bc(net: Network, image: np.ndarray) -> BinaryLabel:
    probs = _predict_one(net, image)
    idx = int(np.argmax(probs))
    return BinaryLabel(value=BINARY_ORDER[idx], probability=float(probs[idx]))


def train_classifier(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    validation=None,
):
    """Thin wrapper so recipes share one code path; returns loss history."""
    return train(net, (images, labels), config, validation=validation)


# ---------------------------------------------------------------------------
# corpus-level recipes and cross-validation pipelines


def sample_image(sample, cache: dict | None = None) -> np.ndarray:
    """Spectro-image for a corpus sample, via validate -> mel -> resize."""
    if cache is not None and sample.id in cache:
        return cache[sample.id]
    from .audio import validate_clip
    from .dsp import mel_spectrogram, to_image

    image = to_image(mel_spectrogram(validate_clip(sample.load_clip()).samples))
    if cache is not None:
        cache[sample.id] = image
    return image


def _image_batch(samples, label_order, cache):
    images = np.stack([sample_image(s, cache) for s in samples])
    index = {label: i for i, label in enumerate(label_order)}
    labels = np.array([index[s.label] for s in samples], dtype=np.int64)
    return images, labels


class DetectorPipeline:
    """fit/predict adapter for detector cross-validation over a corpus."""

    label_order = ("cough", "not_cough")

    def __init__(self, epochs=5, batch_size=16, learning_rate=1e-3, image_cache=None,
                 dtype="float64"):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.image_cache = image_cache if image_cache is not None else {}
        self.dtype = dtype
        self.net = None
        self.loss_history = []

    def fit(self, samples, seed):
        images, labels = _image_batch(samples, self.label_order, self.image_cache)
        self.net = build_detector(seed=seed)
        config = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=seed,
            dtype=self.dtype,
        )
        history = train_classifier(self.net, images, labels, config)
        self.loss_history = [h.train_loss for h in history]
        return self

    def predict(self, samples):
        out = []
        for s in samples:
            label = detect(self.net, sample_image(s, self.image_cache))
            out.append(label.value.value)
        return out


class TransferPipeline:
    """fit/predict adapter for the transfer nets (4-class or binary).

    Balances classes before training, builds the transfer net from the
    supplied trained detector (first conv frozen), then fine-tunes.
    """

    def __init__(
        self,
        detector: Network,
        n_classes: int = 4,
        epochs=5,
        batch_size=16,
        learning_rate=1e-3,
        image_cache=None,
        label_map=None,
        dtype="float64",
    ):
        self.detector = detector
        self.n_classes = n_classes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.image_cache = image_cache if image_cache is not None else {}
        self.label_map = label_map  # corpus label -> training label
        self.dtype = dtype
        if n_classes == 4:
            self.label_order = tuple(c.value for c in DIAGNOSIS_ORDER)
        else:
            self.label_order = tuple(c.value for c in BINARY_ORDER)
        self.net = None
        self.loss_history = []

    def _mapped_label(self, sample) -> str:
        return self.label_map[sample.label] if self.label_map else sample.label

    def fit(self, samples, seed):
        from .corpus import Corpus, balance_classes, Sample

        mapped = tuple(
            Sample(id=s.id, path=s.path, label=self._mapped_label(s), split=s.split)
            for s in samples
        )
        balanced = balance_classes(Corpus(samples=mapped), seed=seed)
        images, labels = _image_batch(balanced.samples, self.label_order, self.image_cache)
        builder = build_dtl_mc if self.n_classes == 4 else build_dtl_bc
        self.net = builder(self.detector, seed=seed)
        config = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=seed,
            dtype=self.dtype,
        )
        history = train_classifier(self.net, images, labels, config)
        self.loss_history = [h.train_loss for h in history]
        return self

    def predict(self, samples):
        out = []
        for s in samples:
            image = sample_image(s, self.image_cache)
            if self.n_classes == 4:
                out.append(classify_mc(self.net, image).value.value)
            else:
                out.append(classify_bc(self.net, image).value.value)
        return out


class SvmPipeline:
    """fit/predict adapter for the feature-vector SVM branch."""

    label_order = tuple(c.value for c in DIAGNOSIS_ORDER)

    def __init__(self, svm_config=None, feature_cache=None, n_components=None):
        from .features import DEFAULT_PCA_COMPONENTS

        self.svm_config = svm_config
        self.feature_cache = feature_cache if feature_cache is not None else {}
        self.n_components = n_components or DEFAULT_PCA_COMPONENTS
        self.model = None
        self.report = None
        self.loss_history = []

    def _features(self, samples) -> np.ndarray:
        from .audio import validate_clip
        from .dsp import mfcc
        from .features import feature_vector

        rows = []
        for s in samples:
            if s.id not in self.feature_cache:
                clip = validate_clip(s.load_clip())
                self.feature_cache[s.id] = feature_vector(
                    mfcc(clip.samples), self.n_components
                )
            rows.append(self.feature_cache[s.id])
        return np.array(rows)

    def fit(self, samples, seed):
        from dataclasses import replace

        from .svm import SvmConfig, train_svm

        config = self.svm_config or SvmConfig()
        config = replace(config, seed=seed)
        feats = self._features(samples)
        labels = [s.label for s in samples]
        self.model, self.report = train_svm(feats, labels, list(self.label_order), config)
        return self

    def predict(self, samples):
        from .svm import predict_svm_batch

        return predict_svm_batch(self.model, self._features(samples))
