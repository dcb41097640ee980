"""Minimal trainable CNN substrate in NumPy.

Layer vocabulary: conv2d (same padding, stride 1), maxpool2x2, dropout
(inverted scaling), flatten, dense, relu, softmax.  Convolutions keep
activations in channels-first (C, B, H, W) layout and route the heavy
lifting through BLAS in the GEMM orientations this layout makes fast:
column matrices (C*K*K, B*H*W) for the forward/weight-gradient products
and per-shift (C, F) x (F, B*H*W) products for the input gradient.
"""

from __future__ import annotations

import ctypes
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

# Large column/activation temporaries dominate training time when glibc
# serves each one from a fresh mmap (page-fault bound).  Raising the mmap
# and trim thresholds keeps those blocks on the heap for reuse; harmless
# no-op where mallopt is unavailable.
try:
    _libc = ctypes.CDLL(None)
    _libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    _libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
except (OSError, AttributeError):  # pragma: no cover - non-glibc platforms
    pass

MAGIC = b"AICN"
FORMAT_VERSION = 1

# largest per-layer column buffer kept alive between forward and backward
_COLS_CACHE_BYTES = 600 * 1024 * 1024


class NetError(Exception):
    pass


class ShapeMismatch(NetError):
    pass


class NoForwardState(NetError):
    pass


class ArchitectureMismatch(NetError):
    pass


class EmptyDataset(NetError):
    pass


class LabelOutOfRange(NetError):
    pass


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = "abstract"
    frozen = False

    def build(self, input_shape, rng):
        return input_shape

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def params(self):
        return []

    def grads(self):
        return []

    def hyperparams(self):
        return {}

    def clear_cache(self):
        pass

    def cast(self, dtype):
        pass


class Conv2D(Layer):
    """Same-padding stride-1 convolution; kernels (F, C, K, K), odd K."""

    kind = "conv2d"

    def __init__(self, filters: int, kernel_size: int, frozen: bool = False):
        if kernel_size % 2 == 0:
            raise ValueError("same-padding conv needs an odd kernel size")
        self.filters = filters
        self.kernel_size = kernel_size
        self.frozen = frozen
        self.weights = None
        self.bias = None
        self.dweights = None
        self.dbias = None
        self._cache = None

    def hyperparams(self):
        return {"filters": self.filters, "kernel_size": self.kernel_size}

    def build(self, input_shape, rng):
        c, h, w = input_shape
        k = self.kernel_size
        fan_in = k * k * c
        limit = np.sqrt(6.0 / fan_in)
        self.weights = rng.uniform(-limit, limit, size=(self.filters, c, k, k))
        self.bias = np.zeros(self.filters)
        return (self.filters, h, w)

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.dweights, self.dbias]

    def cast(self, dtype):
        self.weights = self.weights.astype(dtype)
        self.bias = self.bias.astype(dtype)

    def _chunk_size(self, b, h, w, ckk, itemsize) -> int:
        per_image = ckk * h * w * itemsize
        return max(1, min(b, int(_COLS_CACHE_BYTES // max(per_image, 1))))

    def _build_cols(self, padded, bs, be, h, w):
        c = padded.shape[0]
        k = self.kernel_size
        nb = be - bs
        cols = np.empty((c * k * k, nb * h * w), dtype=padded.dtype)
        view = cols.reshape(c, k, k, nb, h, w)
        for ki in range(k):
            for kj in range(k):
                view[:, ki, kj] = padded[:, bs:be, ki : ki + h, kj : kj + w]
        return cols

    def forward(self, x, training=False, rng=None):
        c, b, h, w = x.shape
        k = self.kernel_size
        pad = k // 2
        wmat = self.weights.reshape(self.filters, -1)
        padded = np.zeros((c, b, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        padded[:, :, pad : pad + h, pad : pad + w] = x
        out = np.empty((self.filters, b, h, w), dtype=x.dtype)
        chunk = self._chunk_size(b, h, w, c * k * k, x.itemsize)
        cached_cols = [] if training and chunk >= b else None
        for bs in range(0, b, chunk):
            be = min(bs + chunk, b)
            cols = self._build_cols(padded, bs, be, h, w)
            out[:, bs:be] = (wmat @ cols).reshape(self.filters, be - bs, h, w)
            if cached_cols is not None:
                cached_cols.append(cols)
        out += self.bias[:, None, None, None].astype(x.dtype)
        self._cache = (padded, (c, b, h, w), chunk, cached_cols) if training else None
        return out

    def backward(self, dout):
        if self._cache is None:
            raise NoForwardState("conv2d backward without training forward")
        padded, (c, b, h, w), chunk, cached_cols = self._cache
        k = self.kernel_size
        pad = k // 2
        dtype = dout.dtype
        wmat = self.weights.reshape(self.filters, -1).astype(dtype, copy=False)

        if self.frozen:
            self.dweights = np.zeros_like(self.weights)
            self.dbias = np.zeros_like(self.bias)
        else:
            dwmat = np.zeros((self.filters, c * k * k), dtype=dtype)
            for idx, bs in enumerate(range(0, b, chunk)):
                be = min(bs + chunk, b)
                cols = (
                    cached_cols[idx]
                    if cached_cols is not None
                    else self._build_cols(padded, bs, be, h, w)
                )
                dy = np.ascontiguousarray(dout[:, bs:be]).reshape(self.filters, -1)
                dwmat += dy @ cols.T
            self.dweights = dwmat.reshape(self.weights.shape).astype(self.weights.dtype)
            self.dbias = dout.sum(axis=(1, 2, 3)).astype(self.bias.dtype)

        # input gradient: one GEMM per kernel shift, accumulated into the
        # padded buffer; the (K, K, C, F) transpose makes each (C, F) slice
        # contiguous, which BLAS needs to hit full rate here
        dpadded = np.zeros_like(padded)
        dflat = dout.reshape(self.filters, b * h * w)
        wk = np.ascontiguousarray(self.weights.transpose(2, 3, 1, 0).astype(dtype, copy=False))
        for ki in range(k):
            for kj in range(k):
                g = wk[ki, kj] @ dflat
                dpadded[:, :, ki : ki + h, kj : kj + w] += g.reshape(c, b, h, w)
        return dpadded[:, :, pad : pad + h, pad : pad + w]

    def clear_cache(self):
        self._cache = None


class MaxPool2x2(Layer):
    kind = "maxpool2x2"

    def __init__(self):
        self._cache = None

    def build(self, input_shape, rng):
        c, h, w = input_shape
        if h % 2 or w % 2:
            raise ShapeMismatch(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)

    def forward(self, x, training=False, rng=None):
        c, b, h, w = x.shape
        windows = (
            x.reshape(c, b, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(c, b, h // 2, w // 2, 4)
        )
        idx = windows.argmax(axis=4)
        out = np.take_along_axis(windows, idx[..., None], axis=4)[..., 0]
        self._cache = (idx, x.shape) if training else None
        return out

    def backward(self, dout):
        if self._cache is None:
            raise NoForwardState("maxpool backward without training forward")
        idx, (c, b, h, w) = self._cache
        dwindows = np.zeros((c, b, h // 2, w // 2, 4), dtype=dout.dtype)
        np.put_along_axis(dwindows, idx[..., None], dout[..., None], axis=4)
        return (
            dwindows.reshape(c, b, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(c, b, h, w)
        )

    def clear_cache(self):
        self._cache = None


class Dropout(Layer):
    """Inverted dropout: scales kept units by 1/(1-rate) at train time."""

    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self._mask = None

    def hyperparams(self):
        return {"rate": self.rate}

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._mask = np.ones(1, dtype=x.dtype) if training else None
            return x
        if rng is None:
            raise NetError("training-mode dropout needs an rng")
        keep = rng.random(x.shape, dtype=np.float32) >= self.rate
        self._mask = keep.astype(x.dtype)
        self._mask /= 1.0 - self.rate
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            raise NoForwardState("dropout backward without training forward")
        return dout * self._mask

    def clear_cache(self):
        self._mask = None


class Flatten(Layer):
    """(C, B, H, W) -> (B, C*H*W), feature order (c, h, w)."""

    kind = "flatten"

    def __init__(self):
        self._shape = None

    def build(self, input_shape, rng):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape if training else None
        c, b, h, w = x.shape
        return np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(b, c * h * w)

    def backward(self, dout):
        if self._shape is None:
            raise NoForwardState("flatten backward without training forward")
        c, b, h, w = self._shape
        return np.ascontiguousarray(
            dout.reshape(b, c, h, w).transpose(1, 0, 2, 3)
        )

    def clear_cache(self):
        self._shape = None


class Dense(Layer):
    kind = "dense"

    def __init__(self, units: int, frozen: bool = False):
        self.units = units
        self.frozen = frozen
        self.weights = None
        self.bias = None
        self.dweights = None
        self.dbias = None
        self._x = None

    def hyperparams(self):
        return {"units": self.units}

    def build(self, input_shape, rng):
        (d,) = input_shape
        limit = np.sqrt(6.0 / d)
        self.weights = rng.uniform(-limit, limit, size=(d, self.units))
        self.bias = np.zeros(self.units)
        return (self.units,)

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.dweights, self.dbias]

    def cast(self, dtype):
        self.weights = self.weights.astype(dtype)
        self.bias = self.bias.astype(dtype)

    def forward(self, x, training=False, rng=None):
        self._x = x if training else None
        return x @ self.weights + self.bias

    def backward(self, dout):
        if self._x is None:
            raise NoForwardState("dense backward without training forward")
        if self.frozen:
            self.dweights = np.zeros_like(self.weights)
            self.dbias = np.zeros_like(self.bias)
        else:
            self.dweights = (self._x.T @ dout).astype(self.weights.dtype)
            self.dbias = dout.sum(axis=0).astype(self.bias.dtype)
        return dout @ self.weights.T


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._mask = None

    def forward(self, x, training=False, rng=None):
        self._mask = x > 0 if training else None
        return np.maximum(x, 0.0)

    def backward(self, dout):
        if self._mask is None:
            raise NoForwardState("relu backward without training forward")
        return dout * self._mask

    def clear_cache(self):
        self._mask = None


class Softmax(Layer):
    kind = "softmax"

    def __init__(self):
        self._probs = None

    def forward(self, x, training=False, rng=None):
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
        self._probs = probs if training else None
        return probs

    def backward(self, dout):
        if self._probs is None:
            raise NoForwardState("softmax backward without training forward")
        p = self._probs
        return p * (dout - np.sum(dout * p, axis=1, keepdims=True))

    def clear_cache(self):
        self._probs = None


_LAYER_KINDS = {
    "conv2d": lambda hp: Conv2D(hp["filters"], hp["kernel_size"]),
    "maxpool2x2": lambda hp: MaxPool2x2(),
    "dropout": lambda hp: Dropout(hp["rate"]),
    "flatten": lambda hp: Flatten(),
    "dense": lambda hp: Dense(hp["units"]),
    "relu": lambda hp: ReLU(),
    "softmax": lambda hp: Softmax(),
}

_SPATIAL_KINDS = ("conv2d", "maxpool2x2")


# ---------------------------------------------------------------------------
# network


class Network:
    """Ordered layer stack over (H, W, C) image batches, softmax output."""

    def __init__(self, layers, input_shape, n_classes):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)  # (H, W, C) as seen by callers
        self.n_classes = int(n_classes)
        self.built = False
        self._has_forward_state = False

    def build(self, seed: int = 0) -> "Network":
        rng = np.random.default_rng(seed)
        h, w, c = self.input_shape
        shape = (c, h, w)
        for layer in self.layers:
            shape = layer.build(shape, rng)
        if shape != (self.n_classes,):
            raise ShapeMismatch(f"stack produces {shape}, expected ({self.n_classes},)")
        self.built = True
        return self

    @property
    def dtype(self):
        for layer in self.layers:
            if layer.params():
                return layer.params()[0].dtype
        return np.float64

    def cast(self, dtype) -> "Network":
        for layer in self.layers:
            layer.cast(dtype)
        return self

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x)
        if x.ndim == len(self.input_shape):
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"batch shape {x.shape[1:]} != input {self.input_shape}")
        x = np.ascontiguousarray(x.transpose(3, 0, 1, 2), dtype=self.dtype)
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        self._has_forward_state = training
        return x

    def backward(self, dprobs):
        """Backpropagate; the gradient below the earliest parameterized layer
        is not computed (nothing consumes it)."""
        if not self._has_forward_state:
            raise NoForwardState("backward requires a prior training-mode forward")
        first_param = next(
            (i for i, l in enumerate(self.layers) if l.params()), len(self.layers)
        )
        grad = dprobs
        for i in range(len(self.layers) - 1, -1, -1):
            if i < first_param:
                break
            grad = self.layers[i].backward(grad)
        return grad

    def clear_caches(self):
        for layer in self.layers:
            layer.clear_cache()
        self._has_forward_state = False

    # -- parameter access ---------------------------------------------------

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def gradients(self):
        out = []
        for layer in self.layers:
            out.extend(layer.grads())
        return out

    def frozen_mask(self):
        out = []
        for layer in self.layers:
            out.extend([layer.frozen] * len(layer.params()))
        return out

    # -- description / identity ---------------------------------------------

    def descriptor(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "layers": [
                {"kind": layer.kind, "frozen": bool(layer.frozen), **layer.hyperparams()}
                for layer in self.layers
            ],
        }

    def architecture_hash(self) -> str:
        blob = json.dumps(self.descriptor(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def parameter_hash(self) -> str:
        digest = hashlib.sha256()
        for p in self.parameters():
            digest.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return digest.hexdigest()

    def clone_architecture(self) -> "Network":
        return network_from_descriptor(self.descriptor())


def network_from_descriptor(desc: dict) -> Network:
    layers = []
    for spec in desc["layers"]:
        layer = _LAYER_KINDS[spec["kind"]](spec)
        layer.frozen = bool(spec.get("frozen", False))
        layers.append(layer)
    return Network(layers, tuple(desc["input_shape"]), desc["n_classes"])


# ---------------------------------------------------------------------------
# losses


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and its gradient w.r.t. probs.

    Two-class targets fall out as binary cross-entropy over the softmax pair.
    """
    b = probs.shape[0]
    clipped = np.clip(probs, 1e-12, None)
    onehot = np.zeros_like(probs)
    onehot[np.arange(b), targets] = 1.0
    loss = -float(np.sum(onehot * np.log(clipped))) / b
    dprobs = -onehot / clipped / b
    return loss, dprobs


# ---------------------------------------------------------------------------
# optimization


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    loss: str = "categorical_cross_entropy"
    dtype: str = "float64"  # float32 available for budget-bound runs

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    scratch: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            step=0,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            scratch=[np.empty_like(p) for p in params],
        )


def adam_step(params, grads, state: AdamState, config: TrainConfig, frozen=None):
    """One bias-corrected Adam update, in place; frozen params untouched."""
    if len(params) != len(grads):
        raise ShapeMismatch("params/grads length mismatch")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not state.scratch:
        state.scratch = [np.empty_like(p) for p in params]
    frozen = frozen or [False] * len(params)
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for p, g, m, v, buf, is_frozen in zip(
        params, grads, state.m, state.v, state.scratch, frozen
    ):
        if is_frozen:
            continue
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
        m *= b1
        np.multiply(g, 1.0 - b1, out=buf)
        m += buf
        v *= b2
        np.multiply(g, g, out=buf)
        buf *= 1.0 - b2
        v += buf
        np.sqrt(v, out=buf)
        buf /= np.sqrt(bias2)
        buf += config.epsilon
        np.divide(m, buf, out=buf)
        buf *= config.learning_rate / bias1
        p -= buf
    return params, state


@dataclass
class EpochStats:
    train_loss: float
    val_loss: float | None = None


def _forward_in_chunks(net: Network, x: np.ndarray, chunk: int = 8) -> np.ndarray:
    outs = [net.forward(x[i : i + chunk]) for i in range(0, len(x), chunk)]
    return np.concatenate(outs, axis=0)


def train(
    net: Network,
    dataset: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[EpochStats]:
    """Seeded minibatch Adam training; returns the per-epoch loss history."""
    x, y = dataset
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise EmptyDataset("no training samples")
    if y.min() < 0 or y.max() >= net.n_classes:
        raise LabelOutOfRange(f"labels must lie in [0, {net.n_classes})")
    dtype = np.float32 if config.dtype == "float32" else np.float64
    net.cast(dtype)
    x = np.asarray(x, dtype=dtype)

    rng = np.random.default_rng(config.seed)
    state = AdamState.for_params(net.parameters())
    frozen = net.frozen_mask()
    history: list[EpochStats] = []
    for _ in range(config.epochs):
        perm = rng.permutation(len(x))
        batch_losses = []
        for start in range(0, len(x), config.batch_size):
            idx = perm[start : start + config.batch_size]
            probs = net.forward(x[idx], training=True, rng=rng)
            loss, dprobs = cross_entropy(probs, y[idx])
            net.backward(dprobs)
            adam_step(net.parameters(), net.gradients(), state, config, frozen)
            batch_losses.append(loss)
        net.clear_caches()
        val_loss = None
        if validation is not None:
            xv, yv = validation
            val_probs = _forward_in_chunks(net, np.asarray(xv, dtype=dtype))
            val_loss, _ = cross_entropy(val_probs, np.asarray(yv, dtype=np.int64))
        history.append(EpochStats(train_loss=float(np.mean(batch_losses)), val_loss=val_loss))
    return history


# ---------------------------------------------------------------------------
# transfer


def transfer_from(source: Network, target: Network, freeze_first_conv: bool) -> Network:
    """Copy every matching-shape parameter from source into target.

    The final dense layer keeps target's fresh initialization; optionally the
    first convolution of the target is frozen for fine-tuning.
    """
    src_layers = source.layers
    tgt_layers = target.layers
    if len(src_layers) != len(tgt_layers):
        raise ArchitectureMismatch("layer counts differ")
    last_dense_idx = max(
        (i for i, l in enumerate(tgt_layers) if l.kind == "dense"), default=None
    )
    for i, (src, tgt) in enumerate(zip(src_layers, tgt_layers)):
        if src.kind != tgt.kind:
            raise ArchitectureMismatch(f"layer {i}: {src.kind} vs {tgt.kind}")
        if i == last_dense_idx:
            continue  # output head stays freshly initialized
        src_params, tgt_params = src.params(), tgt.params()
        for sp, tp in zip(src_params, tgt_params):
            if sp.shape != tp.shape:
                raise ArchitectureMismatch(
                    f"layer {i} parameter shape {sp.shape} vs {tp.shape}"
                )
            tp[...] = sp
    if freeze_first_conv:
        for layer in tgt_layers:
            if layer.kind == "conv2d":
                layer.frozen = True
                break
    return target


# ---------------------------------------------------------------------------
# serialization


def save_network(net: Network, path) -> None:
    """Versioned container: magic, version, JSON descriptor, float64 blobs."""
    desc = net.descriptor()
    desc["arch_hash"] = net.architecture_hash()
    blob = json.dumps(desc, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for p in net.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_network(path, expected_arch_hash: str | None = None) -> Network:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise NetError("not a model container")
    version, length = struct.unpack("<II", buf.read(8))
    if version != FORMAT_VERSION:
        raise NetError(f"unsupported container version {version}")
    desc = json.loads(buf.read(length).decode())
    stored_hash = desc.pop("arch_hash", None)
    net = network_from_descriptor(desc).build(seed=0)
    if stored_hash != net.architecture_hash():
        raise ArchitectureMismatch("architecture hash mismatch in container")
    if expected_arch_hash is not None and stored_hash != expected_arch_hash:
        raise ArchitectureMismatch("container does not hold the expected architecture")
    for p in net.parameters():
        raw = buf.read(p.size * 8)
        if len(raw) != p.size * 8:
            raise NetError("truncated parameter blob")
        p[...] = np.frombuffer(raw, dtype="<f8").reshape(p.shape)
    net.clear_caches()
    return net
