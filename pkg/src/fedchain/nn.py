"""Plaintext feedforward networks with mini-batch training.

Desk-scale layer zoo: dense, 2-d convolution, ReLU, average pooling and
flatten.  Models are immutable values; training returns a new model.  The
canonical serialization (little-endian layer descriptors followed by
row-major float64 parameters in declaration order) feeds both the model
digest used by the ledger and the parameter flattening used by the secure
aggregation layer, so every module agrees on parameter order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset

_MAGIC = b"FCNN"
_VERSION = 1


class MalformedModelError(ValueError):
    """Model bytes failed structural validation."""


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class Conv2D:
    in_ch: int
    out_ch: int
    kernel: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class AvgPool:
    size: int


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Dense | Conv2D | ReLU | AvgPool | Flatten

_LAYER_CODES = {Dense: 1, Conv2D: 2, ReLU: 3, AvgPool: 4, Flatten: 5}


def _out_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, Dense):
        if shape != (layer.in_dim,):
            raise ValueError(f"dense({layer.in_dim}) cannot follow shape {shape}")
        return (layer.out_dim,)
    if isinstance(layer, Conv2D):
        if len(shape) != 3 or shape[0] != layer.in_ch:
            raise ValueError(f"conv2d expects ({layer.in_ch}, h, w), got {shape}")
        h, w = shape[1] - layer.kernel + 1, shape[2] - layer.kernel + 1
        if h < 1 or w < 1:
            raise ValueError("kernel larger than input")
        return (layer.out_ch, h, w)
    if isinstance(layer, AvgPool):
        if len(shape) != 3 or shape[1] % layer.size or shape[2] % layer.size:
            raise ValueError(f"avgpool({layer.size}) cannot tile shape {shape}")
        return (shape[0], shape[1] // layer.size, shape[2] // layer.size)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    return shape  # ReLU


def _param_shapes(layer: LayerSpec) -> list[tuple[int, ...]]:
    if isinstance(layer, Dense):
        return [(layer.in_dim, layer.out_dim), (layer.out_dim,)]
    if isinstance(layer, Conv2D):
        return [(layer.out_ch, layer.in_ch, layer.kernel, layer.kernel), (layer.out_ch,)]
    return []


@dataclass(frozen=True)
class Model:
    """Layer topology plus parameters in declaration order (W, b per layer)."""

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    params: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        shape = self.input_shape
        expected: list[tuple[int, ...]] = []
        for layer in self.layers:
            expected.extend(_param_shapes(layer))
            shape = _out_shape(layer, shape)
        if len(expected) != len(self.params):
            raise ValueError(f"{len(expected)} parameter tensors expected, got {len(self.params)}")
        frozen = []
        for want, p in zip(expected, self.params):
            arr = np.asarray(p, dtype=np.float64)
            if arr.shape != want:
                raise ValueError(f"parameter shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite parameter")
            arr = arr.copy()
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "params", tuple(frozen))
        object.__setattr__(self, "output_shape", shape)

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def flat_params(self) -> np.ndarray:
        """All parameters as one float64 vector, declaration order, row-major."""
        if not self.params:
            return np.zeros(0)
        return np.concatenate([p.ravel() for p in self.params])

    def with_flat_params(self, flat: np.ndarray) -> "Model":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.param_count:
            raise ValueError("flat vector length does not match parameter count")
        out, pos = [], 0
        for p in self.params:
            out.append(flat[pos : pos + p.size].reshape(p.shape))
            pos += p.size
        return replace(self, params=tuple(out))


@dataclass(frozen=True)
class ModelDigest:
    sha256: bytes

    def __post_init__(self) -> None:
        if len(self.sha256) != 32:
            raise ValueError("digest must be 32 bytes")

    @property
    def hex(self) -> str:
        return self.sha256.hex()


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 1
    batch_size: int = 64
    rng_seed: int = 0
    optimizer: str = "sgd"  # "sgd" | "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


# ---------------------------------------------------------------------------
# Forward / backward.
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (B, OH*OW, C*k*k) patch matrix for valid convolution."""
    b, c, h, w = x.shape
    oh, ow = h - k + 1, w - k + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    # (B, C, OH, OW, k, k) -> (B, OH, OW, C, k, k)
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * k * k)


def _col2im(cols: np.ndarray, x_shape: tuple[int, ...], k: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter patch gradients back to the image."""
    b, c, h, w = x_shape
    oh, ow = h - k + 1, w - k + 1
    grads = cols.reshape(b, oh, ow, c, k, k)
    out = np.zeros(x_shape)
    for di in range(k):
        for dj in range(k):
            out[:, :, di : di + oh, dj : dj + ow] += grads[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    return out


def _layer_forward(layer: LayerSpec, x: np.ndarray, params: list[np.ndarray]):
    if isinstance(layer, Dense):
        w, b = params
        return x @ w + b, x
    if isinstance(layer, Conv2D):
        kern, b = params
        cols = _im2col(x, layer.kernel)
        kmat = kern.reshape(layer.out_ch, -1)
        out = cols @ kmat.T + b
        bsz = x.shape[0]
        oh = x.shape[2] - layer.kernel + 1
        ow = x.shape[3] - layer.kernel + 1
        return out.reshape(bsz, oh, ow, layer.out_ch).transpose(0, 3, 1, 2), (x.shape, cols)
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0), x
    if isinstance(layer, AvgPool):
        b, c, h, w = x.shape
        s = layer.size
        return x.reshape(b, c, h // s, s, w // s, s).mean(axis=(3, 5)), x.shape
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1), x.shape
    raise TypeError(f"unknown layer {layer!r}")


def _layer_backward(layer: LayerSpec, grad: np.ndarray, cache, params: list[np.ndarray]):
    if isinstance(layer, Dense):
        w, _ = params
        x = cache
        return grad @ w.T, [x.T @ grad, grad.sum(axis=0)]
    if isinstance(layer, Conv2D):
        kern, _ = params
        x_shape, cols = cache
        bsz = grad.shape[0]
        gmat = grad.transpose(0, 2, 3, 1).reshape(bsz, -1, layer.out_ch)
        kmat = kern.reshape(layer.out_ch, -1)
        dcols = gmat @ kmat
        dk = np.einsum("bpo,bpi->oi", gmat, cols).reshape(kern.shape)
        db = gmat.sum(axis=(0, 1))
        return _col2im(dcols, x_shape, layer.kernel), [dk, db]
    if isinstance(layer, ReLU):
        return grad * (cache > 0), []
    if isinstance(layer, AvgPool):
        b, c, h, w = cache
        s = layer.size
        up = np.repeat(np.repeat(grad, s, axis=2), s, axis=3) / (s * s)
        return up, []
    if isinstance(layer, Flatten):
        return grad.reshape(cache), []
    raise TypeError(f"unknown layer {layer!r}")


def _split_params(model: Model) -> list[list[np.ndarray]]:
    groups, pos = [], 0
    for layer in model.layers:
        n = len(_param_shapes(layer))
        groups.append(list(model.params[pos : pos + n]))
        pos += n
    return groups


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Logits for a batch; classification is the argmax (lowest index wins ties)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != model.input_shape:
        raise ValueError(f"input shape {x.shape[1:]}, model expects {model.input_shape}")
    groups = _split_params(model)
    for layer, params in zip(model.layers, groups):
        x, _ = _layer_forward(layer, x, params)
    return x


def _forward_backward(model: Model, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy loss and parameter gradients for one batch."""
    groups = _split_params(model)
    caches = []
    out = x
    for layer, params in zip(model.layers, groups):
        out, cache = _layer_forward(layer, out, params)
        caches.append(cache)
    shifted = out - out.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    bsz = x.shape[0]
    loss = -np.mean(np.log(probs[np.arange(bsz), labels] + 1e-300))
    grad = probs.copy()
    grad[np.arange(bsz), labels] -= 1.0
    grad /= bsz

    grads: list[np.ndarray] = []
    for layer, params, cache in zip(reversed(model.layers), reversed(groups), reversed(caches)):
        grad, pgrads = _layer_backward(layer, grad, cache, params)
        grads = pgrads + grads
    return loss, grads


def loss_and_grads(model: Model, data: Dataset):
    """Full-batch loss and gradients (finite-difference checks hook in here)."""
    return _forward_backward(model, np.asarray(data.features, dtype=np.float64), data.labels)


def train_local(start: Model, data: Dataset, cfg: TrainConfig) -> Model:
    """Mini-batch gradient descent from ``start``; returns the updated model.

    Batch order is fixed by the config seed, so identical inputs give
    identical models.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.labels.max() >= _class_count(start):
        raise ValueError("label outside the model's class range")
    rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
    params = [p.copy() for p in start.params]
    model = replace(start, params=tuple(params))
    feats = np.asarray(data.features, dtype=np.float64)

    adam_m = [np.zeros_like(p) for p in params]
    adam_v = [np.zeros_like(p) for p in params]
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for lo in range(0, len(data), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            _, grads = _forward_backward(model, feats[idx], data.labels[idx])
            step += 1
            new_params = []
            for j, (p, g) in enumerate(zip(model.params, grads)):
                if cfg.optimizer == "sgd":
                    new_params.append(p - cfg.learning_rate * g)
                else:
                    adam_m[j] = cfg.adam_beta1 * adam_m[j] + (1 - cfg.adam_beta1) * g
                    adam_v[j] = cfg.adam_beta2 * adam_v[j] + (1 - cfg.adam_beta2) * g * g
                    mhat = adam_m[j] / (1 - cfg.adam_beta1**step)
                    vhat = adam_v[j] / (1 - cfg.adam_beta2**step)
                    new_params.append(p - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps))
            model = replace(model, params=tuple(new_params))
    return model


def _class_count(model: Model) -> int:
    return model.output_shape[0]


def evaluate(model: Model, data: Dataset) -> float:
    """Fraction of argmax predictions matching the labels."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    preds = np.argmax(forward(model, data.features), axis=1)
    return float(np.mean(preds == data.labels))


# ---------------------------------------------------------------------------
# Canonical serialization and digests.
# ---------------------------------------------------------------------------


def serialize(model: Model) -> bytes:
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<BB", _VERSION, len(model.input_shape))
    for d in model.input_shape:
        out += struct.pack("<I", d)
    out += struct.pack("<B", len(model.layers))
    for layer in model.layers:
        out += struct.pack("<B", _LAYER_CODES[type(layer)])
        if isinstance(layer, Dense):
            out += struct.pack("<II", layer.in_dim, layer.out_dim)
        elif isinstance(layer, Conv2D):
            out += struct.pack("<III", layer.in_ch, layer.out_ch, layer.kernel)
        elif isinstance(layer, AvgPool):
            out += struct.pack("<I", layer.size)
    for p in model.params:
        out += np.ascontiguousarray(p, dtype="<f8").tobytes()
    return bytes(out)


def deserialize(raw: bytes) -> Model:
    try:
        if raw[:4] != _MAGIC:
            raise MalformedModelError("bad magic")
        version, ndim = struct.unpack_from("<BB", raw, 4)
        if version != _VERSION:
            raise MalformedModelError(f"unsupported version {version}")
        pos = 6
        input_shape = []
        for _ in range(ndim):
            (d,) = struct.unpack_from("<I", raw, pos)
            input_shape.append(d)
            pos += 4
        (n_layers,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        layers: list[LayerSpec] = []
        for _ in range(n_layers):
            (code,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            if code == 1:
                i, o = struct.unpack_from("<II", raw, pos)
                pos += 8
                layers.append(Dense(i, o))
            elif code == 2:
                ic, oc, k = struct.unpack_from("<III", raw, pos)
                pos += 12
                layers.append(Conv2D(ic, oc, k))
            elif code == 3:
                layers.append(ReLU())
            elif code == 4:
                (s,) = struct.unpack_from("<I", raw, pos)
                pos += 4
                layers.append(AvgPool(s))
            elif code == 5:
                layers.append(Flatten())
            else:
                raise MalformedModelError(f"unknown layer code {code}")
        shapes = [s for layer in layers for s in _param_shapes(layer)]
        params = []
        for shape in shapes:
            size = int(np.prod(shape)) * 8
            chunk = raw[pos : pos + size]
            if len(chunk) != size:
                raise MalformedModelError("parameter payload truncated")
            params.append(np.frombuffer(chunk, dtype="<f8").reshape(shape))
            pos += size
        if pos != len(raw):
            raise MalformedModelError(f"{len(raw) - pos} trailing bytes")
        return Model(tuple(input_shape), tuple(layers), tuple(params))
    except struct.error as exc:
        raise MalformedModelError("truncated header") from exc
    except ValueError as exc:
        raise MalformedModelError(str(exc)) from exc


def digest(model: Model) -> ModelDigest:
    return ModelDigest(hashlib.sha256(serialize(model)).digest())


# ---------------------------------------------------------------------------
# Seeded initializers.
# ---------------------------------------------------------------------------


def init_mlp(input_dim: int, hidden: list[int], classes: int, seed: int) -> Model:
    """Glorot-uniform MLP with ReLU between dense layers."""
    rng = np.random.Generator(np.random.PCG64(seed))
    dims = [input_dim] + list(hidden) + [classes]
    layers: list[LayerSpec] = []
    params: list[np.ndarray] = []
    for i in range(len(dims) - 1):
        layers.append(Dense(dims[i], dims[i + 1]))
        limit = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
        params.append(rng.uniform(-limit, limit, size=(dims[i], dims[i + 1])))
        params.append(np.zeros(dims[i + 1]))
        if i < len(dims) - 2:
            layers.append(ReLU())
    return Model((input_dim,), tuple(layers), tuple(params))


def init_cnn(input_shape: tuple[int, int, int], channels: int, kernel: int,
             classes: int, seed: int, pool: int = 2) -> Model:
    """One-convolution CNN: conv -> relu -> avgpool -> flatten -> dense."""
    rng = np.random.Generator(np.random.PCG64(seed))
    c, h, w = input_shape
    layers: list[LayerSpec] = [Conv2D(c, channels, kernel), ReLU(), AvgPool(pool), Flatten()]
    oh, ow = (h - kernel + 1) // pool, (w - kernel + 1) // pool
    flat = channels * oh * ow
    layers.append(Dense(flat, classes))
    fan = c * kernel * kernel
    limit = np.sqrt(6.0 / (fan + channels))
    params = [
        rng.uniform(-limit, limit, size=(channels, c, kernel, kernel)),
        np.zeros(channels),
        rng.uniform(-np.sqrt(6.0 / (flat + classes)), np.sqrt(6.0 / (flat + classes)),
                    size=(flat, classes)),
        np.zeros(classes),
    ]
    return Model(input_shape, tuple(layers), tuple(params))
