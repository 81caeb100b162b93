"""Minimal float64 neural-network kernel for the two fixed architectures.

Layers operate on mini-batches along axis 0. Each layer's ``forward``
returns the output together with a cache that ``backward`` consumes, so a
frozen network carries no hidden state between calls.

Model file layout (all integers little-endian)::

    magic      8 bytes  b"ASDNET\\x00\\x1a"
    version    u32
    meta_len   u32, followed by meta_len bytes of UTF-8 JSON metadata
    n_layers   u32
    per layer  u8 type tag (1 dense, 2 conv1d, 3 global-avg-pool),
               u8 activation (0 identity, 1 relu), u32 dim0, u32 dim1
    payload    float64 parameters, layer by layer, weights then bias
    crc32      u32 over every preceding byte
"""

from __future__ import annotations

import copy
import json
import struct
import zlib
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ChecksumError, ModelFormatError, ModelVersionError, ShapeError

ACTIVATIONS = ("identity", "relu")


def _activate(z: np.ndarray, activation: str):
    if activation == "relu":
        mask = z > 0
        return z * mask, mask
    return z, None


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    tag = 1

    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation: str = "relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"inconsistent dense shapes {self.weights.shape}, {self.bias.shape}")
        self.activation = activation

    @classmethod
    def init(cls, rng, n_in: int, n_out: int, activation: str = "relu") -> "Dense":
        w = glorot_uniform(rng, (n_out, n_in), n_in, n_out)
        return cls(w, np.zeros(n_out), activation)

    @property
    def params(self):
        return [self.weights, self.bias]

    @property
    def dims(self):
        return self.weights.shape

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.weights.shape[1]:
            raise ShapeError(f"dense layer expects {self.weights.shape[1]} inputs, got {x.shape[-1]}")
        y, mask = _activate(x @ self.weights.T + self.bias, self.activation)
        return y, (x, mask)

    def backward(self, cache, dy: np.ndarray, need_dx: bool = True):
        x, mask = cache
        dz = dy * mask if mask is not None else dy
        grads = [dz.T @ x, dz.sum(axis=0)]
        return (dz @ self.weights if need_dx else None), grads


class Conv1D:
    """Single-input-channel valid convolution (cross-correlation), stride 1.

    Input (batch, length), output (batch, filters, length - L + 1).
    """

    tag = 2

    def __init__(self, kernel: np.ndarray, bias: np.ndarray, activation: str = "relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim == 2:
            kernel = kernel[:, np.newaxis, :]
        self.kernel = kernel
        self.bias = np.asarray(bias, dtype=np.float64)
        if kernel.ndim != 3 or kernel.shape[1] != 1 or kernel.shape[2] < 1:
            raise ShapeError(f"kernel must be (filters, 1, length), got {kernel.shape}")
        if self.bias.shape != (kernel.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {kernel.shape[0]} filters")
        self.activation = activation

    @classmethod
    def init(cls, rng, filters: int, length: int, activation: str = "relu") -> "Conv1D":
        k = glorot_uniform(rng, (filters, 1, length), length, filters * length)
        return cls(k, np.zeros(filters), activation)

    @property
    def params(self):
        return [self.kernel, self.bias]

    @property
    def dims(self):
        return self.kernel.shape[0], self.kernel.shape[2]

    def forward(self, x: np.ndarray):
        filters, length = self.dims
        if x.shape[-1] < length:
            raise ShapeError(f"input length {x.shape[-1]} shorter than kernel length {length}")
        batch = x.shape[0]
        windows = sliding_window_view(x, length, axis=1).reshape(-1, length)
        z = (windows @ self.kernel[:, 0, :].T + self.bias).reshape(batch, -1, filters)
        y, mask = _activate(z, self.activation)
        return y.transpose(0, 2, 1), (windows, mask, x.shape)

    def backward(self, cache, dy: np.ndarray, need_dx: bool = True):
        windows, mask, x_shape = cache
        filters, length = self.dims
        dz = dy.transpose(0, 2, 1)
        if mask is not None:
            dz = dz * mask
        dz2 = dz.reshape(-1, filters)
        grads = [(dz2.T @ windows)[:, np.newaxis, :], dz2.sum(axis=0)]
        if not need_dx:
            return None, grads
        g = dz @ self.kernel[:, 0, :]                      # (batch, T', L)
        dx = np.zeros(x_shape)
        n_out = g.shape[1]
        for j in range(length):
            dx[:, j:j + n_out] += g[:, :, j]
        return dx, grads


class GlobalAvgPool:
    """Mean over the last (time) axis."""

    tag = 3
    activation = "identity"
    params: list = []
    dims = (0, 0)

    def forward(self, x: np.ndarray):
        if x.shape[-1] < 1:
            raise ShapeError("global average pool over an empty time axis")
        return x.mean(axis=-1), x.shape

    def backward(self, cache, dy: np.ndarray, need_dx: bool = True):
        shape = cache
        return np.broadcast_to(dy[..., np.newaxis] / shape[-1], shape), []


# --- losses ---------------------------------------------------------------------


def mse(x, xp) -> float:
    """Mean squared difference of two equal-length vectors."""
    x, xp = np.asarray(x, dtype=np.float64), np.asarray(xp, dtype=np.float64)
    if x.shape != xp.shape or x.size == 0:
        raise ShapeError(f"mse needs equal non-empty shapes, got {x.shape} and {xp.shape}")
    return float(np.mean(np.square(x - xp)))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label: int):
    """Loss and logit-gradient for one example."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < len(logits):
        raise ValueError(f"label {label} out of range for {len(logits)} classes")
    z = logits - logits.max()
    log_p = z - np.log(np.exp(z).sum())
    grad = np.exp(log_p)
    grad[label] -= 1.0
    return float(-log_p[label]), grad


def _batch_loss(output: np.ndarray, target: np.ndarray, loss: str):
    batch = output.shape[0]
    if loss == "mse":
        if output.shape != target.shape:
            raise ShapeError(f"target shape {target.shape} != output shape {output.shape}")
        diff = output - target
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    if loss == "cross_entropy":
        labels = np.asarray(target, dtype=np.int64)
        if labels.shape != (batch,) or labels.min() < 0 or labels.max() >= output.shape[1]:
            raise ShapeError("cross-entropy targets must be one class index per example")
        z = output - output.max(axis=1, keepdims=True)
        log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        rows = np.arange(batch)
        grad = np.exp(log_p)
        grad[rows, labels] -= 1.0
        return float(-log_p[rows, labels].mean()), grad / batch
    raise ValueError(f"unknown loss {loss!r}")


# --- network ---------------------------------------------------------------------


class Network:
    """Ordered layer stack plus free-form JSON metadata."""

    def __init__(self, layers, metadata: dict | None = None):
        self.layers = list(layers)
        self.metadata = dict(metadata or {})

    @property
    def params(self) -> list:
        return [p for layer in self.layers for p in layer.params]

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x, _ = layer.forward(x)
        return x

    def loss_and_grads(self, x: np.ndarray, target: np.ndarray, loss: str):
        """Mean mini-batch loss and its exact gradient for every parameter."""
        caches = []
        h = x
        for layer in self.layers:
            h, cache = layer.forward(h)
            caches.append(cache)
        value, dh = _batch_loss(h, target, loss)
        grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            dh, g = self.layers[i].backward(caches[i], dh, need_dx=i > 0)
            grads[:0] = g
        return value, grads

    def loss(self, x: np.ndarray, target: np.ndarray, loss: str) -> float:
        return _batch_loss(self.forward(x), target, loss)[0]

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def set_params(self, values) -> None:
        for p, v in zip(self.params, values):
            p[...] = v


def backward(net: Network, x, target, loss: str):
    """Gradients of the mean loss w.r.t. every parameter of `net`, in `net.params` order."""
    return net.loss_and_grads(np.asarray(x, dtype=np.float64), target, loss)[1]


def dense_forward(layer: Dense, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return layer.forward(x[np.newaxis])[0][0]


def conv1d_forward(layer: Conv1D, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return layer.forward(x[np.newaxis])[0][0]


def global_avg_pool(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return GlobalAvgPool().forward(m[np.newaxis])[0][0]


def param_count(net: Network) -> int:
    return net.param_count()


# --- optimiser ---------------------------------------------------------------------


class Adam:
    """Bias-corrected Adam; moments are allocated lazily on the first step."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list | None = None
        self.v: list | None = None

    def step(self, params, grads) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise ShapeError("gradient shapes do not match parameter shapes")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# --- serialisation -----------------------------------------------------------------

MAGIC = b"ASDNET\x00\x1a"
FORMAT_VERSION = 1
_ACT_CODES = {"identity": 0, "relu": 1}


def _layer_from_descriptor(tag, act, d0, d1, payload, offset):
    activation = ACTIVATIONS[act]

    def take(n):
        nonlocal offset
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).astype(np.float64)
        offset += 8 * n
        return arr

    if tag == Dense.tag:
        w = take(d0 * d1).reshape(d0, d1)
        return Dense(w, take(d0), activation), offset
    if tag == Conv1D.tag:
        k = take(d0 * d1).reshape(d0, 1, d1)
        return Conv1D(k, take(d0), activation), offset
    if tag == GlobalAvgPool.tag:
        return GlobalAvgPool(), offset
    raise ModelFormatError(f"unknown layer type tag {tag}")


def model_bytes(net: Network) -> bytes:
    meta = json.dumps(net.metadata, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta,
             struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        d0, d1 = layer.dims
        parts.append(struct.pack("<BBII", layer.tag, _ACT_CODES[layer.activation], d0, d1))
    for p in net.params:
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_model(net: Network, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(model_bytes(net))


def model_from_bytes(data: bytes) -> Network:
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic or too short)")
    version, meta_len = struct.unpack_from("<II", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"model format version {version}, this reader supports {FORMAT_VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("model checksum mismatch (corrupt or truncated file)")
    pos = len(MAGIC) + 8
    try:
        metadata = json.loads(body[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (n_layers,) = struct.unpack_from("<I", body, pos)
        pos += 4
        descriptors = []
        for _ in range(n_layers):
            descriptors.append(struct.unpack_from("<BBII", body, pos))
            pos += 10
        layers = []
        for tag, act, d0, d1 in descriptors:
            layer, pos = _layer_from_descriptor(tag, act, d0, d1, body, pos)
            layers.append(layer)
    except (struct.error, ValueError, IndexError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    if pos != len(body):
        raise ModelFormatError(f"{len(body) - pos} unexpected trailing bytes in model file")
    return Network(layers, metadata)


def load_model(path) -> Network:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"no model file at {path}")
    return model_from_bytes(path.read_bytes())
