"""S-Net: noise-level (scene) classification from raw 250 ms waveform segments."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError
from .nn import Adam, Conv1D, Dense, GlobalAvgPool, Network, softmax

log = logging.getLogger(__name__)


class SceneClass(enum.IntEnum):
    MINUS_6DB = 0
    ZERO_DB = 1
    PLUS_6DB = 2

    @property
    def label(self) -> str:
        return {0: "-6dB", 1: "0dB", 2: "6dB"}[self.value]

    @property
    def snr_db(self) -> int:
        return {0: -6, 1: 0, 2: 6}[self.value]

    @property
    def description(self) -> str:
        return {0: "more noisy", 1: "noisy", 2: "less noisy"}[self.value]

    @classmethod
    def from_snr(cls, snr_db: int) -> "SceneClass":
        for c in cls:
            if c.snr_db == int(snr_db):
                return c
        raise ValueError(f"no scene class for {snr_db} dB")

    @classmethod
    def from_label(cls, label: str) -> "SceneClass":
        for c in cls:
            if c.label == label:
                return c
        raise ValueError(f"unknown scene label {label!r}")


N_CLASSES = len(SceneClass)


def build_snet(seed: int, segment_len: int = 2000, filters: int = 16, kernel_len: int = 64,
               hidden: int = 64) -> Network:
    """Conv1D(16 x 64, relu) -> global average pool -> dense 64 (relu) -> dense 3 logits."""
    rng = np.random.default_rng(seed)
    layers = [
        Conv1D.init(rng, filters, kernel_len, "relu"),
        GlobalAvgPool(),
        Dense.init(rng, filters, hidden, "relu"),
        Dense.init(rng, hidden, N_CLASSES, "identity"),
    ]
    return Network(layers, {
        "kind": "snet",
        "segment_len": int(segment_len),
        "classes": [c.label for c in SceneClass],
        "init_seed": int(seed),
    })


@dataclass
class SNetLog:
    train_loss: list = field(default_factory=list)
    heldout_loss: list = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,heldout_loss,best"]
        for i, (a, b) in enumerate(zip(self.train_loss, self.heldout_loss)):
            lines.append(f"{i + 1},{a!r},{b!r},{int(i + 1 == self.best_epoch)}")
        Path(path).write_text("\n".join(lines) + "\n")


def stratified_holdout(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask selecting round(fraction * n_c) examples (at least one) of every class."""
    mask = np.zeros(len(labels), dtype=bool)
    for c in range(N_CLASSES):
        idx = np.flatnonzero(labels == c)
        k = max(1, int(round(fraction * len(idx))))
        mask[rng.permutation(idx)[:k]] = True
    return mask


def train_snet(net: Network, segments: np.ndarray, labels, epochs: int = 100, seed: int = 0,
               batch_size: int = 64, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, holdout: float = 0.1) -> SNetLog:
    """Cross-entropy training with minimum-held-out-loss checkpointing, in place.

    A stratified `holdout` fraction is set aside; after every epoch its loss
    is measured and the best parameters seen so far are kept. Those are the
    parameters left in `net` on return.
    """
    x = np.asarray(segments, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ShapeError("segments must be (n, segment_len) with one label each")
    counts = np.bincount(y, minlength=N_CLASSES)
    if len(counts) > N_CLASSES or np.any(y < 0):
        raise DataError("scene labels out of range")
    if np.any(counts == 0):
        raise DataError(f"every scene class needs segments, got counts {counts.tolist()}")

    rng = np.random.default_rng(seed)
    held = stratified_holdout(y, holdout, rng)
    x_tr, y_tr, x_ho, y_ho = x[~held], y[~held], x[held], y[held]
    opt = Adam(lr, beta1, beta2, eps)
    params = net.params
    history = SNetLog()
    best_loss = math.inf
    best_params = [p.copy() for p in params]
    for epoch in range(epochs):
        order = rng.permutation(len(x_tr))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = net.loss_and_grads(x_tr[idx], y_tr[idx], "cross_entropy")
            opt.step(params, grads)
            total += loss * len(idx)
        ho_loss = heldout_loss(net, x_ho, y_ho)
        history.train_loss.append(total / len(x_tr))
        history.heldout_loss.append(ho_loss)
        if ho_loss < best_loss:
            best_loss = ho_loss
            history.best_epoch = epoch + 1
            best_params = [p.copy() for p in params]
        log.debug("snet epoch %d train %.5g held-out %.5g", epoch + 1, total / len(x_tr), ho_loss)
    net.set_params(best_params)
    net.metadata.update({"epochs": int(epochs), "best_epoch": history.best_epoch, "train_seed": int(seed),
                         "batch_size": int(batch_size), "lr": lr, "holdout": holdout,
                         "n_train_segments": int(len(x))})
    return history


def heldout_loss(net: Network, x: np.ndarray, y: np.ndarray, chunk: int = 256) -> float:
    total = 0.0
    for start in range(0, len(x), chunk):
        xb, yb = x[start:start + chunk], y[start:start + chunk]
        total += net.loss(xb, yb, "cross_entropy") * len(xb)
    return total / len(x)


def predict_proba(net: Network, segments: np.ndarray, chunk: int = 256) -> np.ndarray:
    segments = np.asarray(segments, dtype=np.float64)
    expected = net.metadata.get("segment_len")
    if segments.ndim != 2 or (expected and segments.shape[1] != expected):
        raise ShapeError(f"expected segments of length {expected}, got shape {segments.shape}")
    out = [softmax(net.forward(segments[s:s + chunk])) for s in range(0, len(segments), chunk)]
    return np.concatenate(out) if out else np.zeros((0, N_CLASSES))


def predict_segment(net: Network, segment) -> np.ndarray:
    return predict_proba(net, np.asarray(segment, dtype=np.float64)[np.newaxis])[0]


def aggregate(probs: np.ndarray) -> SceneClass:
    """Class with the largest summed probability; ties go to the lowest index.

    Sums are exactly rounded (math.fsum) so segment order cannot change them.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or len(probs) == 0:
        raise DataError("scene aggregation needs at least one segment")
    sums = [math.fsum(probs[:, c]) for c in range(probs.shape[1])]
    return SceneClass(int(np.argmax(sums)))


def predict_clip(net: Network, segments: np.ndarray) -> SceneClass:
    if len(segments) == 0:
        raise DataError("clip is shorter than one S-Net segment")
    return aggregate(predict_proba(net, segments))
