"""Autoencoder anomaly scoring and the normal-data threshold rule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .errors import DataError, ModelFormatError, ShapeError
from .nn import Adam, Dense, Network

log = logging.getLogger(__name__)

AE_DIMS = (320, 64, 32, 32, 64, 320)
THRESHOLD_TABLE_VERSION = 1


def build_ae(seed: int, dims: Sequence[int] = AE_DIMS) -> Network:
    """Fully connected autoencoder with ReLU after every layer, output included."""
    rng = np.random.default_rng(seed)
    layers = [Dense.init(rng, n_in, n_out, "relu") for n_in, n_out in zip(dims[:-1], dims[1:])]
    return Network(layers, {"kind": "autoencoder", "dims": list(dims), "init_seed": int(seed)})


def _prepare(net: Network, frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != net.layers[0].weights.shape[1]:
        raise ShapeError(f"expected frames of dim {net.layers[0].weights.shape[1]}, got {frames.shape}")
    norm = net.metadata.get("standardize")
    if norm:
        frames = (frames - norm["mean"]) / norm["std"]
    return frames


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        lines = ["epoch,loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(self.losses)]
        Path(path).write_text("\n".join(lines) + "\n")


def train_ae(net: Network, frames: np.ndarray, epochs: int, seed: int = 0,
             batch_size: int = 512, lr: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8, standardize: bool = False,
             on_epoch: Optional[Callable[[int, float], None]] = None) -> TrainLog:
    """Minimise mean per-frame reconstruction MSE with Adam, in place.

    One epoch is one pass over all frames in a freshly shuffled order.
    With `standardize`, a single global mean and standard deviation of the
    training frames is stored in the model and applied to every input.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or len(frames) == 0:
        raise DataError("empty autoencoder training set")
    if standardize:
        net.metadata["standardize"] = {"mean": float(frames.mean()), "std": float(frames.std()) or 1.0}
    else:
        net.metadata.pop("standardize", None)
    x = _prepare(net, frames)
    rng = np.random.default_rng(seed)
    opt = Adam(lr, beta1, beta2, eps)
    params = net.params
    history = TrainLog()
    n = len(x)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = x[order[start:start + batch_size]]
            loss, grads = net.loss_and_grads(batch, batch, "mse")
            opt.step(params, grads)
            total += loss * len(batch)
        history.losses.append(total / n)
        log.debug("ae epoch %d loss %.6g", epoch + 1, history.losses[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, history.losses[-1])
    net.metadata.update({"epochs": int(epochs), "train_seed": int(seed), "batch_size": int(batch_size),
                         "lr": lr, "n_train_frames": int(n)})
    return history


def frame_errors(net: Network, frames: np.ndarray) -> np.ndarray:
    """Per-frame mean squared reconstruction error."""
    x = _prepare(net, frames)
    diff = net.forward(x) - x
    return np.mean(diff * diff, axis=1)


def clip_score(net: Network, frames: np.ndarray) -> float:
    """Average of the per-frame reconstruction errors of one clip.

    The sum is exactly rounded, so the score does not depend on frame order.
    """
    if len(frames) == 0:
        raise DataError("cannot score a clip with no context frames")
    errors = frame_errors(net, frames)
    return math.fsum(errors) / len(errors)


@dataclass
class ErrorSet:
    """Total reconstruction error per clip."""

    ids: list
    errors: np.ndarray

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=np.float64)
        if len(self.ids) != len(self.errors):
            raise ValueError("one error per clip id required")
        if np.any(self.errors < 0):
            raise ValueError("reconstruction errors must be non-negative")

    def __len__(self):
        return len(self.errors)


@dataclass(frozen=True)
class Threshold:
    tau: float
    alpha: float
    mu_v: float
    sigma_v: float
    mu_t: float


def compute_threshold(train_errors, val_errors) -> Threshold:
    """tau = mean(val) + alpha * std(val), alpha = 1 / (1 + mean(val) / mean(train)).

    Standard deviation is the population one (ddof=0).
    """
    t = np.asarray(getattr(train_errors, "errors", train_errors), dtype=np.float64)
    v = np.asarray(getattr(val_errors, "errors", val_errors), dtype=np.float64)
    if t.size == 0 or v.size == 0:
        raise DataError("threshold needs non-empty training and validation error sets")
    mu_t = float(np.mean(t))
    if mu_t <= 0.0:
        raise DataError("mean training error is zero; alpha is undefined")
    mu_v = float(np.mean(v))
    sigma_v = float(np.std(v))
    alpha = 1.0 / (1.0 + mu_v / mu_t)
    return Threshold(mu_v + alpha * sigma_v, alpha, mu_v, sigma_v, mu_t)


def is_abnormal(score: float, tau: float) -> bool:
    # a score exactly at the threshold counts as normal
    return score > tau


def classify(score: float, tau: float) -> str:
    return "abnormal" if is_abnormal(score, tau) else "normal"


class ThresholdTable(Dict[str, Threshold]):
    """Scene label (e.g. "-6dB") -> threshold, persisted as a small text table."""

    COLUMNS = ("scene", "tau", "alpha", "mu_v", "sigma_v", "mu_t")

    def tau(self, scene: str) -> float:
        try:
            return self[scene].tau
        except KeyError:
            raise DataError(f"no threshold for scene {scene!r}") from None

    def to_text(self) -> str:
        lines = [f"# threshold-table v{THRESHOLD_TABLE_VERSION}", "\t".join(self.COLUMNS)]
        for scene, th in self.items():
            vals = (th.tau, th.alpha, th.mu_v, th.sigma_v, th.mu_t)
            lines.append("\t".join([scene] + [repr(float(x)) for x in vals]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "ThresholdTable":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("# threshold-table v"):
            raise ModelFormatError("not a threshold table")
        version = int(lines[0].rsplit("v", 1)[1])
        if version != THRESHOLD_TABLE_VERSION:
            raise ModelFormatError(f"threshold table version {version} unsupported")
        if tuple(lines[1].split("\t")) != cls.COLUMNS:
            raise ModelFormatError("unexpected threshold table header")
        table = cls()
        for ln in lines[2:]:
            scene, *vals = ln.split("\t")
            tau, alpha, mu_v, sigma_v, mu_t = (float(x) for x in vals)
            if not (tau >= 0 and 0 <= alpha <= 1 and math.isfinite(tau)):
                raise ModelFormatError(f"invalid threshold row for {scene}")
            table[scene] = Threshold(tau, alpha, mu_v, sigma_v, mu_t)
        return table

    @classmethod
    def load(cls, path) -> "ThresholdTable":
        path = Path(path)
        if not path.is_file():
            raise ModelFormatError(f"no threshold table at {path}")
        return cls.from_text(path.read_text())
