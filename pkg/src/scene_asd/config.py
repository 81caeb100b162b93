"""Run configuration: one flat TOML file, overridable field-by-field from the command line.

Fields whose default is a published value are tagged ``paper=True``; the
CLI marks them "(paper)" in ``--help``.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .dsp import FeatureConfig
from .errors import ConfigError

CONFIG_ENV = "SCENE_ASD_CONFIG"


def _f(default, help: str, paper: bool = False):
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata={"help": help, "paper": paper})
    return field(default=default, metadata={"help": help, "paper": paper})


@dataclass
class RunConfig:
    # locations and selection
    dataset_root: str = _f("corpus", "corpus root (<snr>/<type>/<id>/<condition>/<index>.wav)")
    out: str = _f("runs/default", "output directory for models, thresholds and reports")
    machine: str = _f("", "machine type filter (fan, pump, valve, slide_rail); empty = all")
    machine_id: str = _f("", "machine ID filter (e.g. id_00); empty = all")
    seed: int = _f(0, "master seed for splits, initialisation and shuffling")

    # features
    sample_rate: int = _f(16000, "autoencoder feature sample rate, Hz", paper=True)
    n_fft: int = _f(1024, "STFT length")
    hop: int = _f(512, "STFT hop (50% overlap)", paper=True)
    n_mels: int = _f(64, "mel bands", paper=True)
    f_min: float = _f(0.0, "lowest mel edge, Hz")
    f_max: float = _f(8000.0, "highest mel edge, Hz")
    floor_eps: float = _f(1e-10, "floor applied before the log")
    spec_power: float = _f(2.0, "spectrogram exponent (2 = power, 1 = magnitude)")
    context: int = _f(5, "frames per context vector", paper=True)
    stride: int = _f(1, "context window stride", paper=True)
    standardize: bool = _f(False, "global mean/std standardisation of autoencoder inputs")
    snet_rate: int = _f(8000, "S-Net input sample rate, Hz", paper=True)
    segment_ms: int = _f(250, "S-Net segment length, ms", paper=True)

    # splits
    train_count: int = _f(300, "6 dB normal clips (lowest indices) used for training", paper=True)
    val_count: int = _f(300, "normal validation clips per SNR", paper=True)

    # training
    ae_epochs: int = _f(5000, "autoencoder epochs", paper=True)
    ae_batch: int = _f(512, "autoencoder mini-batch size (assumed; no published value)")
    ae_lr: float = _f(1e-3, "autoencoder Adam learning rate (assumed; no published value)")
    snet_epochs: int = _f(100, "S-Net epochs", paper=True)
    snet_batch: int = _f(64, "S-Net mini-batch size (assumed; no published value)")
    snet_lr: float = _f(1e-3, "S-Net Adam learning rate (assumed; no published value)")
    holdout: float = _f(0.1, "S-Net early-stopping hold-out fraction", paper=True)
    adam_beta1: float = _f(0.9, "Adam beta1")
    adam_beta2: float = _f(0.999, "Adam beta2")
    adam_eps: float = _f(1e-8, "Adam epsilon")

    # evaluation
    cases: List[str] = _f(["baseline", "scene_aware", "fixed"], "evaluation cases to report")
    fixed_snr: int = _f(6, "SNR whose threshold the fixed case applies everywhere", paper=True)
    sweep_k_min: int = _f(-10, "lowest k of the threshold sweep")
    sweep_k_max: int = _f(10, "highest k of the threshold sweep")
    sweep_step: str = _f("auto", "sweep step: 'auto' = (max - min score) / 50, or a number")
    oracle_scene: bool = _f(False, "debug: use the true SNR instead of S-Net predictions")

    # synthetic corpus
    synth_machines: List[str] = _f(["fan:id_00"], "machines to synthesise as type:id")
    synth_normal: int = _f(100, "normal clips per machine and SNR")
    synth_abnormal: int = _f(20, "abnormal clips per machine and SNR")
    synth_snrs: List[int] = _f([-6, 0, 6], "SNR strata to synthesise", paper=True)
    synth_duration: float = _f(10.0, "clip length, s", paper=True)
    synth_rms: float = _f(0.04, "RMS of the clean machine signal")
    synth_encoding: str = _f("pcm16", "WAV encoding: pcm16 or float32")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            expected = f.type
            if expected == "int" and (not isinstance(value, int) or isinstance(value, bool)):
                raise ConfigError(f"{f.name} must be an integer, got {value!r}")
            if expected == "float" and (not isinstance(value, (int, float)) or isinstance(value, bool)):
                raise ConfigError(f"{f.name} must be a number, got {value!r}")
            if expected == "bool" and not isinstance(value, bool):
                raise ConfigError(f"{f.name} must be true or false, got {value!r}")
            if expected == "str" and not isinstance(value, str):
                raise ConfigError(f"{f.name} must be a string, got {value!r}")
            if expected.startswith("List") and not isinstance(value, list):
                raise ConfigError(f"{f.name} must be a list, got {value!r}")
        for name in ("sample_rate", "n_fft", "hop", "n_mels", "context", "stride", "snet_rate",
                     "segment_ms", "train_count", "val_count", "ae_batch", "snet_batch",
                     "synth_normal"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.ae_epochs < 0 or self.snet_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if not 0 < self.holdout < 1:
            raise ConfigError("holdout must lie in (0, 1)")
        bad = [c for c in self.cases if c not in ("baseline", "scene_aware", "fixed")]
        if bad:
            raise ConfigError(f"unknown evaluation cases {bad}")
        if self.fixed_snr not in (-6, 0, 6):
            raise ConfigError("fixed_snr must be -6, 0 or 6")
        if self.sweep_k_min > self.sweep_k_max:
            raise ConfigError("sweep_k_min exceeds sweep_k_max")
        self.sweep_step_value()

    def sweep_step_value(self):
        if self.sweep_step == "auto":
            return None
        try:
            step = float(self.sweep_step)
        except ValueError:
            raise ConfigError(f"sweep_step must be 'auto' or a number, got {self.sweep_step!r}") from None
        if step <= 0:
            raise ConfigError("sweep_step must be positive")
        return step

    @property
    def segment_len(self) -> int:
        return self.snet_rate * self.segment_ms // 1000

    def features(self) -> FeatureConfig:
        return FeatureConfig(sample_rate=self.sample_rate, n_fft=self.n_fft, hop=self.hop,
                             n_mels=self.n_mels, f_min=self.f_min, f_max=self.f_max,
                             floor_eps=self.floor_eps, power=self.spec_power, context=self.context,
                             stride=self.stride, snet_rate=self.snet_rate, segment_len=self.segment_len)

    def to_toml(self) -> str:
        return tomli_w.dumps(dataclasses.asdict(self))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the TOML file (argument or $SCENE_ASD_CONFIG), then `overrides`.

    Tables in the file are flattened, so ``[train]`` / ``ae_epochs = 200`` and a
    top-level ``ae_epochs = 200`` mean the same thing.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    values = {}
    if path is not None:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for key, value in raw.items():
            if isinstance(value, dict):
                values.update(value)
            else:
                values[key] = value
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**values)
