"""Unsupervised machine-sound anomaly detection with scene-aware (noise-level) thresholds."""

from .anomaly import ThresholdTable, build_ae, classify, clip_score, compute_threshold, train_ae
from .audio_io import AudioClip, load_wav, mix_at_snr, resample, synth_clip, to_mono, write_wav
from .dsp import FeatureConfig, ae_features, snet_features
from .scene import SceneClass, build_snet, predict_clip, train_snet

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "FeatureConfig", "SceneClass", "ThresholdTable",
    "ae_features", "build_ae", "build_snet", "classify", "clip_score", "compute_threshold",
    "load_wav", "mix_at_snr", "predict_clip", "resample", "snet_features", "synth_clip",
    "to_mono", "train_ae", "train_snet", "write_wav",
]
