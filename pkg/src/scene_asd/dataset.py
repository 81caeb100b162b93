"""Corpus manifests, train / validation / evaluation splits and a synthetic stand-in corpus.

Directory layout (MIMII-compatible)::

    <root>/<snr>/<machine_type>/<id>/<normal|abnormal>/<index>.wav

``<snr>`` is ``6dB``, ``0dB`` or ``-6dB``; MIMII-style names such as
``-6_dB_fan`` are accepted too. ``slider`` is read as ``slide_rail``.
"""

from __future__ import annotations

import csv
import io
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .audio_io import AudioClip, SynthSpec, mix_at_snr, pink_noise, synth_clip, write_wav
from .errors import DataError
from .scene import SceneClass

MACHINE_TYPES = ("fan", "pump", "valve", "slide_rail")
_TYPE_ALIASES = {"slider": "slide_rail", "slide-rail": "slide_rail", "slide_rail": "slide_rail"}
CONDITIONS = ("normal", "abnormal")
SNR_LEVELS = (-6, 0, 6)
TRAIN_SNR = 6
_SNR_DIR = re.compile(r"^(-?\d+)_?dB(?:_[A-Za-z_]+)?$")
_ID_DIR = re.compile(r"^id_?(\d+)$")

# validation clips for these slide-rail IDs are capped at 100
SMALL_VAL_IDS = {("slide_rail", "id_04"), ("slide_rail", "id_06")}
SMALL_VAL_COUNT = 100


class LayoutError(DataError):
    pass


def stable_seed(*parts) -> int:
    """Order-sensitive 63-bit seed from ints and strings; stable across processes."""
    keys = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence([k & 0xFFFFFFFF for k in keys]).generate_state(2, np.uint64)[0] >> 1)


def machine_type_name(name: str) -> str:
    name = _TYPE_ALIASES.get(name, name)
    if name not in MACHINE_TYPES:
        raise LayoutError(f"unknown machine type {name!r}")
    return name


def parse_snr_dir(name: str) -> int:
    m = _SNR_DIR.match(name)
    if not m or int(m.group(1)) not in SNR_LEVELS:
        raise LayoutError(f"unrecognised SNR directory {name!r}")
    return int(m.group(1))


def snr_dir_name(snr_db: int) -> str:
    return f"{snr_db}dB"


def machine_id_name(name: str) -> str:
    m = _ID_DIR.match(name)
    if not m:
        raise LayoutError(f"unrecognised machine ID directory {name!r}")
    return f"id_{int(m.group(1)):02d}"


@dataclass(frozen=True, order=True)
class ClipEntry:
    machine_type: str
    machine_id: str
    snr: int
    condition: str
    index: int
    path: Path = field(compare=False)

    @property
    def scene(self) -> SceneClass:
        return SceneClass.from_snr(self.snr)

    @property
    def abnormal(self) -> bool:
        return self.condition == "abnormal"

    @property
    def clip_id(self) -> str:
        return f"{self.machine_type}/{self.machine_id}/{snr_dir_name(self.snr)}/{self.condition}/{self.index}"


@dataclass
class DatasetManifest:
    entries: List[ClipEntry]

    def __len__(self):
        return len(self.entries)

    def machines(self) -> List[Tuple[str, str]]:
        return sorted({(e.machine_type, e.machine_id) for e in self.entries})

    def select(self, machine_type=None, machine_id=None, snr=None, condition=None) -> List[ClipEntry]:
        return [e for e in self.entries
                if (machine_type is None or e.machine_type == machine_type)
                and (machine_id is None or e.machine_id == machine_id)
                and (snr is None or e.snr == snr)
                and (condition is None or e.condition == condition)]

    def to_csv(self, root=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["machine_type", "machine_id", "snr", "condition", "index", "path"])
        for e in self.entries:
            p = e.path.relative_to(root) if root is not None else e.path
            w.writerow([e.machine_type, e.machine_id, e.snr, e.condition, e.index, p.as_posix()])
        return buf.getvalue()


def scan_dataset(root) -> DatasetManifest:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    entries = []
    seen = set()
    for snr_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        snr = parse_snr_dir(snr_dir.name)
        for type_dir in sorted(p for p in snr_dir.iterdir() if p.is_dir()):
            mtype = machine_type_name(type_dir.name)
            for id_dir in sorted(p for p in type_dir.iterdir() if p.is_dir()):
                mid = machine_id_name(id_dir.name)
                for cond_dir in sorted(p for p in id_dir.iterdir() if p.is_dir()):
                    if cond_dir.name not in CONDITIONS:
                        raise LayoutError(f"unexpected condition directory {cond_dir}")
                    for wav in sorted(cond_dir.glob("*.wav")):
                        try:
                            index = int(wav.stem)
                        except ValueError:
                            raise LayoutError(f"clip file name is not an integer index: {wav}") from None
                        key = (mtype, mid, snr, cond_dir.name, index)
                        if key in seen:
                            raise LayoutError(f"duplicate clip index {key}")
                        seen.add(key)
                        entries.append(ClipEntry(mtype, mid, snr, cond_dir.name, index, wav))
    entries.sort()
    return DatasetManifest(entries)


# --- splits ------------------------------------------------------------------------


@dataclass
class SplitPlan:
    """Roles of every clip of one (machine type, ID).

    ``train_indices`` are the lowest clip indices of the 6 dB normal set;
    ``train`` maps each SNR to the normal clips with those indices (the 6 dB
    ones train the autoencoder, all three train S-Net and give the per-SNR
    training error set).
    """

    machine_type: str
    machine_id: str
    seed: int
    train_indices: Tuple[int, ...]
    train: Dict[int, List[ClipEntry]]
    validation: Dict[int, List[ClipEntry]]
    evaluation: Dict[int, List[ClipEntry]]

    @property
    def ae_train(self) -> List[ClipEntry]:
        return self.train[TRAIN_SNR]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["role", "snr", "condition", "index", "path"])
        for role, groups in (("train", self.train), ("validation", self.validation),
                             ("evaluation", self.evaluation)):
            for snr in sorted(groups):
                for e in groups[snr]:
                    w.writerow([role, snr, e.condition, e.index, e.path.as_posix()])
        return buf.getvalue()


def make_splits(manifest: DatasetManifest, val_count: int = 300, seed: int = 0,
                train_count: int = 300) -> Dict[Tuple[str, str], SplitPlan]:
    plans = {}
    for mtype, mid in manifest.machines():
        normal6 = manifest.select(mtype, mid, TRAIN_SNR, "normal")
        if len(normal6) < train_count:
            raise DataError(f"{mtype} {mid}: {len(normal6)} normal {TRAIN_SNR} dB clips, "
                            f"{train_count} needed for training")
        train_idx = tuple(sorted(e.index for e in normal6)[:train_count])
        train_set = set(train_idx)
        n_val = min(val_count, SMALL_VAL_COUNT) if (mtype, mid) in SMALL_VAL_IDS else val_count
        train, val, ev = {}, {}, {}
        for snr in sorted({e.snr for e in manifest.select(mtype, mid)}):
            normal = manifest.select(mtype, mid, snr, "normal")
            train[snr] = [e for e in normal if e.index in train_set]
            rest = [e for e in normal if e.index not in train_set]
            if len(rest) < n_val:
                raise DataError(f"{mtype} {mid} {snr} dB: {len(rest)} normal clips left, "
                                f"{n_val} needed for validation")
            rng = np.random.default_rng(stable_seed(seed, mtype, mid, snr))
            picked = set(rng.choice(len(rest), size=n_val, replace=False).tolist())
            val[snr] = [e for i, e in enumerate(rest) if i in picked]
            ev[snr] = [e for i, e in enumerate(rest) if i not in picked] + \
                manifest.select(mtype, mid, snr, "abnormal")
        plans[(mtype, mid)] = SplitPlan(mtype, mid, seed, train_idx, train, val, ev)
    return plans


# --- synthetic corpus ---------------------------------------------------------------

ARCHETYPE_SPECS = {
    "fan": dict(archetype="hum", fundamental=170.0, harmonics=(1.0, 0.6, 0.4, 0.25, 0.15)),
    "pump": dict(archetype="am", fundamental=110.0, harmonics=(1.0, 0.7, 0.5, 0.3)),
    "valve": dict(archetype="impulse", fundamental=600.0, harmonics=(1.0, 0.5, 0.3)),
    "slide_rail": dict(archetype="chirp", fundamental=300.0, harmonics=(1.0, 0.5, 0.25)),
}


@dataclass(frozen=True)
class SynthCorpusSpec:
    """Synthetic corpus recipe. Machines are "type:id" strings, e.g. "fan:id_00"."""

    machines: Sequence[str] = ("fan:id_00",)
    n_normal: int = 100
    n_abnormal: int = 20
    snrs: Sequence[int] = SNR_LEVELS
    duration: float = 10.0
    sample_rate: int = 16000
    signal_rms: float = 0.04
    f0_jitter: float = 0.02
    load_level: float = 0.1
    load_sigma: float = 2.0
    anomaly_gain: float = 1.0
    encoding: str = "pcm16"

    def __post_init__(self):
        if self.n_normal < 1 or self.n_abnormal < 0:
            raise ValueError("clip counts must be positive")
        if any(s not in SNR_LEVELS for s in self.snrs) or not self.snrs:
            raise ValueError(f"SNR levels must be a subset of {SNR_LEVELS}")
        for m in self.machines:
            parse_machine(m)

    def clip_spec(self, mtype: str, mid: str, abnormal: bool, index: int) -> SynthSpec:
        params = dict(ARCHETYPE_SPECS[mtype])
        # distinct IDs of one type get distinct fundamentals
        params["fundamental"] *= 1.0 + 0.12 * int(mid.split("_")[1]) / 2
        anomaly = None
        if abnormal:
            anomaly = "detune" if index % 2 == 0 else "bursts"
        return SynthSpec(duration=self.duration, sample_rate=self.sample_rate, rms=self.signal_rms,
                         f0_jitter=self.f0_jitter, load_level=self.load_level,
                         load_sigma=self.load_sigma, anomaly=anomaly, anomaly_gain=self.anomaly_gain,
                         **params)


def parse_machine(text: str) -> Tuple[str, str]:
    try:
        mtype, mid = text.split(":")
    except ValueError:
        raise ValueError(f"machine must look like 'fan:id_00', got {text!r}") from None
    return machine_type_name(mtype), machine_id_name(mid)


def synth_components(spec: SynthCorpusSpec, mtype: str, mid: str, condition: str, index: int,
                     seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Clean machine signal and unit-RMS noise for one synthetic clip (before mixing)."""
    abnormal = condition == "abnormal"
    clip_seed = stable_seed(seed, mtype, mid, condition, index)
    signal = synth_clip(spec.clip_spec(mtype, mid, abnormal, index), clip_seed).mono
    noise_rng = np.random.default_rng(stable_seed(seed, mtype, mid, condition, index, "noise"))
    noise = pink_noise(len(signal), spec.sample_rate, noise_rng)
    return signal, noise


def generate_synthetic_corpus(spec: SynthCorpusSpec, root, seed: int) -> DatasetManifest:
    """Write the WAV tree for `spec` under `root` and return its manifest.

    Each clip's clean signal and noise are fixed per (machine, condition,
    index); only the noise gain changes between SNR strata.
    """
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create corpus directory {root}: {exc}") from exc
    entries = []
    for machine in spec.machines:
        mtype, mid = parse_machine(machine)
        for condition, count in (("normal", spec.n_normal), ("abnormal", spec.n_abnormal)):
            for index in range(count):
                signal, noise = synth_components(spec, mtype, mid, condition, index, seed)
                for snr in spec.snrs:
                    mix = mix_at_snr(AudioClip(spec.sample_rate, signal),
                                     AudioClip(spec.sample_rate, noise), snr).mono
                    if spec.encoding == "pcm16" and np.max(np.abs(mix)) >= 1.0:
                        raise DataError(f"clip {machine}/{condition}/{index} at {snr} dB would clip")
                    path = root / snr_dir_name(snr) / mtype / mid / condition / f"{index:08d}.wav"
                    try:
                        write_wav(path, AudioClip(spec.sample_rate, mix), spec.encoding)
                    except OSError as exc:
                        raise DataError(f"cannot write {path}: {exc}") from exc
                    entries.append(ClipEntry(mtype, mid, snr, condition, index, path))
    entries.sort()
    manifest = DatasetManifest(entries)
    (root / "manifest.csv").write_text(manifest.to_csv(root))
    return manifest
