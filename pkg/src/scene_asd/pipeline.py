"""The train / threshold / evaluate workflow, one function per CLI command.

Per machine, artifacts live under ``<out>/<machine_type>/<machine_id>/``:
``splits.csv``, ``ae.model``, ``ae_loss.csv``, ``snet.model``,
``snet_loss.csv``, ``thresholds.txt`` and ``errors.csv``. Reports are
written to ``<out>/``.
"""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .anomaly import ThresholdTable, build_ae, clip_score, compute_threshold, train_ae
from .audio_io import load_wav
from .config import RunConfig
from .dataset import (
    DatasetManifest,
    SplitPlan,
    SynthCorpusSpec,
    generate_synthetic_corpus,
    make_splits,
    scan_dataset,
    stable_seed,
)
from .dsp import ae_features, snet_features
from .errors import DataError, MissingArtifactError
from .evaluation import Case, EvaluationReport, ScoredClip, confusion_matrix, run_case, threshold_sweep
from .nn import Network, load_model, save_model
from .scene import SceneClass, build_snet, predict_clip, train_snet

log = logging.getLogger(__name__)

Machine = Tuple[str, str]


def echo_config(cfg: RunConfig, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.toml").write_text(cfg.to_toml())


def machine_dir(cfg: RunConfig, machine: Machine) -> Path:
    return Path(cfg.out) / machine[0] / machine[1]


def load_manifest(cfg: RunConfig) -> DatasetManifest:
    root = Path(cfg.dataset_root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    manifest = scan_dataset(root)
    if not len(manifest):
        raise DataError(f"no clips found under {root}")
    return manifest


def load_plans(cfg: RunConfig) -> Dict[Machine, SplitPlan]:
    manifest = load_manifest(cfg)
    wanted = [m for m in manifest.machines()
              if (not cfg.machine or m[0] == cfg.machine) and (not cfg.machine_id or m[1] == cfg.machine_id)]
    if not wanted:
        raise DataError(f"no machines match machine={cfg.machine!r} id={cfg.machine_id!r}")
    subset = DatasetManifest([e for e in manifest.entries if (e.machine_type, e.machine_id) in wanted])
    return make_splits(subset, val_count=cfg.val_count, seed=cfg.seed, train_count=cfg.train_count)


class Features:
    """Memoised per-clip features for one command invocation."""

    def __init__(self, cfg: RunConfig):
        self.fcfg = cfg.features()
        self._ae: dict = {}
        self._snet: dict = {}

    def ae(self, entry) -> np.ndarray:
        if entry.path not in self._ae:
            self._ae[entry.path] = ae_features(load_wav(entry.path), self.fcfg)
        return self._ae[entry.path]

    def snet(self, entry) -> np.ndarray:
        if entry.path not in self._snet:
            self._snet[entry.path] = snet_features(load_wav(entry.path), self.fcfg)
        return self._snet[entry.path]


def _load_artifact(path: Path, what: str) -> Network:
    if not path.is_file():
        raise MissingArtifactError(f"{what} not found at {path}; run the training command first")
    return load_model(path)


def _load_thresholds(path: Path) -> ThresholdTable:
    if not path.is_file():
        raise MissingArtifactError(f"threshold table not found at {path}; run `threshold` first")
    return ThresholdTable.load(path)


# --- commands -----------------------------------------------------------------------


def run_synth(cfg: RunConfig) -> DatasetManifest:
    spec = SynthCorpusSpec(machines=tuple(cfg.synth_machines), n_normal=cfg.synth_normal,
                           n_abnormal=cfg.synth_abnormal, snrs=tuple(cfg.synth_snrs),
                           duration=cfg.synth_duration, sample_rate=cfg.sample_rate,
                           signal_rms=cfg.synth_rms, encoding=cfg.synth_encoding)
    manifest = generate_synthetic_corpus(spec, cfg.dataset_root, cfg.seed)
    echo_config(cfg, cfg.dataset_root)
    log.info("wrote %d clips under %s", len(manifest), cfg.dataset_root)
    return manifest


def run_train_ae(cfg: RunConfig) -> Dict[Machine, list]:
    plans = load_plans(cfg)
    echo_config(cfg, cfg.out)
    feats = Features(cfg)
    out = {}
    for machine, plan in plans.items():
        mdir = machine_dir(cfg, machine)
        mdir.mkdir(parents=True, exist_ok=True)
        (mdir / "splits.csv").write_text(_splits_csv(plan, Path(cfg.dataset_root)))
        frames = np.concatenate([feats.ae(e) for e in plan.ae_train])
        log.info("%s %s: training autoencoder on %d frames from %d clips", *machine, len(frames),
                 len(plan.ae_train))
        net = build_ae(stable_seed(cfg.seed, *machine, "ae-init"), (cfg.features().input_dim, 64, 32, 32, 64,
                                                                    cfg.features().input_dim))
        history = train_ae(net, frames, cfg.ae_epochs, seed=stable_seed(cfg.seed, *machine, "ae-order"),
                           batch_size=cfg.ae_batch, lr=cfg.ae_lr, beta1=cfg.adam_beta1,
                           beta2=cfg.adam_beta2, eps=cfg.adam_eps, standardize=cfg.standardize)
        net.metadata.update({"machine_type": machine[0], "machine_id": machine[1], "train_snr": "6dB"})
        save_model(net, mdir / "ae.model")
        history.to_csv(mdir / "ae_loss.csv")
        out[machine] = history.losses
    return out


def run_train_snet(cfg: RunConfig) -> Dict[Machine, object]:
    plans = load_plans(cfg)
    echo_config(cfg, cfg.out)
    feats = Features(cfg)
    out = {}
    for machine, plan in plans.items():
        mdir = machine_dir(cfg, machine)
        mdir.mkdir(parents=True, exist_ok=True)
        segments, labels = [], []
        for snr, entries in sorted(plan.train.items()):
            scene = SceneClass.from_snr(snr)
            for e in entries:
                s = feats.snet(e)
                segments.append(s)
                labels.extend([int(scene)] * len(s))
        if not segments:
            raise DataError(f"{machine}: no S-Net training clips")
        x = np.concatenate(segments)
        log.info("%s %s: training S-Net on %d segments", *machine, len(x))
        net = build_snet(stable_seed(cfg.seed, *machine, "snet-init"), cfg.segment_len)
        history = train_snet(net, x, np.array(labels), cfg.snet_epochs,
                             seed=stable_seed(cfg.seed, *machine, "snet-order"), batch_size=cfg.snet_batch,
                             lr=cfg.snet_lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps,
                             holdout=cfg.holdout)
        net.metadata.update({"machine_type": machine[0], "machine_id": machine[1]})
        save_model(net, mdir / "snet.model")
        history.to_csv(mdir / "snet_loss.csv")
        out[machine] = history
    return out


def run_threshold(cfg: RunConfig) -> Dict[Machine, ThresholdTable]:
    plans = load_plans(cfg)
    echo_config(cfg, cfg.out)
    feats = Features(cfg)
    out = {}
    for machine, plan in plans.items():
        mdir = machine_dir(cfg, machine)
        ae = _load_artifact(mdir / "ae.model", "autoencoder")
        table = ThresholdTable()
        err_rows = []
        for scene in SceneClass:
            snr = scene.snr_db
            if snr not in plan.train:
                continue
            train_err = [clip_score(ae, feats.ae(e)) for e in plan.train[snr]]
            val_err = [clip_score(ae, feats.ae(e)) for e in plan.validation[snr]]
            table[scene.label] = compute_threshold(train_err, val_err)
            err_rows += [("train", snr, e.index, v) for e, v in zip(plan.train[snr], train_err)]
            err_rows += [("validation", snr, e.index, v) for e, v in zip(plan.validation[snr], val_err)]
        table.save(mdir / "thresholds.txt")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["role", "snr", "index", "error"])
        w.writerows([(r, s, i, repr(float(v))) for r, s, i, v in err_rows])
        (mdir / "errors.csv").write_text(buf.getvalue())
        out[machine] = table
    return out


def score_clips(cfg: RunConfig, plan: SplitPlan, ae: Network, snet, feats: Features) -> List[ScoredClip]:
    clips = []
    for snr in sorted(plan.evaluation):
        for e in plan.evaluation[snr]:
            if cfg.oracle_scene:
                predicted = e.scene
            else:
                predicted = predict_clip(snet, feats.snet(e))
            clips.append(ScoredClip(e.clip_id, e.scene, e.abnormal, clip_score(ae, feats.ae(e)), predicted))
    return clips


def run_evaluate(cfg: RunConfig) -> EvaluationReport:
    plans = load_plans(cfg)
    echo_config(cfg, cfg.out)
    feats = Features(cfg)
    report = EvaluationReport(settings={
        "cases": list(cfg.cases),
        "fixed_snr": cfg.fixed_snr,
        "oracle_scene": cfg.oracle_scene,
        "sweep_k": [cfg.sweep_k_min, cfg.sweep_k_max],
        "sweep_step": cfg.sweep_step,
        "seed": cfg.seed,
        "epochs": {"ae": cfg.ae_epochs, "snet": cfg.snet_epochs},
        "unstated_defaults": {"ae_lr": cfg.ae_lr, "ae_batch": cfg.ae_batch, "snet_lr": cfg.snet_lr,
                              "snet_batch": cfg.snet_batch, "n_fft": cfg.n_fft, "floor_eps": cfg.floor_eps},
    })
    fixed_scene = SceneClass.from_snr(cfg.fixed_snr)
    step = cfg.sweep_step_value()
    for machine, plan in plans.items():
        mdir = machine_dir(cfg, machine)
        ae = _load_artifact(mdir / "ae.model", "autoencoder")
        snet = None if cfg.oracle_scene else _load_artifact(mdir / "snet.model", "S-Net model")
        table = _load_thresholds(mdir / "thresholds.txt")
        clips = score_clips(cfg, plan, ae, snet, feats)
        for case in cfg.cases:
            report.rows += run_case(Case(case), clips, table, machine[0], machine[1], fixed_scene)
        key = f"{machine[0]}/{machine[1]}"
        report.confusion[key] = confusion_matrix(clips).tolist()
        report.thresholds[key] = {k: vars(v) for k, v in table.items()}
        for scene in SceneClass:
            stratum = [c for c in clips if c.snr == scene]
            if not stratum:
                continue
            rows = threshold_sweep([c.score for c in stratum], [c.abnormal for c in stratum],
                                   table.tau(scene.label), range(cfg.sweep_k_min, cfg.sweep_k_max + 1), step)
            report.sweeps += [{"machine_type": machine[0], "machine_id": machine[1], "snr": scene.label,
                               "k": r.k, "threshold": r.threshold, "tpr": r.tpr, "fpr": r.fpr,
                               "tpr_x_tnr": r.value} for r in rows]
    out = Path(cfg.out)
    (out / "report.csv").write_text(report.rows_csv())
    (out / "report.json").write_text(report.to_json())
    (out / "sweep.csv").write_text(report.sweep_csv())
    (out / "confusion.csv").write_text(report.confusion_csv())
    (out / "reference_auc.csv").write_text(report.reference_csv())
    return report


def _splits_csv(plan: SplitPlan, root: Path) -> str:
    text = plan.to_csv()
    prefix = root.as_posix().rstrip("/") + "/"
    return text.replace(prefix, "")
