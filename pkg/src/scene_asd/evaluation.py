"""AUC / TPR / FPR, the threshold sweep and the baseline / scene-aware / fixed comparison.

"Positive" always means abnormal.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .anomaly import ThresholdTable, is_abnormal
from .errors import DataError
from .scene import SceneClass

# AUC averaged over machine IDs, by machine type and SNR (6 dB, 0 dB, -6 dB)
REFERENCE_AUC = {
    "fan": {"6dB": 0.92, "0dB": 0.83, "-6dB": 0.65},
    "pump": {"6dB": 0.86, "0dB": 0.82, "-6dB": 0.73},
    "valve": {"6dB": 0.75, "0dB": 0.68, "-6dB": 0.53},
    "slide_rail": {"6dB": 0.93, "0dB": 0.89, "-6dB": 0.74},
}


def _split(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("one label per score required")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if labels.all() or not labels.any():
        raise DataError("need at least one normal and one abnormal score")
    return scores, labels


def auc(scores, labels) -> float:
    """ROC area as the Mann-Whitney statistic; tied pairs count one half."""
    scores, labels = _split(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def tpr_fpr(scores, labels, tau: float):
    scores, labels = _split(scores, labels)
    flagged = scores > tau
    return float(flagged[labels].mean()), float(flagged[~labels].mean())


@dataclass(frozen=True)
class SweepRow:
    k: int
    threshold: float
    tpr: float
    fpr: float

    @property
    def value(self) -> float:
        return self.tpr * (1.0 - self.fpr)


def auto_sweep_step(scores, divisions: int = 50) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    span = float(scores.max() - scores.min())
    return span / divisions if span > 0 else 1.0


def threshold_sweep(scores, labels, tau: float, k_values: Iterable[int] = range(-50, 51),
                    step: Optional[float] = None) -> List[SweepRow]:
    """TPR x (1 - FPR) at thresholds tau + k * step.

    `step=None` uses (max - min) / 50 of the given scores.
    """
    scores, labels = _split(scores, labels)
    if step is None:
        step = auto_sweep_step(scores)
    rows = []
    for k in k_values:
        th = tau + k * step
        tpr, fpr = tpr_fpr(scores, labels, th)
        rows.append(SweepRow(int(k), th, tpr, fpr))
    return rows


class Case(str, enum.Enum):
    BASELINE = "baseline"
    SCENE_AWARE = "scene_aware"
    FIXED = "fixed"


@dataclass(frozen=True)
class ScoredClip:
    clip_id: str
    snr: SceneClass
    abnormal: bool
    score: float
    predicted: SceneClass


def select_tau(case: Case, clip: ScoredClip, table: ThresholdTable,
               fixed_scene: SceneClass = SceneClass.PLUS_6DB) -> float:
    if case is Case.BASELINE:
        return table.tau(clip.snr.label)
    if case is Case.SCENE_AWARE:
        return table.tau(clip.predicted.label)
    if case is Case.FIXED:
        return table.tau(fixed_scene.label)
    raise ValueError(f"unknown case {case!r}")


@dataclass
class ReportRow:
    machine_type: str
    machine_id: str
    snr: str
    case: str
    auc: float
    tpr: float
    fpr: float
    tau: float
    n_normal: int
    n_abnormal: int
    true_positives: int
    false_positives: int
    scene_accuracy: float

    @property
    def tpr_x_tnr(self) -> float:
        return self.tpr * (1.0 - self.fpr)


REPORT_COLUMNS = [f for f in ReportRow.__dataclass_fields__] + ["tpr_x_tnr"]


def run_case(case, clips: Sequence[ScoredClip], table: ThresholdTable, machine_type: str = "",
             machine_id: str = "", fixed_scene: SceneClass = SceneClass.PLUS_6DB) -> List[ReportRow]:
    """Decide every clip with the case's threshold rule; one row per true-SNR stratum.

    The `tau` column is the mean of the thresholds applied in the stratum
    (a single value except for scene_aware with misclassified scenes).
    """
    case = Case(case)
    if not clips:
        raise DataError("empty evaluation set")
    for scene in SceneClass:
        table.tau(scene.label)
    rows = []
    for scene in SceneClass:
        stratum = [c for c in clips if c.snr == scene]
        if not stratum:
            continue
        scores = np.array([c.score for c in stratum])
        labels = np.array([c.abnormal for c in stratum])
        taus = np.array([select_tau(case, c, table, fixed_scene) for c in stratum])
        flagged = np.array([is_abnormal(s, t) for s, t in zip(scores, taus)])
        n_abn = int(labels.sum())
        n_norm = len(labels) - n_abn
        if n_abn == 0 or n_norm == 0:
            raise DataError(f"{machine_type} {machine_id} {scene.label}: need normal and abnormal clips")
        tp = int((flagged & labels).sum())
        fp = int((flagged & ~labels).sum())
        rows.append(ReportRow(
            machine_type, machine_id, scene.label, case.value,
            auc(scores, labels), tp / n_abn, fp / n_norm, _mean_tau(taus),
            n_norm, n_abn, tp, fp,
            float(np.mean([c.predicted == c.snr for c in stratum])),
        ))
    return rows


def _mean_tau(taus: np.ndarray) -> float:
    if np.all(taus == taus[0]):
        return float(taus[0])
    return math.fsum(taus) / len(taus)


def confusion_matrix(clips: Sequence[ScoredClip]) -> np.ndarray:
    """Counts indexed [true scene, predicted scene]."""
    m = np.zeros((len(SceneClass), len(SceneClass)), dtype=np.int64)
    for c in clips:
        m[int(c.snr), int(c.predicted)] += 1
    return m


def average_rows(rows: Sequence[ReportRow]) -> List[dict]:
    """Per (machine type, SNR, case): macro average over IDs and pooled-over-clips rates."""
    groups: Dict[tuple, List[ReportRow]] = {}
    for r in rows:
        groups.setdefault((r.machine_type, r.snr, r.case), []).append(r)
    out = []
    for (mtype, snr, case), rs in groups.items():
        n_abn = sum(r.n_abnormal for r in rs)
        n_norm = sum(r.n_normal for r in rs)
        out.append({
            "machine_type": mtype, "snr": snr, "case": case, "n_ids": len(rs),
            "auc_macro": float(np.mean([r.auc for r in rs])),
            "tpr_macro": float(np.mean([r.tpr for r in rs])),
            "fpr_macro": float(np.mean([r.fpr for r in rs])),
            "tpr_pooled": sum(r.true_positives for r in rs) / n_abn,
            "fpr_pooled": sum(r.false_positives for r in rs) / n_norm,
        })
    return out


@dataclass
class EvaluationReport:
    rows: List[ReportRow] = field(default_factory=list)
    sweeps: List[dict] = field(default_factory=list)
    confusion: Dict[str, list] = field(default_factory=dict)
    thresholds: Dict[str, dict] = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def find(self, machine_type, machine_id, snr, case) -> ReportRow:
        for r in self.rows:
            if (r.machine_type, r.machine_id, r.snr, r.case) == (machine_type, machine_id, snr, case):
                return r
        raise KeyError((machine_type, machine_id, snr, case))

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
        return buf.getvalue()

    def sweep_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["machine_type", "machine_id", "snr", "k", "threshold", "tpr", "fpr", "tpr_x_tnr"]
        w.writerow(cols)
        for s in self.sweeps:
            w.writerow([_fmt(s[c]) for c in cols])
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["machine_type", "machine_id", "true_scene"] + [f"pred_{c.label}" for c in SceneClass])
        for key, m in self.confusion.items():
            mtype, mid = key.split("/")
            for scene, counts in zip(SceneClass, m):
                w.writerow([mtype, mid, scene.label] + list(counts))
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "rows": [dict(asdict(r), tpr_x_tnr=r.tpr_x_tnr) for r in self.rows],
            "averages": average_rows(self.rows),
            "confusion": self.confusion,
            "thresholds": self.thresholds,
            "settings": self.settings,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def reference_comparison(self, case: str = Case.BASELINE.value) -> List[dict]:
        """Measured AUC next to the published per-machine-type averages (informational)."""
        out = []
        for avg in average_rows([r for r in self.rows if r.case == case]):
            ref = REFERENCE_AUC.get(avg["machine_type"], {}).get(avg["snr"])
            out.append({"machine_type": avg["machine_type"], "snr": avg["snr"], "n_ids": avg["n_ids"],
                        "auc_measured": avg["auc_macro"], "auc_reference": ref})
        return out

    def reference_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["machine_type", "snr", "n_ids", "auc_measured", "auc_reference"]
        w.writerow(cols)
        for row in self.reference_comparison():
            w.writerow([_fmt(row[c]) for c in cols])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v
