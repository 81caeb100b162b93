import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import auc_mismatches, brute_auc
from scene_asd.anomaly import Threshold, ThresholdTable
from scene_asd.errors import DataError
from scene_asd.evaluation import (
    REFERENCE_AUC,
    Case,
    EvaluationReport,
    ScoredClip,
    auc,
    auto_sweep_step,
    average_rows,
    confusion_matrix,
    run_case,
    threshold_sweep,
    tpr_fpr,
)
from scene_asd.scene import SceneClass

scores_st = st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8)


def _labeled(normals, abnormals):
    return list(normals) + list(abnormals), [False] * len(normals) + [True] * len(abnormals)


def test_auc_examples():
    assert auc(*_labeled([0.1, 0.2], [0.3, 0.4])) == 1.0
    assert auc(*_labeled([0.3], [0.3])) == 0.5
    assert auc(*_labeled([0.3], [0.1, 0.5])) == 0.5
    with pytest.raises(DataError):
        auc([0.1, 0.2], [False, False])
    with pytest.raises(ValueError):
        auc([0.1, float("nan")], [False, True])


def test_auc_matches_brute_force_small_sets():
    checked, bad = auc_mismatches(max_per_class=4, tie_max=3)
    assert checked > 1000 and bad == []


@given(scores_st, scores_st)
def test_auc_matches_brute_force_property(normals, abnormals):
    assert auc(*_labeled(normals, abnormals)) == brute_auc(normals, abnormals)


int_scores = st.lists(st.integers(-1000, 1000).map(float), min_size=1, max_size=8)


@given(int_scores, int_scores)
def test_auc_invariant_under_increasing_transform(normals, abnormals):
    scores, labels = _labeled(normals, abnormals)
    a = auc(scores, labels)
    assert 0.0 <= a <= 1.0
    assert auc(np.arctan(np.asarray(scores) / 100) * 7 + 3, labels) == a


def test_tpr_fpr_examples():
    scores, labels = _labeled([1.0, 2.0], [3.0, 4.0])
    assert tpr_fpr(scores, labels, 0.0) == (1.0, 1.0)
    assert tpr_fpr(scores, labels, 10.0) == (0.0, 0.0)
    assert tpr_fpr(scores, labels, 2.5) == (1.0, 0.0)
    # strict inequality: a score equal to tau is not flagged
    assert tpr_fpr(scores, labels, 3.0) == (0.5, 0.0)


@given(scores_st, scores_st, st.floats(-1e3, 1e3), st.floats(0, 1e3))
def test_rates_non_increasing_in_tau(normals, abnormals, tau, delta):
    scores, labels = _labeled(normals, abnormals)
    t1, f1 = tpr_fpr(scores, labels, tau)
    t2, f2 = tpr_fpr(scores, labels, tau + delta)
    assert 0 <= t2 <= t1 <= 1 and 0 <= f2 <= f1 <= 1


def test_sweep_examples():
    scores, labels = _labeled([1.0, 2.0, 2.2], [3.0, 4.0])
    rows = threshold_sweep(scores, labels, tau=2.5, k_values=range(-3, 4), step=0.5)
    assert [r.k for r in rows] == list(range(-3, 4))
    zero = rows[3]
    assert zero.threshold == 2.5 and zero.value == 1.0
    tpr, fpr = tpr_fpr(scores, labels, 2.5)
    assert zero.value == tpr * (1 - fpr)
    far = threshold_sweep(scores, labels, tau=2.5, k_values=[100], step=0.5)[0]
    assert far.value == 0.0


def test_auto_sweep_step():
    assert auto_sweep_step([1.0, 6.0, 3.0]) == 0.1
    assert auto_sweep_step([2.0, 2.0]) == 1.0
    rows = threshold_sweep(*_labeled([0.0], [5.0]), tau=1.0, k_values=[1])
    assert rows[0].threshold == pytest.approx(1.1)


# --- cases -------------------------------------------------------------------------


def _table(taus):
    table = ThresholdTable()
    for scene, tau in zip(SceneClass, taus):
        table[scene.label] = Threshold(tau, 0.5, tau, 0.0, tau)
    return table


def _clips(predict=lambda c: c, seed=0):
    rng = np.random.default_rng(seed)
    clips = []
    for scene in SceneClass:
        # noisier scenes push all scores upwards
        shift = {0: 2.0, 1: 1.0, 2: 0.0}[int(scene)]
        for i in range(10):
            abnormal = i >= 6
            score = shift + rng.normal(1.0 if abnormal else 0.0, 0.3)
            clips.append(ScoredClip(f"{scene.label}/{i}", scene, abnormal, score, predict(scene)))
    return clips


TABLE = _table([2.6, 1.6, 0.6])


def test_oracle_scene_aware_equals_baseline():
    clips = _clips()
    base = run_case("baseline", clips, TABLE)
    aware = run_case(Case.SCENE_AWARE, clips, TABLE)
    for b, a in zip(base, aware):
        assert (a.auc, a.tpr, a.fpr, a.tau, a.true_positives, a.false_positives) == \
            (b.auc, b.tpr, b.fpr, b.tau, b.true_positives, b.false_positives)
        assert a.scene_accuracy == 1.0


def test_fixed_case():
    clips = _clips()
    base = {r.snr: r for r in run_case("baseline", clips, TABLE)}
    fixed = {r.snr: r for r in run_case("fixed", clips, TABLE)}
    assert (fixed["6dB"].tpr, fixed["6dB"].fpr) == (base["6dB"].tpr, base["6dB"].fpr)
    # tau(-6 dB) > tau(6 dB): the lower fixed threshold can only raise the FPR
    assert fixed["-6dB"].fpr >= base["-6dB"].fpr
    assert fixed["-6dB"].fpr == 1.0
    assert fixed["-6dB"].tau == 0.6


def test_scene_aware_uses_predicted_threshold():
    clips = _clips(predict=lambda c: SceneClass.PLUS_6DB)
    aware = {r.snr: r for r in run_case("scene_aware", clips, TABLE)}
    fixed = {r.snr: r for r in run_case("fixed", clips, TABLE)}
    assert aware["-6dB"].fpr == fixed["-6dB"].fpr
    assert aware["-6dB"].scene_accuracy == 0.0


def test_run_case_errors():
    with pytest.raises(DataError):
        run_case("baseline", [], TABLE)
    partial = ThresholdTable({"6dB": Threshold(1, 0.5, 1, 0, 1)})
    with pytest.raises(DataError):
        run_case("baseline", _clips(), partial)
    with pytest.raises(ValueError):
        run_case("sideways", _clips(), TABLE)


def test_confusion_matrix():
    clips = _clips(predict=lambda c: SceneClass.ZERO_DB if c is SceneClass.MINUS_6DB else c)
    m = confusion_matrix(clips)
    assert m.tolist() == [[0, 10, 0], [0, 10, 0], [0, 0, 10]]


def test_average_rows_is_macro_mean():
    rows = run_case("baseline", _clips(seed=1), TABLE, "fan", "id_00") + \
        run_case("baseline", _clips(seed=2), TABLE, "fan", "id_02")
    avgs = {a["snr"]: a for a in average_rows(rows)}
    for snr in ("6dB", "0dB", "-6dB"):
        per_id = [r for r in rows if r.snr == snr]
        assert avgs[snr]["auc_macro"] == pytest.approx(np.mean([r.auc for r in per_id]), rel=1e-15)
        assert avgs[snr]["n_ids"] == 2
        pooled = sum(r.false_positives for r in per_id) / sum(r.n_normal for r in per_id)
        assert avgs[snr]["fpr_pooled"] == pooled


def test_report_outputs():
    clips = _clips()
    report = EvaluationReport(settings={"seed": 0})
    for case in Case:
        report.rows += run_case(case, clips, TABLE, "fan", "id_00")
    report.confusion["fan/id_00"] = confusion_matrix(clips).tolist()
    lines = report.rows_csv().splitlines()
    assert lines[0].startswith("machine_type,machine_id,snr,case,auc,tpr,fpr,tau")
    assert len(lines) == 1 + 9
    assert {l.split(",")[3] for l in lines[1:]} == {"baseline", "scene_aware", "fixed"}
    doc = json.loads(report.to_json())
    assert len(doc["rows"]) == 9 and doc["settings"] == {"seed": 0}
    assert report.find("fan", "id_00", "0dB", "fixed").case == "fixed"
    assert report.confusion_csv().splitlines()[1] == "fan,id_00,-6dB,10,0,0"
    ref = report.reference_comparison()
    assert {(r["snr"], r["auc_reference"]) for r in ref} == {(k, v) for k, v in REFERENCE_AUC["fan"].items()}
