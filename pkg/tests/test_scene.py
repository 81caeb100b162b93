import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from scene_asd.audio_io import AudioClip
from scene_asd.dsp import snet_features
from scene_asd.errors import DataError, ShapeError
from scene_asd.nn import model_bytes
from scene_asd.scene import (
    SceneClass,
    aggregate,
    build_snet,
    heldout_loss,
    predict_clip,
    predict_proba,
    predict_segment,
    stratified_holdout,
    train_snet,
)

GAINS = (0.05, 0.3, 2.0)


def noise_segments(n_per_class, seed, length=2000):
    rng = np.random.default_rng(seed)
    x = np.concatenate([g * rng.standard_normal((n_per_class, length)) for g in GAINS])
    y = np.repeat(np.arange(3), n_per_class)
    return x, y


@pytest.fixture(scope="module")
def trained():
    x, y = noise_segments(40, seed=0)
    net = build_snet(0)
    log = train_snet(net, x, y, epochs=6, seed=1, batch_size=32, lr=1e-2)
    return net, log


def test_scene_classes():
    assert len(SceneClass) == 3
    assert [c.label for c in SceneClass] == ["-6dB", "0dB", "6dB"]
    assert [c.snr_db for c in SceneClass] == [-6, 0, 6]
    assert SceneClass.from_snr(0) is SceneClass.ZERO_DB
    assert SceneClass.from_label("6dB") is SceneClass.PLUS_6DB
    assert SceneClass.MINUS_6DB.description == "more noisy"
    with pytest.raises(ValueError):
        SceneClass.from_snr(3)


def test_build_snet():
    net = build_snet(0)
    assert net.param_count() == 2323
    assert net.forward(np.zeros((1, 2000))).shape == (1, 3)
    assert net.layers[-1].activation == "identity"
    assert net.metadata["classes"] == ["-6dB", "0dB", "6dB"]
    assert model_bytes(build_snet(3)) == model_bytes(build_snet(3))


def test_predict_segment_probabilities():
    p = predict_segment(build_snet(1), np.random.default_rng(0).standard_normal(2000))
    assert abs(p.sum() - 1) <= 1e-12 and np.all((p >= 0) & (p <= 1))
    zero = build_snet(1)
    for q in zero.params:
        q[...] = 0
    np.testing.assert_allclose(predict_segment(zero, np.ones(2000)), [1 / 3] * 3, rtol=1e-15)
    with pytest.raises(ShapeError):
        predict_segment(zero, np.ones(1999))


def test_aggregate_examples():
    assert aggregate(np.tile([1.0, 0.0, 0.0], (40, 1))) is SceneClass.MINUS_6DB
    probs = np.array([[0.6, 0.4, 0.0], [0.1, 0.8, 0.1], [0.2, 0.7, 0.1]])
    assert aggregate(probs) is SceneClass.ZERO_DB
    assert aggregate(np.array([[0.5, 0.0, 0.5]])) is SceneClass.MINUS_6DB
    assert aggregate(np.array([[0.0, 0.5, 0.5]])) is SceneClass.ZERO_DB
    with pytest.raises(DataError):
        aggregate(np.zeros((0, 3)))
    with pytest.raises(DataError):
        predict_clip(build_snet(0), np.zeros((0, 2000)))


prob_rows = st.lists(st.tuples(*[st.floats(0, 1)] * 3).filter(lambda t: sum(t) > 0), min_size=1, max_size=12)


@given(prob_rows, st.randoms(use_true_random=False))
def test_aggregate_order_invariant(rows, rnd):
    probs = np.array([np.array(r) / sum(r) for r in rows])
    order = list(range(len(probs)))
    rnd.shuffle(order)
    assert aggregate(probs) == aggregate(probs[order])


@given(prob_rows)
def test_sum_and_mean_agree(rows):
    probs = np.array([np.array(r) / sum(r) for r in rows])
    sums = probs.sum(axis=0)
    top = np.sort(sums)
    assume(top[-1] - top[-2] > 1e-9)
    assert aggregate(probs) == int(np.argmax(probs.mean(axis=0)))


def test_stratified_holdout():
    labels = np.repeat([0, 1, 2], [50, 30, 3])
    mask = stratified_holdout(labels, 0.1, np.random.default_rng(0))
    assert np.bincount(labels[mask]).tolist() == [5, 3, 1]


def test_train_snet_rejects_missing_class():
    x, y = noise_segments(5, seed=0, length=100)
    keep = y != 2
    with pytest.raises(DataError):
        train_snet(build_snet(0, 100), x[keep], y[keep], epochs=1)


def test_training_segment_count():
    # 300 ten-second clips per class at 40 segments each
    clip = AudioClip(16000, np.zeros(160000))
    assert len(snet_features(clip)) * 300 * len(SceneClass) == 36000


def test_separable_classes(trained):
    net, _ = trained
    x, y = noise_segments(30, seed=99)
    pred = predict_proba(net, x).argmax(axis=1)
    assert (pred == y).mean() > 0.95
    assert np.argmax(predict_segment(net, x[0])) == 0


def test_early_stopping_keeps_best(trained):
    net, log = trained
    assert len(log.heldout_loss) == 6
    assert log.heldout_loss[log.best_epoch - 1] == min(log.heldout_loss)
    # the returned parameters reproduce the best held-out loss
    x, y = noise_segments(40, seed=0)
    held = stratified_holdout(y, 0.1, np.random.default_rng(1))
    assert heldout_loss(net, x[held], y[held]) == pytest.approx(min(log.heldout_loss), rel=1e-12)
    assert min(log.heldout_loss) <= log.heldout_loss[-1]


def test_predict_clip_votes(trained):
    net, _ = trained
    rng = np.random.default_rng(5)
    for cls, gain in enumerate(GAINS):
        segments = gain * rng.standard_normal((40, 2000))
        assert predict_clip(net, segments) == cls
        assert predict_clip(net, segments[::-1]) == cls
