import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import identity_model, logit_model
from msfda.errors import NoValidPrototype, ValidationError
from msfda.pseudo import (
    argmax_first,    Prototypes, ScheduleParams, alpha_schedule, bootstrap_prototypes, compute_prototypes,
    confidence_scores, domain_weights, entropy, entropy_softmax_weights, fuse_pseudo_label,
    fuse_scores, model_scores, partition, prototype_distribution, read_partition, soft_prototypes,
    write_partition,
)


def _protos(rows, valid=None):
    c = np.asarray(rows, dtype=np.float64)
    return Prototypes(c, np.ones(len(c), bool) if valid is None else np.asarray(valid))


def test_soft_prototype_single_one_hot_point():
    p = soft_prototypes(np.array([[1.5, -2.0]]), np.array([[0.0, 1.0, 0.0]]))
    np.testing.assert_array_equal(p.valid, [False, True, False])
    np.testing.assert_array_equal(p.centroids[1], [1.5, -2.0])


def test_soft_prototype_uniform_predictions_give_global_mean():
    f = np.random.default_rng(0).normal(size=(7, 3))
    p = soft_prototypes(f, np.full((7, 4), 0.25))
    for k in range(4):
        np.testing.assert_allclose(p.centroids[k], f.mean(axis=0), atol=1e-14)


def test_soft_prototype_hand_weights():
    f = np.array([[0.0, 0.0], [4.0, 2.0]])
    h = np.array([[0.75, 0.25], [0.25, 0.75]])
    p = soft_prototypes(f, h)
    np.testing.assert_allclose(p.centroids, [[1.0, 0.5], [3.0, 1.5]], atol=1e-15)


def test_bootstrap_uses_model_predictions():
    m = logit_model(2)
    x = np.array([[0.0, 0.0], [2.0, 0.0]])
    h = m.predict_proba(x)
    expect = (h.T @ x) / h.sum(axis=0)[:, None]
    np.testing.assert_allclose(bootstrap_prototypes(m, x).centroids, expect, atol=1e-14)


def test_hard_prototypes_examples():
    m = identity_model(2, np.eye(2)[:, [0, 1, 0]])  # 3 classes
    x = np.array([[0.0, 0.0], [2.0, 2.0], [5.0, 1.0]])
    p = compute_prototypes(m, x, np.array([0, 0, 1]))
    np.testing.assert_array_equal(p.centroids[0], [1.0, 1.0])
    np.testing.assert_array_equal(p.centroids[1], [5.0, 1.0])
    assert p.valid.tolist() == [True, True, False]
    prev = _protos([[9.0, 9.0], [8.0, 8.0], [7.0, 7.0]])
    p = compute_prototypes(m, x[:1], np.array([1]), previous=prev)
    np.testing.assert_array_equal(p.centroids, [[9.0, 9.0], [0.0, 0.0], [7.0, 7.0]])
    assert p.valid.all()
    with pytest.raises(ValidationError):
        compute_prototypes(m, x[:0], np.array([], dtype=int))


def test_prototype_distribution_examples():
    m = logit_model(2)
    q = prototype_distribution(m, _protos([[0.0, 0.0], [1.0, 0.0]]), np.array([[0.0, 0.0]]))
    e = math.exp(-1)
    np.testing.assert_allclose(q, [[1 / (1 + e), e / (1 + e)]], rtol=1e-14)
    assert q[0, 0] == pytest.approx(0.7311, abs=1e-4)
    # equidistant from all prototypes
    q = prototype_distribution(m, _protos([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]), np.zeros((1, 2)))
    np.testing.assert_allclose(q, np.full((1, 3), 1 / 3), atol=1e-15)
    # large temperature tends to uniform
    q = prototype_distribution(m, _protos([[0.0, 0.0], [3.0, 0.0]]), np.zeros((1, 2)), temperature=1e6)
    assert np.max(np.abs(q - 0.5)) < 1e-5


def test_prototype_distribution_invalid_classes():
    m = logit_model(2)
    q = prototype_distribution(m, _protos([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]], [True, False, True]),
                               np.array([[1.0, 1.0]]))
    assert q[0, 1] == 0.0 and q.sum() == pytest.approx(1.0)
    with pytest.raises(NoValidPrototype):
        prototype_distribution(m, _protos([[0.0, 0.0]], [False]), np.zeros((1, 2)))
    with pytest.raises(ValidationError):
        prototype_distribution(m, _protos([[0.0, 0.0]]), np.zeros((1, 2)), temperature=0.0)


def test_confidence_scores_hand_product():
    m = logit_model(2)
    x = np.array([[math.log(0.8), math.log(0.2)]])
    # place prototypes so that q = [0.6, 0.4]: distances differ by ln(1.5)
    protos = _protos([x[0], x[0] + [math.log(1.5), 0.0]])
    p = confidence_scores(m, protos, x)
    np.testing.assert_allclose(p, [[0.48, 0.08]], atol=1e-14)


def test_confidence_uniform_and_agreement():
    m = logit_model(3)
    p = confidence_scores(m, _protos([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]), np.zeros((1, 3)))
    np.testing.assert_allclose(p, np.full((1, 3), 1 / 9), atol=1e-15)
    # near one-hot h and q at class 2
    x = np.array([[0.0, 0.0, 60.0]])
    p = confidence_scores(m, _protos([[0, 0, -900.0], [0, 0, -900.0], [0, 0, 60.0]]), x)
    np.testing.assert_allclose(p, [[0.0, 0.0, 1.0]], atol=1e-15)


def test_domain_weight_examples():
    np.testing.assert_allclose(entropy_softmax_weights([0.0, math.log(2)]), [2 / 3, 1 / 3], rtol=1e-15)
    x = np.random.default_rng(0).normal(size=(10, 3))
    assert domain_weights([logit_model(3)], x).tolist() == [1.0]
    w = domain_weights([logit_model(3), logit_model(3), logit_model(3)], x)
    np.testing.assert_allclose(w, np.full(3, 1 / 3), rtol=1e-15)
    # the sharper model gets more weight
    w = domain_weights([logit_model(3), identity_model(3, 5 * np.eye(3))], x)
    assert w[1] > w[0]


def test_entropy_is_natural_log():
    assert entropy(np.array([0.5, 0.5])) == pytest.approx(math.log(2), rel=1e-15)
    assert entropy(np.array([1.0, 0.0])) == 0.0


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(0, 10)), st.integers(-8, 8))
def test_domain_weights_simplex_and_shift(ent, shift):
    w = entropy_softmax_weights(ent)
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
    # shifts by exactly representable amounts keep the max-subtracted values identical
    ent_q = np.round(ent * 4) / 4
    np.testing.assert_array_equal(entropy_softmax_weights(ent_q), entropy_softmax_weights(ent_q + shift))


def test_fuse_examples():
    fused = fuse_scores([np.array([[0.6, 0.1]]), np.array([[0.2, 0.7]])], np.array([0.5, 0.5]))
    np.testing.assert_allclose(fused, [[0.4, 0.4]], atol=1e-16)
    assert argmax_first(fused).tolist() == [0]
    # dyadic values make the tie exact in floating point
    fused = fuse_scores([np.array([[0.625, 0.125]]), np.array([[0.125, 0.625]])], np.array([0.5, 0.5]))
    assert fused[0, 0] == fused[0, 1]
    assert argmax_first(fused).tolist() == [0]
    # the tie goes to the first class (class "1" in the one-based file labels)
    m = logit_model(2)
    labels, scores, _ = fuse_pseudo_label([m], [None], np.array([1.0]), np.zeros((1, 2)))
    assert labels.tolist() == [0] and scores[0] == 0.5


def test_fuse_single_model_reduces_to_its_scores():
    m = logit_model(3)
    x = np.random.default_rng(4).normal(size=(20, 3))
    protos = bootstrap_prototypes(m, x)
    labels, scores, fused = fuse_pseudo_label([m], [protos], np.array([1.0]), x)
    p = confidence_scores(m, protos, x)
    np.testing.assert_array_equal(fused, p)
    np.testing.assert_array_equal(labels, np.argmax(p, axis=1))


def test_model_scores_fallbacks():
    m = logit_model(2)
    x = np.array([[1.0, 0.0]])
    h = m.predict_proba(x)
    np.testing.assert_array_equal(model_scores(m, None, x), h)
    np.testing.assert_array_equal(model_scores(m, _protos([[0.0, 0.0]] * 2, [False, False]), x), h)
    np.testing.assert_array_equal(model_scores(m, _protos([[0.0, 0.0]] * 2), x, denoise=False), h / 2)


def test_partition_examples():
    s = np.array([0.3, 0.7])
    part = partition(s, np.array([0, 1]), 0.5)
    assert part.labeled.tolist() == [1] and part.unlabeled.tolist() == [0]
    assert partition(s, np.zeros(2, int), 0.7).labeled.size == 0
    assert partition(s, np.zeros(2, int), 0.0).unlabeled.size == 0
    assert part.pseudo_labels.tolist() == [1]


def test_alpha_schedule_examples():
    s = np.array([0.5, 0.7])
    assert alpha_schedule(ScheduleParams(0.5, 0.8), 2, s) == pytest.approx(0.192, abs=1e-15)
    assert alpha_schedule(ScheduleParams(2.0, 0.8), 0, s) == pytest.approx(1.2)
    sched = ScheduleParams(1.0, 1.0)
    assert alpha_schedule(sched, 1, s) == alpha_schedule(sched, 7, s)
    with pytest.raises(ValidationError):
        alpha_schedule(sched, 0, np.array([]))
    with pytest.raises(ValidationError):
        ScheduleParams(1.0, 0.0)


@settings(max_examples=300, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1)),
    st.floats(-0.1, 1.1),
    st.floats(0, 0.5),
)
def test_partition_exact_and_monotone(scores, alpha, bump):
    labels = np.zeros(scores.size, dtype=np.int64)
    part = partition(scores, labels, alpha)
    assert np.all(scores[part.labeled] > alpha)
    assert np.all(scores[part.unlabeled] <= alpha)
    both = np.concatenate([part.labeled, part.unlabeled])
    assert sorted(both.tolist()) == list(range(scores.size))
    tighter = partition(scores, labels, alpha + bump)
    assert set(tighter.labeled.tolist()) <= set(part.labeled.tolist())


def test_partition_file_round_trip(tmp_path):
    part = partition(np.array([0.1, 0.9, 1 / 3]), np.array([2, 0, 1]), 0.25)
    write_partition(part, tmp_path / "p.csv")
    back = read_partition(tmp_path / "p.csv")
    for name in ("labeled", "unlabeled", "labels", "scores"):
        np.testing.assert_array_equal(getattr(back, name), getattr(part, name))
    assert back.alpha == 0.25
    text = (tmp_path / "p.csv").read_text().splitlines()
    assert text[0] == "index,subset,pseudo_label,fused_score,alpha"
    assert text[1].startswith("0,U,3,")
