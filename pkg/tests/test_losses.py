import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupled_mtl.errors import ConfigError, LabelError, ShapeError
from coupled_mtl.losses import (
    BatchLabels,
    LossOptions,
    Predictions,
    attribute_mixture,
    indicator_scores,
    loss_att,
    loss_cls,
    loss_dm,
    loss_sca,
    loss_total,
    soft_cls_label,
)
from coupled_mtl.relatedness import indicator_weights, mixture_matrix

from conftest import random_batch
from gradcheck import LOSSES, loss_fd_error, random_relatedness
from oracles import soft_label_scalar


def probs(cls_p, att_p):
    return Predictions(np.atleast_2d(np.asarray(cls_p, float)), np.atleast_2d(np.asarray(att_p, float)))


def labels(cls, y, mask):
    return BatchLabels(np.asarray(cls), np.atleast_2d(np.asarray(y, float)), np.atleast_2d(np.asarray(mask, float)))


def onehot_for(spec, name):
    p = np.zeros((1, spec.num_classes))
    p[0, spec.class_names.index(name)] = 1.0
    return p


def att_vector(spec, active):
    y = np.zeros((1, spec.num_attributes))
    for a in active:
        y[0, spec.attribute_names.index(a)] = 1.0
    return y


# -- supervised terms --------------------------------------------------------

def test_cls_perfect_prediction_is_zero():
    assert loss_cls(probs([[0, 1, 0]], [[0.5]]), labels([1], [[0]], [[0]])).value == 0.0


def test_cls_coin_flip_is_ln2():
    t = loss_cls(probs([[0.5, 0.5]], [[0.5]]), labels([0], [[0]], [[1]]))
    assert t.value == pytest.approx(math.log(2), abs=1e-15)


def test_cls_label_out_of_range():
    with pytest.raises(LabelError):
        loss_cls(probs([[0.5, 0.5]], [[0.5]]), labels([2], [[0]], [[1]]))


def test_cls_without_labels_is_zero():
    t = loss_cls(probs([[0.3, 0.7]], [[0.5]]), labels([-1], [[1]], [[1]]))
    assert t.value == 0.0 and not t.grad_cls.any()


def test_att_coin_flip_is_ln2():
    t = loss_att(probs([[1.0]], [[0.5]]), labels([-1], [[1]], [[1]]))
    assert t.value == pytest.approx(math.log(2), abs=1e-15)


def test_att_fully_masked_sample_contributes_nothing():
    p = probs([[1.0], [1.0]], [[0.5, 0.5], [0.9, 0.1]])
    both = loss_att(p, labels([0, 0], [[1, 0], [1, 1]], [[1, 1], [0, 0]]))
    alone = loss_att(probs([[1.0]], [[0.5, 0.5]]), labels([0], [[1, 0]], [[1, 1]]))
    assert both.value == alone.value
    assert not both.grad_att[1].any()


def test_att_gradient_formula(rng):
    preds, lab = random_batch(rng, 6, 3, 5)
    t = loss_att(preds, lab)
    d = lab.att_mask
    rows = d.sum(axis=1) > 0
    expected = np.zeros_like(d)
    expected[rows] = (d * (preds.att_probs - lab.att_labels))[rows] / (d.sum(axis=1, keepdims=True)[rows] * rows.sum())
    np.testing.assert_allclose(t.grad_att, expected, atol=1e-15)


# -- distribution matching ---------------------------------------------------

def test_dm_one_hot_happiness(table1):
    q = attribute_mixture(onehot_for(table1, "happiness"), mixture_matrix(table1))[0]
    on = {a for a, v in zip(table1.attribute_names, q) if v == 1.0}
    assert on == {"AU12", "AU25", "AU6"}
    assert set(q.tolist()) == {0.0, 1.0}


def test_dm_surprise_fear_split(table1, rng):
    for _ in range(20):
        p = rng.dirichlet(np.ones(table1.num_classes))[None, :]
        q = attribute_mixture(p, mixture_matrix(table1))[0]
        s, f = table1.class_names.index("surprise"), table1.class_names.index("fear")
        assert abs(q[table1.attribute_names.index("AU2")] - (p[0, s] + p[0, f])) <= 1e-12


def test_dm_silent_attributes_give_zero(table1, rng):
    p = rng.dirichlet(np.ones(table1.num_classes))[None, :]
    t = loss_dm(probs(p, np.full((1, 17), 1e-300)), mixture_matrix(table1))
    assert t.value == pytest.approx(0.0, abs=1e-290)


def test_dm_matching_attributes_give_zero(table1):
    p = onehot_for(table1, "happiness")
    a = np.where(att_vector(table1, ["AU12", "AU25", "AU6"]) > 0, 1.0, 1e-300)
    assert loss_dm(probs(p, a), mixture_matrix(table1)).value == pytest.approx(0.0, abs=1e-280)


def test_dm_unrelated_attribute_pays_log_eps(table1):
    p = onehot_for(table1, "happiness")
    a = np.full((1, 17), 1e-300)
    a[0, table1.attribute_names.index("AU1")] = 0.25
    eps = 1e-6
    t = loss_dm(probs(p, a), mixture_matrix(table1), LossOptions(eps=eps))
    assert t.value == pytest.approx(-0.25 * math.log(eps), rel=1e-12)


def test_dm_shape_mismatch(table1):
    with pytest.raises(ShapeError):
        loss_dm(probs(np.full((1, 6), 1 / 6), np.full((1, 17), 0.5)), mixture_matrix(table1))


def test_dm_stop_cls_grad(rng):
    preds, _ = random_batch(rng, 5, 4, 6)
    mix, _ = random_relatedness(rng, 4, 6)
    full = loss_dm(preds, mix)
    stopped = loss_dm(preds, mix, LossOptions(dm_stop_cls_grad=True))
    assert stopped.value == full.value
    assert not stopped.grad_cls.any()
    np.testing.assert_array_equal(stopped.grad_att, full.grad_att)


def test_symmetric_dm_adds_complement(rng):
    preds, _ = random_batch(rng, 5, 4, 6)
    mix = rng.uniform(0.1, 0.9, size=(4, 6))
    q = preds.cls_probs @ mix
    a = preds.att_probs
    expected = -(a * np.log(q) + (1 - a) * np.log(1 - q)).sum() / 5
    assert loss_dm(preds, mix, LossOptions(symmetric_dm=True)).value == pytest.approx(expected, rel=1e-12)


# -- soft co-annotation -------------------------------------------------------

def test_happiness_indicator_is_exactly_one(table1):
    y = att_vector(table1, ["AU12", "AU25", "AU6"])
    scores = indicator_scores(BatchLabels(np.array([-1]), y, np.ones_like(y)), indicator_weights(table1))
    assert scores[0, table1.class_names.index("happiness")] == 1.0


def test_all_zero_labels_give_uniform_soft_label(table1):
    y = np.zeros((1, 17))
    soft, eligible = soft_cls_label(BatchLabels(np.array([-1]), y, np.ones_like(y)), indicator_weights(table1))
    assert eligible.tolist() == [True]
    np.testing.assert_allclose(soft, 1.0 / 7, atol=1e-12)


def test_soft_label_matches_scalar_oracle(rng):
    spec = __import__("coupled_mtl").relatedness.bundled("table1_reduced")
    w = indicator_weights(spec).values
    for _ in range(50):
        y = (rng.random((1, spec.num_attributes)) < 0.4).astype(float)
        soft, _ = soft_cls_label(BatchLabels(np.array([-1]), y, np.ones_like(y)), w)
        ref = soft_label_scalar(y[0].tolist(), w.tolist())
        np.testing.assert_allclose(soft[0], ref, rtol=0, atol=1e-12)


def test_masked_attribute_counts_as_inactive_unless_renormalised(table1):
    y = att_vector(table1, ["AU12", "AU25"])
    mask = np.ones_like(y)
    mask[0, table1.attribute_names.index("AU6")] = 0
    lab = BatchLabels(np.array([-1]), y, mask)
    iw = indicator_weights(table1)
    h = table1.class_names.index("happiness")
    assert indicator_scores(lab, iw)[0, h] == pytest.approx(2 / 2.51, abs=1e-15)
    assert indicator_scores(lab, iw, LossOptions(renorm_observed=True))[0, h] == 1.0


def test_sca_uniform_is_ln_k():
    K = 5
    u = np.full((1, K), 1.0 / K)
    t = loss_sca(probs(u, [[0.5]]), u, [True])
    assert t.value == pytest.approx(math.log(K), rel=1e-12)


def test_sca_onehot_match_is_zero():
    soft = np.array([[1.0, 0.0, 0.0]])
    assert loss_sca(probs(soft, [[0.5]]), soft, [True]).value == 0.0


def test_sca_no_eligible_rows():
    t = loss_sca(probs([[0.2, 0.8]], [[0.5]]), [[0.5, 0.5]], [False])
    assert t.value == 0.0 and not t.grad_cls.any()


def test_sca_never_touches_attribute_head(rng):
    for _ in range(20):
        preds, lab = random_batch(rng, 6, 4, 7)
        _, w = random_relatedness(rng, 4, 7)
        soft, eligible = soft_cls_label(lab, w)
        t = loss_sca(preds, soft, eligible)
        assert not t.grad_att.any()


# -- gradients ---------------------------------------------------------------

@pytest.mark.parametrize("name", LOSSES)
def test_gradients_match_finite_differences(name, rng):
    errs = [loss_fd_error(rng, name) for _ in range(30)]
    assert max(errs) < 1e-5


@pytest.mark.parametrize("opt", [LossOptions(symmetric_dm=True), LossOptions(dm_stop_cls_grad=True)])
def test_dm_variant_gradients(opt, rng):
    errs = []
    for _ in range(20):
        if opt.dm_stop_cls_grad:
            # the stopped term is not the derivative of the value w.r.t. class logits
            preds, _ = random_batch(rng, 4, 3, 5)
            mix, _ = random_relatedness(rng, 3, 5)
            assert not loss_dm(preds, mix, opt).grad_cls.any()
            continue
        errs.append(loss_fd_error(rng, "dm", opt))
    assert not errs or max(errs) < 1e-5


def test_mask_rows_get_zero_gradient(rng):
    for _ in range(20):
        preds, lab = random_batch(rng, 8, 4, 6, p_cls=0.5, p_mask=0.3)
        _, w = random_relatedness(rng, 4, 6)
        no_cls = ~lab.has_cls
        no_att = ~lab.has_att
        assert not loss_cls(preds, lab).grad_cls[no_cls].any()
        assert not loss_att(preds, lab).grad_att[no_att].any()
        soft, eligible = soft_cls_label(lab, w)
        assert not loss_sca(preds, soft, eligible).grad_cls[no_att].any()


# -- total -------------------------------------------------------------------

def test_total_selector(rng):
    preds, lab = random_batch(rng, 6, 4, 5)
    mix, w = random_relatedness(rng, 4, 5)
    rep = loss_total(preds, lab, mix, w, (1, 0, 0, 0))
    ref = loss_cls(preds, lab)
    assert rep.l_total == ref.value
    np.testing.assert_array_equal(rep.grad_cls_logits, ref.grad_cls)
    assert not rep.grad_att_logits.any()


def test_total_without_coupling_is_sum_of_task_losses(rng):
    preds, _ = random_batch(rng, 6, 4, 5)
    lab = BatchLabels(rng.integers(0, 4, 6), (rng.random((6, 5)) < 0.5).astype(float), np.ones((6, 5)))
    rep = loss_total(preds, lab, lambdas=(1, 1, 0, 0))
    assert rep.l_total == loss_cls(preds, lab).value + loss_att(preds, lab).value


def test_total_is_weighted_sum(rng):
    for _ in range(20):
        preds, lab = random_batch(rng, 7, 5, 6)
        mix, w = random_relatedness(rng, 5, 6)
        lam = tuple(rng.uniform(0, 2, 4))
        rep = loss_total(preds, lab, mix, w, lam)
        soft, eligible = soft_cls_label(lab, w)
        terms = [loss_cls(preds, lab), loss_att(preds, lab), loss_dm(preds, mix), loss_sca(preds, soft, eligible)]
        assert abs(rep.l_total - sum(l * t.value for l, t in zip(lam, terms))) <= 1e-12
        np.testing.assert_allclose(rep.grad_cls_logits, sum(l * t.grad_cls for l, t in zip(lam, terms)), atol=1e-12)
        np.testing.assert_allclose(rep.grad_att_logits, sum(l * t.grad_att for l, t in zip(lam, terms)), atol=1e-12)
        assert min(rep.l_cls, rep.l_att, rep.l_dm, rep.l_sca) >= 0


def test_total_rejects_bad_lambdas(rng):
    preds, lab = random_batch(rng, 3, 3, 3)
    with pytest.raises(ConfigError):
        loss_total(preds, lab, lambdas=(1, -1, 0, 0))
    with pytest.raises(ConfigError):
        loss_total(preds, lab, lambdas=(1, 1, 1, 0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_batch_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    B, K, M = 7, 4, 6
    preds, lab = random_batch(rng, B, K, M)
    mix, w = random_relatedness(rng, K, M)
    perm = rng.permutation(B)
    p2 = Predictions.from_logits(preds.cls_logits[perm], preds.att_logits[perm])
    l2 = BatchLabels(lab.cls_label[perm], lab.att_labels[perm], lab.att_mask[perm])
    a = loss_total(preds, lab, mix, w)
    b = loss_total(p2, l2, mix, w)
    for k, v in a.as_dict().items():
        assert abs(v - b.as_dict()[k]) <= 1e-12
    np.testing.assert_allclose(a.grad_cls_logits[perm], b.grad_cls_logits, atol=1e-12)
