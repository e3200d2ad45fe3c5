import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupled_mtl.errors import ConfigError, MetricError
from coupled_mtl.metrics import (
    METRICS_CSV_HEADER,
    TaskMetrics,
    attribute_metrics,
    classification_metrics,
    metrics_rows,
    transfer_report,
    write_metrics_csv,
)

from oracles import confusion_counts

# (pred, true, K, expected accuracy, AA, macro F1), expected values by hand
CLASS_CASES = [
    ([0, 1, 2, 1], [0, 1, 2, 1], 3, 1.0, 1.0, 1.0),
    ([0, 1, 1, 1], [0, 0, 1, 1], 2, 0.75, 0.75, (2 / 3 + 4 / 5) / 2),
    ([2, 2, 2, 2], [0, 1, 2, 3], 4, 0.25, 0.25, (0 + 0 + 2 / 5 + 0) / 4),
    # class 2 absent from truth and predictions: F1 0, AA over classes 0 and 1
    ([0, 0, 1], [0, 1, 1], 3, 2 / 3, 0.75, (2 / 3 + 2 / 3 + 0) / 3),
]

# (pred, true, mask, expected accuracy, macro F1)
ATTRIBUTE_CASES = [
    ([[1], [1], [1], [0]], [[1], [0], [1], [0]], [[1], [1], [1], [1]], 0.75, 0.8),
    ([[1, 0], [0, 1]], [[1, 1], [0, 0]], [[1, 0], [1, 0]], 1.0, 1.0),
    # second attribute has no positives anywhere: F1 0 by convention
    ([[1, 0], [0, 0]], [[1, 0], [0, 0]], [[1, 1], [1, 1]], 1.0, 0.5),
]


def oracle_f1(pred, true, K):
    tp, fp, fn = confusion_counts(pred, true, K)
    return [2 * t / (2 * t + p + n) if (2 * t + p + n) else 0.0 for t, p, n in zip(tp, fp, fn)]


@pytest.mark.parametrize("pred, true, K, acc, aa, f1", CLASS_CASES)
def test_classification_worked_examples(pred, true, K, acc, aa, f1):
    m = classification_metrics(pred, true, K)
    assert abs(m.accuracy - acc) <= 1e-12
    assert abs(m.average_accuracy - aa) <= 1e-12
    assert abs(m.macro_f1 - f1) <= 1e-12
    assert abs(m.macro_f1 - np.mean(oracle_f1(pred, true, K))) <= 1e-12
    assert abs(m.afa - (f1 + acc) / 2) <= 1e-12


def test_two_class_per_class_f1():
    assert oracle_f1([0, 1, 1, 1], [0, 0, 1, 1], 2) == pytest.approx([2 / 3, 4 / 5], abs=1e-15)


@pytest.mark.parametrize("pred, true, mask, acc, f1", ATTRIBUTE_CASES)
def test_attribute_worked_examples(pred, true, mask, acc, f1):
    m = attribute_metrics(pred, true, mask)
    assert abs(m.accuracy - acc) <= 1e-12
    assert abs(m.macro_f1 - f1) <= 1e-12
    assert abs(m.afa - (acc + f1) / 2) <= 1e-12


def test_single_attribute_afa():
    m = attribute_metrics([1, 1, 1, 0], [1, 0, 1, 0], [1, 1, 1, 1])
    assert abs(m.afa - 0.775) <= 1e-12


def test_masked_garbage_is_ignored(rng):
    true = (rng.random((20, 4)) < 0.5).astype(float)
    mask = (rng.random((20, 4)) < 0.5).astype(float)
    mask[0] = 1
    true[0] = [1, 1, 1, 1]
    pred = np.where(mask > 0, true, 1 - true)
    m = attribute_metrics(pred, true, mask)
    assert m.accuracy == 1.0 and m.macro_f1 == 1.0


def test_errors():
    with pytest.raises(MetricError):
        classification_metrics([], [])
    with pytest.raises(MetricError):
        classification_metrics([0, 3], [0, 1], 2)
    with pytest.raises(MetricError):
        attribute_metrics([[1]], [[1]], [[0]])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 40), st.integers(2, 6))
def test_classification_properties(seed, n, K):
    rng = np.random.default_rng(seed)
    pred, true = rng.integers(0, K, n), rng.integers(0, K, n)
    m = classification_metrics(pred, true, K)
    assert m.afa == (m.macro_f1 + m.accuracy) / 2
    assert all(0 <= v <= 1 for v in m.as_dict().values())
    perm = rng.permutation(n)
    assert classification_metrics(pred[perm], true[perm], K) == m
    assert abs(m.macro_f1 - np.mean(oracle_f1(pred.tolist(), true.tolist(), K))) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 10), st.integers(2, 5))
def test_balanced_truth_accuracy_equals_aa(seed, per_class, K):
    rng = np.random.default_rng(seed)
    true = np.repeat(np.arange(K), per_class)
    m = classification_metrics(rng.integers(0, K, len(true)), true, K)
    assert abs(m.accuracy - m.average_accuracy) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_extra_masked_rows_change_nothing(seed):
    rng = np.random.default_rng(seed)
    true = (rng.random((12, 3)) < 0.5).astype(float)
    pred = (rng.random((12, 3)) < 0.5).astype(float)
    mask = np.ones((12, 3))
    base = attribute_metrics(pred, true, mask)
    padded = attribute_metrics(np.vstack([pred, rng.random((5, 3)) < 0.5]),
                               np.vstack([true, rng.random((5, 3)) < 0.5]),
                               np.vstack([mask, np.zeros((5, 3))]))
    assert padded == base
    assert base.afa == (base.macro_f1 + base.accuracy) / 2


def _tm(f1, acc=0.5):
    return TaskMetrics.build(acc, acc, f1)


def test_transfer_flags():
    st_, better = {"cls": _tm(0.5), "att": _tm(0.5)}, {"cls": _tm(0.6), "att": _tm(0.6)}
    assert not transfer_report(st_, better).negative_transfer
    mixed = transfer_report(st_, {"cls": _tm(0.4), "att": _tm(0.7)})
    assert mixed.flagged() == ["cls"] and mixed.negative_transfer
    assert not transfer_report(st_, st_).negative_transfer


def test_transfer_per_task_metric_and_unknown_metric():
    st_, mt = {"cls": _tm(0.5, 0.9)}, {"cls": _tm(0.6, 0.8)}
    assert transfer_report(st_, mt, {"cls": "accuracy"}).flagged() == ["cls"]
    with pytest.raises(ConfigError):
        transfer_report(st_, mt, "precision")


def test_metrics_csv():
    text = write_metrics_csv(metrics_rows("r1", "mt_c", 3, {"cls": _tm(0.25)}))
    lines = text.splitlines()
    assert lines[0] == ",".join(METRICS_CSV_HEADER)
    assert lines[1] == "r1,mt_c,3,cls,accuracy,0.5"
    assert len(lines) == 5
