"""Evaluation measures and the negative-transfer report.

Conventions: a class (or attribute) with no true and no predicted positives
contributes an F1 of 0; average accuracy (AA) is the mean recall over the
classes present in the ground truth; AFA is the mean of macro F1 and
accuracy.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, MetricError


@dataclass(frozen=True)
class TaskMetrics:
    accuracy: float
    average_accuracy: float
    macro_f1: float
    afa: float

    @classmethod
    def build(cls, accuracy, average_accuracy, macro_f1):
        return cls(float(accuracy), float(average_accuracy), float(macro_f1),
                   (float(macro_f1) + float(accuracy)) / 2.0)

    def as_dict(self):
        return asdict(self)


METRIC_NAMES = tuple(f.name for f in fields(TaskMetrics))


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.divide(2.0 * tp, denom, out=np.zeros_like(denom, dtype=np.float64), where=denom > 0)


def classification_metrics(pred_classes, true_classes, num_classes=None) -> TaskMetrics:
    pred = np.asarray(pred_classes, dtype=np.int64)
    true = np.asarray(true_classes, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise MetricError("predictions and truth must be 1-D and equally long")
    if len(true) == 0:
        raise MetricError("no samples to score")
    K = num_classes or int(max(pred.max(), true.max())) + 1
    if pred.min() < 0 or true.min() < 0 or pred.max() >= K or true.max() >= K:
        raise MetricError(f"labels must lie in [0, {K})")
    conf = np.zeros((K, K), dtype=np.float64)
    np.add.at(conf, (true, pred), 1.0)
    tp = np.diag(conf)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    accuracy = tp.sum() / len(true)
    present = support > 0
    aa = np.mean(tp[present] / support[present])
    f1 = _f1(tp, predicted - tp, support - tp)
    return TaskMetrics.build(accuracy, aa, f1.mean())


def attribute_metrics(pred_binary, true_binary, mask) -> TaskMetrics:
    """Per-attribute accuracy and F1 over annotated cells, macro-averaged.

    Attributes with no annotated cell at all are left out of the averages.
    ``average_accuracy`` equals ``accuracy`` for this task.
    """
    pred = np.asarray(pred_binary, dtype=np.float64)
    true = np.asarray(true_binary, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if pred.ndim == 1:
        pred, true, m = pred[:, None], true[:, None], m[:, None]
    if not (pred.shape == true.shape == m.shape):
        raise MetricError("predictions, truth and mask must share a shape")
    counted = m.sum(axis=0)
    if counted.sum() == 0:
        raise MetricError("every attribute cell is masked")
    keep = counted > 0
    p, t, m = pred[:, keep] > 0.5, true[:, keep] > 0.5, m[:, keep] > 0
    tp = (p & t & m).sum(axis=0).astype(np.float64)
    fp = (p & ~t & m).sum(axis=0).astype(np.float64)
    fn = (~p & t & m).sum(axis=0).astype(np.float64)
    correct = ((p == t) & m).sum(axis=0)
    acc = np.mean(correct / counted[keep])
    return TaskMetrics.build(acc, acc, _f1(tp, fp, fn).mean())


@dataclass(frozen=True)
class TaskTransfer:
    st_score: float
    mt_score: float
    negative_transfer: bool


@dataclass(frozen=True)
class TransferReport:
    tasks: dict
    metric: str

    @property
    def negative_transfer(self):
        return any(t.negative_transfer for t in self.tasks.values())

    def flagged(self):
        return sorted(k for k, t in self.tasks.items() if t.negative_transfer)


def transfer_report(st: dict, mt: dict, primary_metric="macro_f1") -> TransferReport:
    """Flag every task where the multi-task score is strictly below the
    single-task score on ``primary_metric``.

    ``primary_metric`` is a metric name, or a dict mapping task -> name.
    """
    tasks = {}
    for task in mt:
        if task not in st:
            continue
        name = primary_metric[task] if isinstance(primary_metric, dict) else primary_metric
        if name not in METRIC_NAMES:
            raise ConfigError(f"unknown metric {name!r}; choose from {METRIC_NAMES}")
        s, m = getattr(st[task], name), getattr(mt[task], name)
        tasks[task] = TaskTransfer(s, m, m < s)
    return TransferReport(tasks, primary_metric if isinstance(primary_metric, str) else "per-task")


METRICS_CSV_HEADER = ("run_id", "mode", "seed", "task", "metric", "value")


def metrics_rows(run_id, mode, seed, metrics: dict):
    for task in sorted(metrics):
        for name, value in metrics[task].as_dict().items():
            yield (run_id, mode, seed, task, name, value)


def write_metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_CSV_HEADER)
    for r in rows:
        w.writerow([*r[:5], repr(float(r[5]))])
    return buf.getvalue()
