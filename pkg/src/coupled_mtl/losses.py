"""The four terms of the coupled multi-task objective and their gradients.

Every loss returns a :class:`LossTerm` holding its value and its gradient with
respect to the class-head logits (B x K) and the attribute-head logits
(B x M).  Gradients are derived by hand; probabilities are pushed back through
the softmax / sigmoid so callers only ever deal with logit gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, LabelError, ShapeError
from .numerics import (
    DEFAULT_EPS,
    clamped_log,
    clamped_log_grad,
    log_sigmoid,
    log_softmax,
    sigmoid,
    softmax,
)


@dataclass(frozen=True, eq=False)
class Predictions:
    """Class probabilities (B x K, rows on the simplex) and attribute
    probabilities (B x M, sigmoid outputs).

    Logits are kept when available so the supervised terms can use
    log-softmax / log-sigmoid directly instead of logs of rounded probabilities.
    """

    cls_probs: np.ndarray
    att_probs: np.ndarray
    cls_logits: np.ndarray | None = None
    att_logits: np.ndarray | None = None

    @classmethod
    def from_logits(cls, cls_logits, att_logits):
        cls_logits = np.asarray(cls_logits, dtype=np.float64)
        att_logits = np.asarray(att_logits, dtype=np.float64)
        return cls(softmax(cls_logits), sigmoid(att_logits), cls_logits, att_logits)

    @property
    def batch_size(self):
        return self.cls_probs.shape[0]


@dataclass(frozen=True, eq=False)
class BatchLabels:
    """Per-sample supervision for one batch.

    ``cls_label`` uses -1 for "no class label".  ``att_mask`` holds the
    per-attribute annotation indicators; ``att_labels`` is only meaningful
    where the mask is 1.  ``cls_target`` optionally replaces the one-hot
    target of labelled rows with a soft distribution (pseudo labels).
    """

    cls_label: np.ndarray
    att_labels: np.ndarray
    att_mask: np.ndarray
    cls_target: np.ndarray | None = None

    @property
    def has_cls(self):
        return np.asarray(self.cls_label) >= 0

    @property
    def has_att(self):
        return np.asarray(self.att_mask).sum(axis=1) > 0


@dataclass(frozen=True)
class LossOptions:
    eps: float = DEFAULT_EPS
    symmetric_dm: bool = False      # add -(1-p) log(1-q) to distribution matching
    dm_stop_cls_grad: bool = False  # treat the class mixture as a constant target
    renorm_observed: bool = False   # indicator score normalised over annotated attributes only


class LossTerm(NamedTuple):
    value: float
    grad_cls: np.ndarray
    grad_att: np.ndarray


@dataclass(frozen=True, eq=False)
class LossReport:
    l_cls: float
    l_att: float
    l_dm: float
    l_sca: float
    l_total: float
    grad_cls_logits: np.ndarray
    grad_att_logits: np.ndarray
    lambdas: tuple = (1.0, 1.0, 1.0, 1.0)

    def as_dict(self):
        return {"l_cls": self.l_cls, "l_att": self.l_att, "l_dm": self.l_dm,
                "l_sca": self.l_sca, "l_total": self.l_total}


def _softmax_backward(p, g):
    """dL/dz given dL/dp for row-wise p = softmax(z)."""
    return p * (g - np.sum(p * g, axis=1, keepdims=True))


def _sigmoid_backward(a, g):
    return g * a * (1.0 - a)


def _zeros(preds):
    return np.zeros_like(preds.cls_probs), np.zeros_like(preds.att_probs)


def _values(m):
    return np.asarray(getattr(m, "values", m), dtype=np.float64)


def loss_cls(preds: Predictions, labels: BatchLabels) -> LossTerm:
    """Cross entropy over the rows that carry a class label."""
    p = preds.cls_probs
    B, K = p.shape
    y = np.asarray(labels.cls_label)
    if y.shape != (B,):
        raise ShapeError(f"cls_label has shape {y.shape}, expected ({B},)")
    if np.any(y >= K) or np.any(y < -1):
        raise LabelError(f"class index out of range [0, {K})")
    g_cls, g_att = _zeros(preds)
    rows = np.flatnonzero(y >= 0)
    n = len(rows)
    if n == 0:
        return LossTerm(0.0, g_cls, g_att)
    target = np.zeros((n, K))
    target[np.arange(n), y[rows]] = 1.0
    if labels.cls_target is not None:
        target = np.asarray(labels.cls_target, dtype=np.float64)[rows]
    if preds.cls_logits is not None:
        logp = log_softmax(preds.cls_logits[rows])
    else:
        logp = clamped_log(p[rows])
    value = float(-np.sum(target * logp) / n)
    g_cls[rows] = (p[rows] - target) / n
    return LossTerm(value, g_cls, g_att)


def loss_att(preds: Predictions, labels: BatchLabels) -> LossTerm:
    """Masked binary cross entropy.

    Each sample's BCE is averaged over its annotated attributes; the batch
    value averages over samples with at least one annotation.
    """
    a = preds.att_probs
    B, M = a.shape
    mask = np.asarray(labels.att_mask, dtype=np.float64)
    y = np.asarray(labels.att_labels, dtype=np.float64)
    if mask.shape != (B, M) or y.shape != (B, M):
        raise ShapeError(f"attribute labels/mask must be {B}x{M}")
    g_cls, g_att = _zeros(preds)
    per_sample = mask.sum(axis=1)
    rows = np.flatnonzero(per_sample > 0)
    n = len(rows)
    if n == 0:
        return LossTerm(0.0, g_cls, g_att)
    if preds.att_logits is not None:
        z = preds.att_logits[rows]
        log_p, log_1mp = log_sigmoid(z), log_sigmoid(-z)
    else:
        log_p, log_1mp = clamped_log(a[rows]), clamped_log(1.0 - a[rows])
    d, yy, s = mask[rows], y[rows], per_sample[rows][:, None]
    bce = -(d * (yy * log_p + (1.0 - yy) * log_1mp)).sum(axis=1) / s[:, 0]
    g_att[rows] = d * (a[rows] - yy) / (s * n)
    return LossTerm(float(bce.mean()), g_cls, g_att)


def attribute_mixture(cls_probs, mix) -> np.ndarray:
    """q(attribute | x) = sum_c p(c | x) p(attribute | c), one row per sample."""
    m = _values(mix)
    if cls_probs.shape[1] != m.shape[0]:
        raise ShapeError(f"mixture matrix has {m.shape[0]} classes, predictions have {cls_probs.shape[1]}")
    return cls_probs @ m


def loss_dm(preds: Predictions, mix, options: LossOptions = LossOptions()) -> LossTerm:
    """Distribution matching between attribute predictions and the
    class-mixture attribute distribution, averaged over the whole batch."""
    p, a = preds.cls_probs, preds.att_probs
    m = _values(mix)
    if m.shape != (p.shape[1], a.shape[1]):
        raise ShapeError(f"mixture matrix is {m.shape}, expected {(p.shape[1], a.shape[1])}")
    B = p.shape[0]
    eps = options.eps
    q = attribute_mixture(p, m)
    log_q = clamped_log(q, eps)
    terms = -a * log_q
    dl_da = -log_q
    dl_dq = -a * clamped_log_grad(q, eps)
    if options.symmetric_dm:
        log_1mq = clamped_log(1.0 - q, eps)
        terms = terms - (1.0 - a) * log_1mq
        dl_da = dl_da + log_1mq
        dl_dq = dl_dq + (1.0 - a) * clamped_log_grad(1.0 - q, eps)
    value = float(terms.sum() / B)
    g_att = _sigmoid_backward(a, dl_da / B)
    if options.dm_stop_cls_grad:
        g_cls = np.zeros_like(p)
    else:
        g_cls = _softmax_backward(p, (dl_dq @ m.T) / B)
    return LossTerm(value, g_cls, g_att)


def indicator_scores(labels: BatchLabels, iw, options: LossOptions = LossOptions()) -> np.ndarray:
    """Per-class weighted fraction of related attributes annotated active.

    Unannotated attributes count as inactive unless ``renorm_observed`` is
    set, in which case weights are renormalised over annotated attributes.
    Classes whose weights sum to zero get a score of 0.
    """
    w = _values(iw)
    mask = np.asarray(labels.att_mask, dtype=np.float64)
    y = np.asarray(labels.att_labels, dtype=np.float64) * mask
    num = y @ w.T
    if options.renorm_observed:
        den = mask @ w.T
    else:
        den = np.broadcast_to(w.sum(axis=1), num.shape)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def soft_cls_label(labels: BatchLabels, iw, options: LossOptions = LossOptions()):
    """Soft class labels built from ground-truth attribute annotations.

    Returns ``(soft, eligible)``: a B x K matrix whose rows are
    ``softmax(indicator_scores)`` and a boolean vector marking samples with at
    least one annotated attribute.  Rows of ineligible samples are left
    uniform and must not be used.
    """
    w = _values(iw)
    mask = np.asarray(labels.att_mask)
    if mask.shape[1] != w.shape[1]:
        raise ShapeError(f"indicator weights cover {w.shape[1]} attributes, labels have {mask.shape[1]}")
    eligible = mask.sum(axis=1) > 0
    return softmax(indicator_scores(labels, w, options)), eligible


def loss_sca(preds: Predictions, soft, eligible, options: LossOptions = LossOptions()) -> LossTerm:
    """Cross entropy of class predictions against soft class labels, averaged
    over eligible samples.  Soft labels are constants: no attribute gradient."""
    p = preds.cls_probs
    soft = np.asarray(soft, dtype=np.float64)
    if soft.shape != p.shape:
        raise ShapeError(f"soft labels are {soft.shape}, predictions {p.shape}")
    g_cls, g_att = _zeros(preds)
    rows = np.flatnonzero(np.asarray(eligible, dtype=bool))
    n = len(rows)
    if n == 0:
        return LossTerm(0.0, g_cls, g_att)
    log_s = clamped_log(soft[rows], options.eps)
    value = float(-(p[rows] * log_s).sum() / n)
    g_cls[rows] = _softmax_backward(p[rows], -log_s / n)
    return LossTerm(value, g_cls, g_att)


def check_lambdas(lambdas):
    lambdas = tuple(float(x) for x in lambdas)
    if len(lambdas) != 4:
        raise ConfigError(f"expected 4 loss weights (cls, att, dm, sca), got {len(lambdas)}")
    if any(not np.isfinite(x) or x < 0 for x in lambdas):
        raise ConfigError(f"loss weights must be finite and >= 0, got {lambdas}")
    return lambdas


def loss_total(preds: Predictions, labels: BatchLabels, mix=None, iw=None,
               lambdas=(1.0, 1.0, 1.0, 1.0), options: LossOptions = LossOptions()) -> LossReport:
    """Weighted sum of the four terms.

    Coupling terms are evaluated whenever their relatedness input is given,
    so zero-weighted terms are still reported; a positive weight without the
    matching input is a configuration error.
    """
    lam = check_lambdas(lambdas)
    zero = LossTerm(0.0, *_zeros(preds))
    cls_t = loss_cls(preds, labels)
    att_t = loss_att(preds, labels)
    if mix is not None:
        dm_t = loss_dm(preds, mix, options)
    elif lam[2]:
        raise ConfigError("distribution matching needs a mixture matrix")
    else:
        dm_t = zero
    if iw is not None:
        soft, eligible = soft_cls_label(labels, iw, options)
        sca_t = loss_sca(preds, soft, eligible, options)
    elif lam[3]:
        raise ConfigError("soft co-annotation needs indicator weights")
    else:
        sca_t = zero
    terms = (cls_t, att_t, dm_t, sca_t)
    total = sum(l * t.value for l, t in zip(lam, terms))
    g_cls = sum(l * t.grad_cls for l, t in zip(lam, terms))
    g_att = sum(l * t.grad_att for l, t in zip(lam, terms))
    return LossReport(cls_t.value, att_t.value, dm_t.value, sca_t.value, float(total),
                      g_cls, g_att, lam)
