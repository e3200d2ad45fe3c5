"""Training runs for the five experiment modes."""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..data import Dataset, Schema, batches, gen_synthetic, load_dataset, load_schema
from ..errors import ConfigError, DivergenceError, InvalidInputError, ShapeError
from ..losses import loss_total
from ..metrics import (
    METRIC_NAMES,
    TaskMetrics,
    attribute_metrics,
    classification_metrics,
    metrics_rows,
    write_metrics_csv,
)
from ..model import MlpConfig, MlpParams, backward, forward, init_params, predict, save_checkpoint
from ..numerics import SeededRng
from ..relatedness import (
    RelatednessSpec,
    indicator_weights,
    infer_relatedness,
    load_relatedness_file,
    mixture_matrix,
)
from .config import ExperimentConfig
from .optim import make_optimizer

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("l_cls", "l_att", "l_dm", "l_sca", "l_total")
TASKS = ("cls", "att")
RUNLOG_COLUMNS = ("step",) + LOSS_COLUMNS + tuple(f"{t}_{m}" for t in TASKS for m in METRIC_NAMES)


@dataclass
class DataBundle:
    schema: Schema
    splits: dict                      # split name -> Dataset
    true_relatedness: RelatednessSpec | None = None

    def train_sets(self, mode):
        cls_only = self.splits.get("train_cls_only")
        att_only = self.splits.get("train_att_only")
        joint = self.splits.get("train_joint")
        if mode == "st_cls":
            chosen = [cls_only, joint]
        elif mode == "st_att":
            chosen = [att_only, joint]
        else:
            chosen = [cls_only, att_only, joint]
        chosen = [d for d in chosen if d is not None and len(d)]
        if not chosen:
            raise ConfigError(f"mode {mode}: no training data")
        return chosen

    @property
    def test(self):
        if "test" not in self.splits:
            raise ConfigError("no test split configured")
        return self.splits["test"]


def load_data(cfg: ExperimentConfig) -> DataBundle:
    if cfg.data.files:
        schema = load_schema(cfg.data.schema)
        splits = {split: load_dataset(p, schema) for split, p in cfg.data.files}
        return DataBundle(schema, splits)
    synth = cfg.data.synth
    spec = synth.true_relatedness()
    splits = gen_synthetic(synth, spec)
    return DataBundle(splits["test"].schema, splits, spec)


def resolve_relatedness(cfg: ExperimentConfig, data: DataBundle):
    """Mixture matrix and indicator weights for the configured source, or
    ``(None, None)`` when no source is configured."""
    src = cfg.relatedness
    if src.kind == "none":
        return None, None
    if src.kind == "oracle":
        spec = data.true_relatedness
        if spec is None:
            raise ConfigError("relatedness source 'oracle' needs synthetic data")
    elif src.kind == "file":
        spec = load_relatedness_file(src.path)
    else:
        if src.path in data.splits:
            ds = data.splits[src.path]
        else:
            ds = load_dataset(src.path, data.schema)
        spec = infer_relatedness(ds)
    if (spec.class_names, spec.attribute_names) != (data.schema.class_names, data.schema.attribute_names):
        raise ShapeError("relatedness class/attribute names do not match the data schema")
    return mixture_matrix(spec, src.threshold), indicator_weights(spec)


@dataclass
class RunLog:
    records: list = field(default_factory=list)  # dicts keyed by RUNLOG_COLUMNS
    checkpoint: str = ""

    def add(self, step, losses, metrics):
        if self.records and step <= self.records[-1]["step"]:
            raise ValueError("run log steps must increase")
        rec = {"step": step, **losses}
        for task, tm in metrics.items():
            for name, value in tm.as_dict().items():
                rec[f"{task}_{name}"] = value
        self.records.append(rec)

    def final_metrics(self):
        rec = self.records[-1]
        out = {}
        for task in TASKS:
            vals = [rec.get(f"{task}_{m}") for m in METRIC_NAMES]
            if all(v is not None for v in vals):
                out[task] = TaskMetrics(*vals)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUNLOG_COLUMNS)
        for rec in self.records:
            w.writerow([rec["step"]] + [
                "" if rec.get(c) is None else repr(float(rec[c])) for c in RUNLOG_COLUMNS[1:]
            ])
        return buf.getvalue()


@dataclass
class TrainResult:
    log: RunLog
    params: MlpParams
    model: MlpConfig
    initial_params: MlpParams
    metrics: dict
    cfg: ExperimentConfig


def model_config(cfg: ExperimentConfig, schema: Schema) -> MlpConfig:
    return MlpConfig(schema.feature_dim, schema.num_classes, schema.num_attributes,
                     cfg.hidden_dims, cfg.seed)


def evaluate(params: MlpParams, dataset: Dataset, tasks=TASKS) -> dict:
    """Metrics for each task the dataset annotates (argmax classes,
    attributes thresholded at 0.5)."""
    if dataset.schema.feature_dim != params.input_dim:
        raise ShapeError("dataset feature width does not match the model")
    preds = predict(params, dataset.features)
    out = {}
    if "cls" in tasks and np.any(dataset.has_cls):
        rows = dataset.has_cls
        out["cls"] = classification_metrics(
            preds.cls_probs[rows].argmax(axis=1), dataset.cls_labels[rows], dataset.schema.num_classes)
    if "att" in tasks and dataset.att_mask.sum() > 0:
        out["att"] = attribute_metrics(preds.att_probs > 0.5, dataset.att_labels, dataset.att_mask)
    return out


def mode_tasks(mode):
    return {"st_cls": ("cls",), "st_att": ("att",)}.get(mode, TASKS)


def _pool_losses(params, pool, mix, iw, lambdas, options):
    preds, _ = forward(params, pool.features)
    rep = loss_total(preds, pool.labels(), mix, iw, lambdas, options)
    return rep.as_dict()


def train(cfg: ExperimentConfig, data: DataBundle | None = None, train_sets=None) -> TrainResult:
    """Minimise the mode's weighted objective for ``cfg.steps`` minibatch updates.

    Losses in the run log are evaluated on the whole training pool; metrics
    on the test split.  Raises :class:`DivergenceError` on a non-finite loss.
    """
    if cfg.mode == "st_teacher_mt":
        return student_teacher_pipeline(cfg, data)
    data = data if data is not None else load_data(cfg)
    pool = Dataset.concat(train_sets if train_sets is not None else data.train_sets(cfg.mode))
    test = data.test
    lambdas = cfg.effective_lambdas()
    mix, iw = resolve_relatedness(cfg, data) if lambdas[2] or lambdas[3] else (None, None)
    # a switched-off coupling term is not evaluated at all, so a coupled run
    # with zero coupling weights is step-for-step the uncoupled run
    mix = mix if lambdas[2] > 0 else None
    iw = iw if lambdas[3] > 0 else None
    mcfg = model_config(cfg, data.schema)
    root = SeededRng(cfg.seed)
    params = init_params(mcfg, root.child(0))
    initial = params.copy()
    opt = make_optimizer(cfg.optimizer)
    tasks = mode_tasks(cfg.mode)
    stream = batches(pool, cfg.optimizer.batch_size, root.child(1))

    runlog = RunLog()
    runlog.add(0, _pool_losses(params, pool, mix, iw, lambdas, cfg.loss), evaluate(params, test, tasks))
    for step in range(1, cfg.steps + 1):
        x, labels, _ = next(stream)
        try:
            preds, cache = forward(params, x)
        except InvalidInputError:
            raise DivergenceError(f"non-finite network outputs in {cfg.name()}", step) from None
        rep = loss_total(preds, labels, mix, iw, lambdas, cfg.loss)
        if not np.isfinite(rep.l_total):
            raise DivergenceError(f"non-finite training loss {rep.l_total} in {cfg.name()}", step)
        grads = backward(params, cache, rep.grad_cls_logits, rep.grad_att_logits)
        opt.step(params.arrays(), grads.arrays())
        if step % cfg.eval_every == 0 or step == cfg.steps:
            try:
                losses = _pool_losses(params, pool, mix, iw, lambdas, cfg.loss)
            except InvalidInputError:
                losses = {"l_total": float("nan")}
            if not np.isfinite(losses["l_total"]):
                raise DivergenceError(f"non-finite pool loss in {cfg.name()}", step)
            runlog.add(step, losses, evaluate(params, test, tasks))
    log.debug("finished %s after %d steps", cfg.name(), cfg.steps)
    return TrainResult(runlog, params, mcfg, initial, runlog.final_metrics(), cfg)


def pseudo_label(data: DataBundle, cls_teacher: MlpParams, att_teacher: MlpParams) -> list:
    """Complete the annotations of the single-task splits with teacher outputs.

    Attribute-only samples get the class teacher's probabilities as soft
    class targets; class-only samples get the attribute teacher's predictions
    thresholded at 0.5, with a full mask.
    """
    cls_only = data.splits.get("train_cls_only")
    att_only = data.splits.get("train_att_only")
    if cls_only is None or att_only is None or not len(cls_only) or not len(att_only):
        raise ConfigError("student-teacher needs both class-only and attribute-only training splits")
    M = data.schema.num_attributes
    soft_cls = predict(cls_teacher, att_only.features).cls_probs
    att_filled = Dataset(
        data.schema, att_only.features, soft_cls.argmax(axis=1), att_only.att_labels,
        att_only.att_mask, list(att_only.ids), soft_cls)
    att_pred = (predict(att_teacher, cls_only.features).att_probs > 0.5).astype(np.float64)
    cls_filled = Dataset(
        data.schema, cls_only.features, cls_only.cls_labels, att_pred,
        np.ones((len(cls_only), M)), list(cls_only.ids))
    out = [cls_filled, att_filled]
    joint = data.splits.get("train_joint")
    if joint is not None and len(joint):
        out.append(joint)
    return out


def student_teacher_pipeline(cfg: ExperimentConfig, data: DataBundle | None = None,
                             teachers=None) -> TrainResult:
    """Single-task teachers pseudo-label each other's corpus, then a plain
    multi-task student trains on the completed union.

    ``teachers`` may supply already trained ``(cls_params, att_params)``.
    """
    data = data if data is not None else load_data(cfg)
    if teachers is None:
        cls_t = train(cfg.with_(mode="st_cls"), data).params
        att_t = train(cfg.with_(mode="st_att"), data).params
    else:
        cls_t, att_t = teachers
    union = pseudo_label(data, cls_t, att_t)
    result = train(cfg.with_(mode="mt_nc", run_id=cfg.name()), data, train_sets=union)
    result.cfg = cfg
    return result


def write_run(result: TrainResult, out_dir) -> dict:
    """Write ``runlog.csv``, ``metrics.csv`` and ``checkpoint.json`` for one
    run into ``out_dir``; returns the paths by name."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = result.cfg
    paths = {name: os.path.join(out_dir, name) for name in ("runlog.csv", "metrics.csv", "checkpoint.json")}
    result.log.checkpoint = paths["checkpoint.json"]
    meta = {"run_id": cfg.name(), "mode": cfg.mode, "seed": cfg.seed, "steps": cfg.steps}
    save_checkpoint(paths["checkpoint.json"], result.params, result.model, meta)
    with open(paths["runlog.csv"], "w", encoding="utf-8", newline="") as fh:
        fh.write(result.log.to_csv())
    with open(paths["metrics.csv"], "w", encoding="utf-8", newline="") as fh:
        fh.write(write_metrics_csv(metrics_rows(cfg.name(), cfg.mode, cfg.seed, result.metrics)))
    return paths


def dump_predictions(params: MlpParams, dataset: Dataset) -> str:
    """CSV of per-sample class probabilities and attribute probabilities."""
    preds = predict(params, dataset.features)
    schema = dataset.schema
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + [f"p_{c}" for c in schema.class_names] + [f"a_{a}" for a in schema.attribute_names])
    for i in range(len(dataset)):
        w.writerow([dataset.ids[i]] + [repr(float(v)) for v in preds.cls_probs[i]]
                   + [repr(float(v)) for v in preds.att_probs[i]])
    return buf.getvalue()
