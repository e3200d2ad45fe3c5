"""Partially annotated datasets: schema, CSV I/O, masked batching and the
synthetic generator for disjoint class-only / attribute-only corpora."""

from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, ParseError, ShapeError
from .losses import BatchLabels
from .numerics import SeededRng
from .relatedness import BUNDLED, RelatednessSpec, bundled, indicator_weights, load_relatedness_file


@dataclass(frozen=True)
class Schema:
    class_names: tuple
    attribute_names: tuple
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        if len(self.class_names) < 2 or len(self.attribute_names) < 1 or self.feature_dim < 1:
            raise ConfigError("schema needs >= 2 classes, >= 1 attribute and feature_dim >= 1")

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def num_attributes(self):
        return len(self.attribute_names)


@dataclass(frozen=True, eq=False)
class Sample:
    features: np.ndarray
    cls_label: int | None
    att_labels: np.ndarray
    att_mask: np.ndarray


@dataclass(eq=False)
class Dataset:
    """Column-oriented storage of samples.

    ``cls_labels`` holds -1 where a sample has no class label; attribute
    labels are zero wherever ``att_mask`` is zero.  ``cls_target`` carries
    optional soft class targets (pseudo labels) aligned with the rows.
    """

    schema: Schema
    features: np.ndarray
    cls_labels: np.ndarray
    att_labels: np.ndarray
    att_mask: np.ndarray
    ids: list = field(default=None)
    cls_target: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.cls_labels)
        K, M, d = self.schema.num_classes, self.schema.num_attributes, self.schema.feature_dim
        self.features = np.asarray(self.features, dtype=np.float64).reshape(n, d)
        self.cls_labels = np.asarray(self.cls_labels, dtype=np.int64)
        self.att_mask = np.asarray(self.att_mask, dtype=np.float64).reshape(n, M)
        self.att_labels = np.asarray(self.att_labels, dtype=np.float64).reshape(n, M) * self.att_mask
        if self.ids is None:
            self.ids = [str(i) for i in range(n)]
        if len(self.ids) != n:
            raise ShapeError("ids and samples differ in length")
        if np.any(self.cls_labels >= K) or np.any(self.cls_labels < -1):
            raise ShapeError("class label out of range")
        if self.cls_target is not None:
            self.cls_target = np.asarray(self.cls_target, dtype=np.float64).reshape(n, K)
        unlabeled = (self.cls_labels < 0) & (self.att_mask.sum(axis=1) == 0)
        if np.any(unlabeled):
            raise ShapeError(f"sample {self.ids[int(np.argmax(unlabeled))]} has no annotation at all")

    def __len__(self):
        return len(self.cls_labels)

    def __getitem__(self, i) -> Sample:
        c = int(self.cls_labels[i])
        return Sample(self.features[i], c if c >= 0 else None, self.att_labels[i], self.att_mask[i])

    @property
    def has_cls(self):
        return self.cls_labels >= 0

    @property
    def has_att(self):
        return self.att_mask.sum(axis=1) > 0

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.schema, self.features[idx], self.cls_labels[idx], self.att_labels[idx],
            self.att_mask[idx], [self.ids[i] for i in idx],
            None if self.cls_target is None else self.cls_target[idx],
        )

    def strip(self, keep_cls=True, keep_att=True) -> "Dataset":
        """Drop one kind of annotation; features are untouched."""
        n, M = len(self), self.schema.num_attributes
        return Dataset(
            self.schema, self.features,
            self.cls_labels if keep_cls else np.full(n, -1),
            self.att_labels if keep_att else np.zeros((n, M)),
            self.att_mask if keep_att else np.zeros((n, M)),
            list(self.ids),
            self.cls_target if keep_cls else None,
        )

    def labels(self, idx=None) -> BatchLabels:
        sl = slice(None) if idx is None else idx
        target = None if self.cls_target is None else self.cls_target[sl]
        return BatchLabels(self.cls_labels[sl], self.att_labels[sl], self.att_mask[sl], target)

    @staticmethod
    def concat(datasets) -> "Dataset":
        datasets = [d for d in datasets if d is not None]
        if not datasets:
            raise ConfigError("nothing to concatenate")
        schema = datasets[0].schema
        if any(d.schema != schema for d in datasets):
            raise ShapeError("datasets have different schemas")
        targets = None
        if any(d.cls_target is not None for d in datasets):
            targets = np.concatenate([_targets_or_onehot(d) for d in datasets])
        return Dataset(
            schema,
            np.concatenate([d.features for d in datasets]),
            np.concatenate([d.cls_labels for d in datasets]),
            np.concatenate([d.att_labels for d in datasets]),
            np.concatenate([d.att_mask for d in datasets]),
            [i for d in datasets for i in d.ids],
            targets,
        )


def _targets_or_onehot(d):
    if d.cls_target is not None:
        return d.cls_target
    out = np.zeros((len(d), d.schema.num_classes))
    rows = np.flatnonzero(d.has_cls)
    out[rows, d.cls_labels[rows]] = 1.0
    return out


# -- schema sidecar ---------------------------------------------------------

def dumps_schema(schema: Schema) -> str:
    return (
        "[schema]\n"
        f"classes = {', '.join(schema.class_names)}\n"
        f"attributes = {', '.join(schema.attribute_names)}\n"
        f"feature_dim = {schema.feature_dim}\n"
    )


def loads_schema(text: str) -> Schema:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
        sec = cp["schema"]
        names = lambda key: [s.strip() for s in sec[key].split(",") if s.strip()]  # noqa: E731
        return Schema(names("classes"), names("attributes"), int(sec["feature_dim"]))
    except (configparser.Error, KeyError, ValueError) as exc:
        raise ParseError(f"bad schema file: {exc}") from None


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return loads_schema(fh.read())


# -- CSV --------------------------------------------------------------------

def _header(schema):
    return (["id"] + [f"x{j}" for j in range(schema.feature_dim)] + ["cls"]
            + [f"att_{a}" for a in schema.attribute_names])


def write_dataset(dataset: Dataset) -> str:
    """CSV text; missing labels are empty cells, floats use ``repr``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(dataset.schema))
    for i in range(len(dataset)):
        c = int(dataset.cls_labels[i])
        row = [dataset.ids[i]] + [repr(float(v)) for v in dataset.features[i]]
        row.append(dataset.schema.class_names[c] if c >= 0 else "")
        row += [str(int(y)) if m else "" for y, m in zip(dataset.att_labels[i], dataset.att_mask[i])]
        w.writerow(row)
    return buf.getvalue()


def parse_dataset(text: str, schema: Schema) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError("empty CSV", 1)
    header = [h.strip() for h in rows[0]]
    if header != _header(schema):
        raise ParseError(f"header does not match schema; expected {','.join(_header(schema))}", 1)
    d, M = schema.feature_dim, schema.num_attributes
    feats, cls, att, mask, ids = [], [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(row)}", lineno)
        ids.append(row[0])
        try:
            x = [float(v) for v in row[1:1 + d]]
        except ValueError:
            raise ParseError("non-numeric feature value", lineno) from None
        if not all(math.isfinite(v) for v in x):
            raise ParseError("non-finite feature value", lineno)
        feats.append(x)
        c = row[1 + d].strip()
        if not c:
            cls.append(-1)
        elif c in schema.class_names:
            cls.append(schema.class_names.index(c))
        elif c.isdigit() and int(c) < schema.num_classes:
            cls.append(int(c))
        else:
            raise ParseError(f"unknown class {c!r}", lineno)
        ys, ms = [], []
        for cell in row[2 + d:]:
            cell = cell.strip()
            if not cell:
                ys.append(0.0)
                ms.append(0.0)
            elif cell in ("0", "1"):
                ys.append(float(cell))
                ms.append(1.0)
            else:
                raise ParseError(f"attribute value {cell!r} not in {{0, 1}}", lineno)
        if cls[-1] < 0 and not any(ms):
            raise ParseError("row has neither a class nor an attribute label", lineno)
        att.append(ys)
        mask.append(ms)
    if not ids:
        raise ParseError("no data rows", len(rows))
    return Dataset(schema, np.array(feats), np.array(cls), np.array(att).reshape(-1, M),
                   np.array(mask).reshape(-1, M), ids)


def load_dataset(path, schema: Schema) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh.read(), schema)


def save_dataset(path, dataset: Dataset):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(write_dataset(dataset))


# -- synthetic data ---------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Ground truth and split sizes for :func:`gen_synthetic`.

    Defaults give the imbalanced, non-overlapping regime: ten times more
    attribute-only than class-only samples and no jointly annotated ones.
    """

    relatedness: str = "table1_reduced"  # bundled table name or .rel path
    feature_dim: int = 16
    n_cls_only: int = 120
    n_att_only: int = 1200
    n_joint: int = 0
    n_test: int = 1200
    class_sep: float = 1.5
    att_effect: float = 1.0
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_cls_only", "n_att_only", "n_joint"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_test < 1:
            raise ConfigError("n_test must be >= 1")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if not (self.class_sep > 0 and self.noise_sd > 0 and self.att_effect >= 0):
            raise ConfigError("need class_sep > 0, noise_sd > 0, att_effect >= 0")
        if not all(map(math.isfinite, (self.class_sep, self.att_effect, self.noise_sd))):
            raise ConfigError("synthetic parameters must be finite")

    def true_relatedness(self) -> RelatednessSpec:
        if self.relatedness.removesuffix(".rel") in BUNDLED:
            return bundled(self.relatedness)
        return load_relatedness_file(self.relatedness)

    @classmethod
    def from_mapping(cls, mapping) -> "SynthConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in types:
                raise ConfigError(f"unknown synth key {key!r}")
            conv = {"int": int, "float": float, "str": str}[types[key]]
            try:
                kwargs[key] = conv(raw)
            except ValueError:
                raise ConfigError(f"synth key {key!r}: bad value {raw!r}") from None
        return cls(**kwargs)

    def to_ini(self) -> str:
        lines = ["[synth]"] + [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def attribute_probabilities(spec: RelatednessSpec) -> np.ndarray:
    """Per-class activation probability of each attribute used by the generator:
    1 for prototypical pairs, the stored weight for observational/empirical."""
    return np.array(indicator_weights(spec).values)


def gen_synthetic(cfg: SynthConfig, spec: RelatednessSpec | None = None) -> dict:
    """Draw the four splits ``train_cls_only``, ``train_att_only``,
    ``train_joint`` and ``test`` from one generative process.

    Per sample: class uniform; attribute i ~ Bernoulli(p(i | class));
    features = class centroid + att_effect * sum of active attribute
    directions + Gaussian noise.  Class centroids are orthonormal directions
    (when K <= d) scaled by ``class_sep``; attribute directions are random
    unit vectors.
    """
    spec = spec if spec is not None else cfg.true_relatedness()
    K, M, d = spec.num_classes, spec.num_attributes, cfg.feature_dim
    schema = Schema(spec.class_names, spec.attribute_names, d)
    probs = attribute_probabilities(spec)
    rng = SeededRng(cfg.seed)

    raw = rng.normal(size=(d, max(K, 1)))
    if K <= d:
        q, r = np.linalg.qr(raw)
        centroid_dirs = (q * np.sign(np.diag(r))).T
    else:
        centroid_dirs = (raw / np.linalg.norm(raw, axis=0)).T
    centroids = cfg.class_sep * centroid_dirs
    att_dirs = rng.normal(size=(M, d))
    att_dirs /= np.linalg.norm(att_dirs, axis=1, keepdims=True)

    def draw(n, prefix):
        c = rng.integers(0, K, size=n)
        y = (rng.random(size=(n, M)) < probs[c]).astype(np.float64)
        x = centroids[c] + cfg.att_effect * (y @ att_dirs) + rng.normal(0.0, cfg.noise_sd, size=(n, d))
        return Dataset(schema, x, c, y, np.ones((n, M)), [f"{prefix}{i}" for i in range(n)])

    cls_only = draw(cfg.n_cls_only, "c").strip(keep_att=False)
    att_only = draw(cfg.n_att_only, "a").strip(keep_cls=False)
    joint = draw(cfg.n_joint, "j")
    test = draw(cfg.n_test, "t")
    return {"train_cls_only": cls_only, "train_att_only": att_only, "train_joint": joint, "test": test}


# -- batching ---------------------------------------------------------------

def batches(datasets, batch_size: int, rng: SeededRng, epochs=None):
    """Yield ``(features, BatchLabels, indices)`` from the pooled datasets.

    The pool is reshuffled every epoch; the last batch of an epoch may be
    short.  Runs forever unless ``epochs`` is given.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    pool = datasets if isinstance(datasets, Dataset) else Dataset.concat(datasets)
    n = len(pool)
    if n == 0:
        raise ConfigError("no samples to batch")
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield pool.features[idx], pool.labels(idx), idx
        epoch += 1
