"""Class/attribute relatedness: loading, inference, and the derived matrices.

A :class:`RelatednessSpec` records, for every (class, attribute) pair, what
kind of relation holds and with what weight.  Two matrices are derived from
it: the mixture matrix ``p(attribute | class)`` used by distribution
matching, and the indicator weights used to build soft class labels from
attribute annotations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import InferenceError, ParseError


class Kind(enum.IntEnum):
    NONE = 0
    PROTOTYPICAL = 1
    OBSERVATIONAL = 2
    EMPIRICAL = 3


@dataclass(frozen=True, eq=False)
class RelatednessSpec:
    class_names: tuple
    attribute_names: tuple
    kinds: np.ndarray    # K x M, int8 codes of Kind
    weights: np.ndarray  # K x M float64

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        kinds = np.array(self.kinds, dtype=np.int8)
        weights = np.array(self.weights, dtype=np.float64)
        kinds.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "weights", weights)
        self._validate()

    def _validate(self):
        K, M = len(self.class_names), len(self.attribute_names)
        if K < 2:
            raise ValueError(f"need at least 2 classes, got {K}")
        if M < 1:
            raise ValueError("need at least 1 attribute")
        for label, names in (("class", self.class_names), ("attribute", self.attribute_names)):
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {label} names")
        if self.kinds.shape != (K, M) or self.weights.shape != (K, M):
            raise ValueError(f"kinds/weights must be {K}x{M}")
        k, w = self.kinds, self.weights
        if not np.all(np.isin(k, [int(x) for x in Kind])):
            raise ValueError("unknown relation kind code")
        if np.any(w[k == Kind.PROTOTYPICAL] != 1.0):
            raise ValueError("prototypical entries must have weight 1")
        if np.any(w[k == Kind.NONE] != 0.0):
            raise ValueError("unrelated entries must have weight 0")
        graded = (k == Kind.OBSERVATIONAL) | (k == Kind.EMPIRICAL)
        if np.any((w[graded] <= 0.0) | (w[graded] > 1.0)):
            raise ValueError("observational/empirical weights must lie in (0, 1]")

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def num_attributes(self):
        return len(self.attribute_names)

    def entry(self, cls, att):
        """(Kind, weight) for a pair given by names or indices."""
        c = self.class_names.index(cls) if isinstance(cls, str) else int(cls)
        a = self.attribute_names.index(att) if isinstance(att, str) else int(att)
        return Kind(int(self.kinds[c, a])), float(self.weights[c, a])

    def is_empirical(self):
        return bool(np.any(self.kinds == Kind.EMPIRICAL))

    def permute_attributes(self, order):
        order = list(order)
        return RelatednessSpec(
            self.class_names,
            [self.attribute_names[i] for i in order],
            self.kinds[:, order],
            self.weights[:, order],
        )


@dataclass(frozen=True, eq=False)
class MixtureMatrix:
    values: np.ndarray  # K x M, p(attribute | class)


@dataclass(frozen=True, eq=False)
class IndicatorWeights:
    values: np.ndarray    # K x M
    row_sums: np.ndarray  # K

    @property
    def zero_rows(self):
        """Boolean mask of classes with no related attribute at all."""
        return self.row_sums == 0.0


def _split_names(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def load_relatedness(text: str) -> RelatednessSpec:
    """Parse the ``.rel`` text format.

    Header lines ``classes: ...`` and ``attributes: ...`` come first, then one
    line per class, e.g. ``happiness: proto=AU12,AU25; obs=AU6:0.51`` or
    ``happiness: emp=AU12:0.82``.  ``#`` starts a comment.  Classes without a
    line, and attributes not listed for a class, are unrelated (weight 0).
    """
    class_names = attribute_names = None
    kinds = weights = None
    seen_rows = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ParseError(f"expected '<name>: ...', got {line!r}", lineno)
        head, body = (s.strip() for s in line.split(":", 1))
        if head == "classes" and class_names is None:
            class_names = _split_names(body)
            if len(class_names) < 2:
                raise ParseError("fewer than 2 classes", lineno)
            if len(set(class_names)) != len(class_names):
                raise ParseError("duplicate class name", lineno)
            continue
        if head == "attributes" and attribute_names is None:
            attribute_names = _split_names(body)
            if not attribute_names:
                raise ParseError("no attributes declared", lineno)
            if len(set(attribute_names)) != len(attribute_names):
                raise ParseError("duplicate attribute name", lineno)
            continue
        if class_names is None or attribute_names is None:
            raise ParseError("'classes:' and 'attributes:' headers must come first", lineno)
        if kinds is None:
            kinds = np.zeros((len(class_names), len(attribute_names)), dtype=np.int8)
            weights = np.zeros(kinds.shape)
            listed = np.zeros(kinds.shape, dtype=bool)
        if head not in class_names:
            raise ParseError(f"unknown class {head!r}", lineno)
        c = class_names.index(head)
        if c in seen_rows:
            raise ParseError(f"class {head!r} listed twice", lineno)
        seen_rows.add(c)
        for part in body.split(";"):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ParseError(f"expected proto=/obs=/emp=, got {part!r}", lineno)
            key, items = (s.strip() for s in part.split("=", 1))
            if key not in ("proto", "obs", "emp"):
                raise ParseError(f"unknown relation kind {key!r}", lineno)
            for item in _split_names(items):
                if key == "proto":
                    name, w = item, 1.0
                else:
                    if ":" not in item:
                        raise ParseError(f"{key} entry {item!r} needs ':<weight>'", lineno)
                    name, wtext = (s.strip() for s in item.rsplit(":", 1))
                    try:
                        w = float(wtext)
                    except ValueError:
                        raise ParseError(f"bad weight {wtext!r}", lineno) from None
                    if not 0.0 <= w <= 1.0:
                        raise ParseError(f"weight {w} outside [0, 1]", lineno)
                    if key == "obs" and w == 0.0:
                        raise ParseError("observational weight must be > 0", lineno)
                if name not in attribute_names:
                    raise ParseError(f"unknown attribute {name!r}", lineno)
                a = attribute_names.index(name)
                if listed[c, a]:
                    raise ParseError(f"duplicate pair ({head}, {name})", lineno)
                listed[c, a] = True
                if w == 0.0:
                    continue
                kinds[c, a] = {"proto": Kind.PROTOTYPICAL, "obs": Kind.OBSERVATIONAL,
                               "emp": Kind.EMPIRICAL}[key]
                weights[c, a] = w
    if class_names is None or attribute_names is None:
        raise ParseError("missing 'classes:' or 'attributes:' header")
    if kinds is None:
        kinds = np.zeros((len(class_names), len(attribute_names)), dtype=np.int8)
        weights = np.zeros(kinds.shape)
    return RelatednessSpec(class_names, attribute_names, kinds, weights)


def dump_relatedness(spec: RelatednessSpec) -> str:
    """Serialise to the ``.rel`` format; ``load_relatedness`` inverts it exactly."""
    lines = [
        "classes: " + ", ".join(spec.class_names),
        "attributes: " + ", ".join(spec.attribute_names),
    ]
    for c, cname in enumerate(spec.class_names):
        parts = []
        for key, kind in (("proto", Kind.PROTOTYPICAL), ("obs", Kind.OBSERVATIONAL),
                          ("emp", Kind.EMPIRICAL)):
            idx = np.flatnonzero(spec.kinds[c] == kind)
            if not len(idx):
                continue
            if kind == Kind.PROTOTYPICAL:
                items = [spec.attribute_names[a] for a in idx]
            else:
                items = [f"{spec.attribute_names[a]}:{float(spec.weights[c, a])!r}" for a in idx]
            parts.append(f"{key}=" + ",".join(items))
        lines.append(f"{cname}: " + "; ".join(parts))
    return "\n".join(lines) + "\n"


def load_relatedness_file(path) -> RelatednessSpec:
    with open(path, encoding="utf-8") as fh:
        return load_relatedness(fh.read())


BUNDLED = ("table1_domain", "table1_affwild2", "table1_reduced")


def bundled(name: str) -> RelatednessSpec:
    """Load one of the relatedness tables shipped with the package."""
    if name.endswith(".rel"):
        name = name[:-4]
    if name not in BUNDLED:
        raise KeyError(f"no bundled relatedness named {name!r}; choose from {BUNDLED}")
    text = resources.files("coupled_mtl").joinpath("data", f"{name}.rel").read_text("utf-8")
    return load_relatedness(text)


def mixture_matrix(spec: RelatednessSpec, threshold=None) -> MixtureMatrix:
    """``p(attribute | class)`` for distribution matching.

    Prototypical and observational pairs count as fully related (1.0).
    Empirical weights pass through unchanged, or are binarised at
    ``threshold`` (weight >= threshold -> 1) when one is given.
    """
    k, w = spec.kinds, spec.weights
    out = np.where((k == Kind.PROTOTYPICAL) | (k == Kind.OBSERVATIONAL), 1.0, 0.0)
    emp = k == Kind.EMPIRICAL
    if threshold is None:
        out = np.where(emp, w, out)
    else:
        out = np.where(emp, (w >= threshold).astype(np.float64), out)
    out.setflags(write=False)
    return MixtureMatrix(out)


def indicator_weights(spec: RelatednessSpec) -> IndicatorWeights:
    # prototypical weights are stored as 1.0, so the weight array is already w_au
    values = np.array(spec.weights, dtype=np.float64)
    row_sums = values.sum(axis=1)
    values.setflags(write=False)
    row_sums.setflags(write=False)
    return IndicatorWeights(values, row_sums)


def infer_relatedness(dataset) -> RelatednessSpec:
    """Estimate ``p(attribute | class)`` by counting co-annotations.

    Entry (c, i) is the number of samples of class ``c`` with attribute ``i``
    annotated active, divided by the number of samples of class ``c`` with
    attribute ``i`` annotated at all.  Samples lacking a class label are
    ignored.  Raises :class:`InferenceError` when some pair has no eligible
    sample.
    """
    schema = dataset.schema
    K, M = len(schema.class_names), len(schema.attribute_names)
    cls = np.asarray(dataset.cls_labels)
    labelled = cls >= 0
    onehot = np.zeros((len(cls), K))
    onehot[np.flatnonzero(labelled), cls[labelled]] = 1.0
    mask = np.asarray(dataset.att_mask, dtype=np.float64)
    active = np.asarray(dataset.att_labels, dtype=np.float64) * mask
    eligible = onehot.T @ mask
    positive = onehot.T @ active
    if np.any(eligible == 0):
        c, a = np.argwhere(eligible == 0)[0]
        raise InferenceError(
            f"class {schema.class_names[c]!r} has no sample annotated for "
            f"attribute {schema.attribute_names[a]!r}"
        )
    weights = positive / eligible
    kinds = np.where(weights > 0, Kind.EMPIRICAL, Kind.NONE).astype(np.int8)
    return RelatednessSpec(schema.class_names, schema.attribute_names, kinds, weights)
