"""Two-headed MLP: a shared ReLU trunk feeding a softmax class head and a
sigmoid attribute head.  Forward and backward passes are written out by hand.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, ShapeError, StateError
from .losses import Predictions
from .numerics import SeededRng

CHECKPOINT_FORMAT = "coupled-mtl-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    num_classes: int
    num_attributes: int
    hidden_dims: tuple = ()
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        for name in ("input_dim", "num_classes", "num_attributes"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden layer widths must be >= 1")


@dataclass(eq=False)
class MlpParams:
    """Weights are stored (fan_in, fan_out) so a layer is ``x @ W + b``."""

    trunk_w: list = field(default_factory=list)
    trunk_b: list = field(default_factory=list)
    cls_w: np.ndarray = None
    cls_b: np.ndarray = None
    att_w: np.ndarray = None
    att_b: np.ndarray = None

    def arrays(self):
        """All parameter arrays in a fixed order (trunk layers, class head, attribute head)."""
        out = []
        for w, b in zip(self.trunk_w, self.trunk_b):
            out += [w, b]
        return out + [self.cls_w, self.cls_b, self.att_w, self.att_b]

    def names(self):
        out = []
        for i in range(len(self.trunk_w)):
            out += [f"trunk{i}.w", f"trunk{i}.b"]
        return out + ["cls.w", "cls.b", "att.w", "att.b"]

    @classmethod
    def from_arrays(cls, arrays, n_trunk):
        arrays = list(arrays)
        trunk = arrays[: 2 * n_trunk]
        rest = arrays[2 * n_trunk:]
        return cls(trunk[0::2], trunk[1::2], *rest)

    def copy(self):
        return MlpParams.from_arrays([a.copy() for a in self.arrays()], len(self.trunk_w))

    def zeros_like(self):
        return MlpParams.from_arrays([np.zeros_like(a) for a in self.arrays()], len(self.trunk_w))

    def equals(self, other):
        mine, theirs = self.arrays(), other.arrays()
        return len(mine) == len(theirs) and all(np.array_equal(a, b) for a, b in zip(mine, theirs))

    @property
    def input_dim(self):
        return (self.trunk_w[0] if self.trunk_w else self.cls_w).shape[0]


def init_params(cfg: MlpConfig, rng: SeededRng | None = None) -> MlpParams:
    """He-normal weights (variance 2 / fan_in), zero biases."""
    rng = rng if rng is not None else SeededRng(cfg.init_seed)

    def layer(fan_in, fan_out):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        return w, np.zeros(fan_out)

    params = MlpParams()
    width = cfg.input_dim
    for h in cfg.hidden_dims:
        w, b = layer(width, h)
        params.trunk_w.append(w)
        params.trunk_b.append(b)
        width = h
    params.cls_w, params.cls_b = layer(width, cfg.num_classes)
    params.att_w, params.att_b = layer(width, cfg.num_attributes)
    return params


@dataclass(eq=False)
class ForwardCache:
    x: np.ndarray
    pre: list     # trunk pre-activations
    post: list    # trunk activations, post[-1] feeds the heads
    preds: Predictions


def forward(params: MlpParams, x) -> tuple[Predictions, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"input has shape {x.shape}, model expects (B, {params.input_dim})")
    h = x
    pre, post = [], []
    for w, b in zip(params.trunk_w, params.trunk_b):
        z = h @ w + b
        h = np.maximum(z, 0.0)
        pre.append(z)
        post.append(h)
    preds = Predictions.from_logits(h @ params.cls_w + params.cls_b, h @ params.att_w + params.att_b)
    return preds, ForwardCache(x, pre, post, preds)


def backward(params: MlpParams, cache: ForwardCache, grad_cls_logits, grad_att_logits) -> MlpParams:
    """Reverse-mode gradients of all parameters given logit gradients."""
    g_cls = np.asarray(grad_cls_logits, dtype=np.float64)
    g_att = np.asarray(grad_att_logits, dtype=np.float64)
    B = cache.x.shape[0]
    if g_cls.shape != (B, params.cls_w.shape[1]) or g_att.shape != (B, params.att_w.shape[1]):
        raise StateError(
            f"upstream gradients {g_cls.shape}/{g_att.shape} do not match the cached batch of {B}"
        )
    h = cache.post[-1] if cache.post else cache.x
    grads = MlpParams()
    grads.cls_w, grads.cls_b = h.T @ g_cls, g_cls.sum(axis=0)
    grads.att_w, grads.att_b = h.T @ g_att, g_att.sum(axis=0)
    dh = g_cls @ params.cls_w.T + g_att @ params.att_w.T
    trunk_w, trunk_b = [], []
    for i in reversed(range(len(params.trunk_w))):
        dz = dh * (cache.pre[i] > 0)
        below = cache.post[i - 1] if i > 0 else cache.x
        trunk_w.append(below.T @ dz)
        trunk_b.append(dz.sum(axis=0))
        if i > 0:
            dh = dz @ params.trunk_w[i].T
    grads.trunk_w, grads.trunk_b = trunk_w[::-1], trunk_b[::-1]
    return grads


def predict(params: MlpParams, x) -> Predictions:
    return forward(params, x)[0]


# checkpoints: JSON with the config echoed and every float stored as a hex
# literal, so a save/load round trip is bit-exact and the bytes are stable.

def dumps_checkpoint(params: MlpParams, cfg: MlpConfig, meta=None) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg) | {"hidden_dims": list(cfg.hidden_dims)},
        "meta": meta or {},
        "params": [
            {"name": n, "shape": list(a.shape), "values": [float(v).hex() for v in a.ravel()]}
            for n, a in zip(params.names(), params.arrays())
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def loads_checkpoint(text: str):
    """Returns ``(params, cfg, meta)``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint is not valid JSON: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError("not a coupled-mtl checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {doc.get('version')}")
    cfg = MlpConfig(**doc["config"])
    arrays = [
        np.array([float.fromhex(v) for v in p["values"]], dtype=np.float64).reshape(p["shape"])
        for p in doc["params"]
    ]
    params = MlpParams.from_arrays(arrays, len(cfg.hidden_dims))
    expected = init_params(cfg, SeededRng(0))
    for a, b, n in zip(params.arrays(), expected.arrays(), expected.names()):
        if a.shape != b.shape:
            raise ParseError(f"parameter {n} has shape {a.shape}, config implies {b.shape}")
    return params, cfg, doc.get("meta", {})


def save_checkpoint(path, params, cfg, meta=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_checkpoint(params, cfg, meta))


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return loads_checkpoint(fh.read())
