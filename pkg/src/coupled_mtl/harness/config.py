"""Experiment configuration and its INI-style file format.

Example::

    [experiment]
    mode = mt_c
    seed = 0
    steps = 1500

    [relatedness]
    source = oracle

    [synth]
    n_cls_only = 120
"""

from __future__ import annotations

import configparser
from importlib import resources
import os
from dataclasses import dataclass, field, fields, replace

from ..errors import ConfigError
from ..losses import LossOptions, check_lambdas
from ..data import SynthConfig
from ..relatedness import BUNDLED

MODES = ("st_cls", "st_att", "mt_nc", "mt_c", "st_teacher_mt")
RELATEDNESS_SOURCES = ("none", "oracle", "file", "empirical")
SPLITS = ("train_cls_only", "train_att_only", "train_joint", "test")


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.name not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.name!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("need 0 <= beta1, beta2 < 1 and eps > 0")


@dataclass(frozen=True)
class RelatednessSource:
    """``oracle`` uses the generator's ground truth (synthetic data only);
    ``file`` reads a ``.rel`` file; ``empirical`` counts co-annotations in a
    dataset, given as a split name or a CSV path."""

    kind: str = "none"
    path: str = ""
    threshold: float | None = None

    def __post_init__(self):
        if self.kind not in RELATEDNESS_SOURCES:
            raise ConfigError(f"relatedness source must be one of {RELATEDNESS_SOURCES}")
        if self.kind in ("file", "empirical") and not self.path:
            raise ConfigError(f"relatedness source {self.kind!r} needs a path")


@dataclass(frozen=True)
class DataConfig:
    synth: SynthConfig | None = None
    schema: str = ""
    files: tuple = ()  # (split, path) pairs

    def __post_init__(self):
        if self.synth is None and not self.files:
            raise ConfigError("data: give either a [synth] section or dataset files")
        if self.files and not self.schema:
            raise ConfigError("data: dataset files need a schema file")
        for split, _ in self.files:
            if split not in SPLITS:
                raise ConfigError(f"unknown data split {split!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "mt_c"
    lambdas: tuple = (1.0, 1.0, 1.0, 1.0)
    relatedness: RelatednessSource = field(default_factory=lambda: RelatednessSource("oracle"))
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss: LossOptions = field(default_factory=LossOptions)
    hidden_dims: tuple = (32,)
    seed: int = 0
    steps: int = 1000
    eval_every: int = 250
    data: DataConfig = field(default_factory=lambda: DataConfig(synth=SynthConfig()))
    run_id: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "lambdas", check_lambdas(self.lambdas))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.steps < 1 or self.eval_every < 1:
            raise ConfigError("steps and eval_every must be >= 1")
        if self.mode == "mt_c" and self.relatedness.kind == "none":
            raise ConfigError("mode mt_c needs a relatedness source")
        if self.relatedness.kind == "oracle" and self.data.synth is None:
            raise ConfigError("relatedness source 'oracle' needs synthetic data")

    def effective_lambdas(self, mode=None):
        """Loss weights after the mode switches heads / coupling off."""
        lc, la, ldm, lsca = self.lambdas
        mode = mode or self.mode
        return {
            "st_cls": (lc, 0.0, 0.0, 0.0),
            "st_att": (0.0, la, 0.0, 0.0),
            "mt_nc": (lc, la, 0.0, 0.0),
            "st_teacher_mt": (lc, la, 0.0, 0.0),
            "mt_c": (lc, la, ldm, lsca),
        }[mode]

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def name(self):
        return self.run_id or f"{self.mode}_seed{self.seed}"


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _section(cp, name):
    return dict(cp[name]) if cp.has_section(name) else {}


def _take(mapping, key, conv, default):
    if key not in mapping:
        return default
    raw = mapping.pop(key)
    try:
        return conv(raw)
    except (ValueError, TypeError):
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def _reject_leftovers(section, mapping):
    if mapping:
        raise ConfigError(f"[{section}]: unknown keys {sorted(mapping)}")


def _ints(text):
    return tuple(int(s) for s in str(text).replace(",", " ").split())


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI text.

    Relative paths are resolved against ``base_dir``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    known = {"experiment", "loss", "optimizer", "model", "relatedness", "data", "synth"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")

    def path(p):
        return p if not p or os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))

    exp = _section(cp, "experiment")
    defaults = ExperimentConfig.__dataclass_fields__
    mode = _take(exp, "mode", str, "mt_c")
    seed = _take(exp, "seed", int, 0)
    steps = _take(exp, "steps", int, defaults["steps"].default)
    eval_every = _take(exp, "eval_every", int, defaults["eval_every"].default)
    run_id = _take(exp, "run_id", str, "")
    _reject_leftovers("experiment", exp)

    ls = _section(cp, "loss")
    lambdas = tuple(_take(ls, f"lambda_{k}", float, 1.0) for k in ("cls", "att", "dm", "sca"))
    loss = LossOptions(
        eps=_take(ls, "eps", float, LossOptions.eps),
        symmetric_dm=_take(ls, "symmetric_dm", _bool, False),
        dm_stop_cls_grad=_take(ls, "dm_stop_cls_grad", _bool, False),
        renorm_observed=_take(ls, "renorm_observed", _bool, False),
    )
    _reject_leftovers("loss", ls)

    op = _section(cp, "optimizer")
    convert = {"str": str, "int": int, "float": float}
    optimizer = OptimizerConfig(**{f.name: _take(op, f.name, convert[f.type], f.default)
                                   for f in fields(OptimizerConfig)})
    _reject_leftovers("optimizer", op)

    md = _section(cp, "model")
    hidden = _take(md, "hidden_dims", _ints, defaults["hidden_dims"].default)
    _reject_leftovers("model", md)

    rl = _section(cp, "relatedness")
    kind = _take(rl, "source", str, "oracle" if cp.has_section("synth") or "data" not in cp else "none")
    rpath = _take(rl, "path", str, "")
    if kind == "file" or (kind == "empirical" and rpath.endswith(".csv")):
        rpath = path(rpath)
    threshold = _take(rl, "threshold", float, None)
    _reject_leftovers("relatedness", rl)
    relatedness = RelatednessSource(kind, rpath, threshold)

    dt = _section(cp, "data")
    schema = path(_take(dt, "schema", str, ""))
    files = tuple((split, path(_take(dt, split, str, ""))) for split in SPLITS if split in dt)
    _reject_leftovers("data", dt)
    synth = None
    if cp.has_section("synth"):
        sy = _section(cp, "synth")
        if "relatedness" in sy and sy["relatedness"].removesuffix(".rel") not in BUNDLED:
            sy["relatedness"] = path(sy["relatedness"])
        synth = SynthConfig.from_mapping(sy)
    elif not files:
        synth = SynthConfig()
    data = DataConfig(synth=synth, schema=schema, files=files)

    return ExperimentConfig(mode=mode, lambdas=lambdas, relatedness=relatedness,
                            optimizer=optimizer, loss=loss, hidden_dims=hidden, seed=seed,
                            steps=steps, eval_every=eval_every, data=data, run_id=run_id)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), os.path.dirname(os.path.abspath(path)))


def default_suite_config() -> ExperimentConfig:
    """The bundled synthetic benchmark behind the acceptance suite."""
    text = resources.files("coupled_mtl").joinpath("data", "default_suite.ini").read_text("utf-8")
    return parse_config(text)


def dumps_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config` (paths are written as stored)."""
    lam = dict(zip(("cls", "att", "dm", "sca"), cfg.lambdas))
    out = [
        "[experiment]",
        f"mode = {cfg.mode}", f"seed = {cfg.seed}", f"steps = {cfg.steps}",
        f"eval_every = {cfg.eval_every}",
    ]
    if cfg.run_id:
        out.append(f"run_id = {cfg.run_id}")
    out += ["", "[loss]"] + [f"lambda_{k} = {v!r}" for k, v in lam.items()]
    out += [f"eps = {cfg.loss.eps!r}", f"symmetric_dm = {cfg.loss.symmetric_dm}",
            f"dm_stop_cls_grad = {cfg.loss.dm_stop_cls_grad}",
            f"renorm_observed = {cfg.loss.renorm_observed}"]
    out += ["", "[optimizer]"] + [f"{f.name} = {getattr(cfg.optimizer, f.name)!r}".replace("'", "")
                                  for f in fields(OptimizerConfig)]
    out += ["", "[model]", "hidden_dims = " + ", ".join(map(str, cfg.hidden_dims))]
    out += ["", "[relatedness]", f"source = {cfg.relatedness.kind}"]
    if cfg.relatedness.path:
        out.append(f"path = {cfg.relatedness.path}")
    if cfg.relatedness.threshold is not None:
        out.append(f"threshold = {cfg.relatedness.threshold!r}")
    if cfg.data.files:
        out += ["", "[data]", f"schema = {cfg.data.schema}"] + [f"{s} = {p}" for s, p in cfg.data.files]
    if cfg.data.synth is not None:
        out += ["", cfg.data.synth.to_ini().rstrip("\n")]
    return "\n".join(out) + "\n"
