"""Flat INI-style run configuration: [data], [model], [train], [eval].

parse -> serialize -> parse is an identity; unknown sections or keys are
rejected by name so typos fail loudly instead of silently using defaults.
"""

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import AblationFlags, Hyperparameters
from .train import TrainConfig

INTERACTION_FORMATS = ("pairs", "rating")


@dataclass
class DataConfig:
    processed_dir: str = ""
    interactions: str = ""
    kg: str = ""
    fmt: str = "pairs"
    threshold: float = 4.0
    core: int = 5
    split_ratio: float = 0.8

    def validate(self):
        if self.fmt not in INTERACTION_FORMATS:
            raise ConfigError(f"data.format must be one of {INTERACTION_FORMATS}")
        if self.core < 1:
            raise ConfigError("data.core must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("data.split_ratio must be in (0, 1)")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    hp: Hyperparameters = field(default_factory=Hyperparameters)
    flags: AblationFlags = field(default_factory=AblationFlags)
    train: TrainConfig = field(default_factory=TrainConfig)
    k_list: tuple = (5, 10, 20, 50, 100)
    out_dir: str = "run_out"

    def validate(self):
        self.data.validate()
        self.hp.validate()
        self.train.validate()
        if not self.k_list:
            raise ConfigError("eval.k must be nonempty")
        if any(k < 1 for k in self.k_list):
            raise ConfigError("eval.k values must be >= 1")


_SCHEMA = {
    "data": ("processed_dir", "interactions", "kg", "format", "threshold",
             "core", "split_ratio"),
    "model": ("embed_dim", "num_layers", "tau", "lambda_bpr_c", "lambda_cl",
              "lambda_reg", "add_inverse", "no_enhancement", "no_attention",
              "no_cl", "no_cg"),
    "train": ("epochs", "batch_size", "learning_rate", "eval_every",
              "patience", "seed", "out_dir"),
    "eval": ("k",),
}


def _convert(section, key, raw, kind):
    try:
        if kind is bool:
            if raw not in ("true", "false"):
                raise ValueError
            return raw == "true"
        return kind(raw)
    except ValueError:
        raise ConfigError(
            f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_text(text):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")

    cfg = RunConfig()

    def get(section, key, kind, default):
        if parser.has_option(section, key):
            return _convert(section, key, parser.get(section, key), kind)
        return default

    d = cfg.data
    cfg.data = DataConfig(
        processed_dir=get("data", "processed_dir", str, d.processed_dir),
        interactions=get("data", "interactions", str, d.interactions),
        kg=get("data", "kg", str, d.kg),
        fmt=get("data", "format", str, d.fmt),
        threshold=get("data", "threshold", float, d.threshold),
        core=get("data", "core", int, d.core),
        split_ratio=get("data", "split_ratio", float, d.split_ratio))
    h = cfg.hp
    cfg.hp = Hyperparameters(
        embed_dim=get("model", "embed_dim", int, h.embed_dim),
        num_layers=get("model", "num_layers", int, h.num_layers),
        tau=get("model", "tau", float, h.tau),
        lambda_bpr_c=get("model", "lambda_bpr_c", float, h.lambda_bpr_c),
        lambda_cl=get("model", "lambda_cl", float, h.lambda_cl),
        lambda_reg=get("model", "lambda_reg", float, h.lambda_reg),
        learning_rate=get("train", "learning_rate", float, h.learning_rate),
        batch_size=get("train", "batch_size", int, h.batch_size),
        add_inverse=get("model", "add_inverse", bool, h.add_inverse))
    cfg.flags = AblationFlags(
        no_enhancement=get("model", "no_enhancement", bool, False),
        no_attention=get("model", "no_attention", bool, False),
        no_cl=get("model", "no_cl", bool, False),
        no_cg=get("model", "no_cg", bool, False))
    t = cfg.train
    cfg.train = TrainConfig(
        epochs=get("train", "epochs", int, t.epochs),
        batch_size=cfg.hp.batch_size,
        eval_every=get("train", "eval_every", int, t.eval_every),
        patience=get("train", "patience", int, t.patience),
        seed=get("train", "seed", int, t.seed))
    cfg.out_dir = get("train", "out_dir", str, cfg.out_dir)
    raw_k = get("eval", "k", str, ",".join(str(k) for k in cfg.k_list))
    try:
        cfg.k_list = tuple(sorted(set(int(x) for x in raw_k.split(","))))
    except ValueError:
        raise ConfigError(f"eval.k: cannot parse {raw_k!r} as integers") from None
    cfg.validate()
    return cfg


def parse_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def serialize_config(cfg):
    """Deterministic text form; parse(serialize(cfg)) == cfg."""

    def b(flag):
        return "true" if flag else "false"

    lines = [
        "[data]",
        f"processed_dir = {cfg.data.processed_dir}",
        f"interactions = {cfg.data.interactions}",
        f"kg = {cfg.data.kg}",
        f"format = {cfg.data.fmt}",
        f"threshold = {cfg.data.threshold}",
        f"core = {cfg.data.core}",
        f"split_ratio = {cfg.data.split_ratio}",
        "",
        "[model]",
        f"embed_dim = {cfg.hp.embed_dim}",
        f"num_layers = {cfg.hp.num_layers}",
        f"tau = {cfg.hp.tau}",
        f"lambda_bpr_c = {cfg.hp.lambda_bpr_c}",
        f"lambda_cl = {cfg.hp.lambda_cl}",
        f"lambda_reg = {cfg.hp.lambda_reg}",
        f"add_inverse = {b(cfg.hp.add_inverse)}",
        f"no_enhancement = {b(cfg.flags.no_enhancement)}",
        f"no_attention = {b(cfg.flags.no_attention)}",
        f"no_cl = {b(cfg.flags.no_cl)}",
        f"no_cg = {b(cfg.flags.no_cg)}",
        "",
        "[train]",
        f"epochs = {cfg.train.epochs}",
        f"batch_size = {cfg.hp.batch_size}",
        f"learning_rate = {cfg.hp.learning_rate}",
        f"eval_every = {cfg.train.eval_every}",
        f"patience = {cfg.train.patience}",
        f"seed = {cfg.train.seed}",
        f"out_dir = {cfg.out_dir}",
        "",
        "[eval]",
        "k = " + ",".join(str(k) for k in cfg.k_list),
        "",
    ]
    return "\n".join(lines)
