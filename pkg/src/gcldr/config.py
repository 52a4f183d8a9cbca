"""INI-style experiment configuration: flat `key = value` sections, validated
up front before any compute starts."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

from .data import NuisanceSpec, SplitSpec, diagonal_spec, mobile_spec
from .exceptions import ConfigError
from .trainer import TrainConfig

DEFAULT_CONFIG = """\
[dataset]
layout = diagonal
class_sets = 2
classes_per_set = 3
dim = 20
per_combo = 80
noise_sigma = 0.2
nuisance_kind = additive_offset
nuisance_ratio = 1.5
seed = 0

[model]
p_width = 64
g_width = 32
p_dropout = 0.5

[training]
k = 2
batch_size = 128
epochs = 65
lr = 0.001
lr_heads = 0.003
optimizer = adam
variant = full
gamma = 0.01
alpha = 1.0
w_u = 2.0
warmup_epochs = 30
refine_epochs = 15
discovery_restarts = 5
early_stop = false
patience = 10

[evaluation]
tau = auto
seeds = 0,1,2,3,4
val_fraction = 0.1
"""


@dataclass
class DatasetConfig:
    layout: str = "diagonal"
    class_sets: int = 2
    classes_per_set: int = 3
    dim: int = 20
    per_combo: int = 80
    noise_sigma: float = 0.2
    nuisance_kind: str = "additive_offset"
    nuisance_ratio: float = 1.5
    seed: int = 0

    def split_spec(self) -> SplitSpec:
        if self.layout == "diagonal":
            return diagonal_spec(self.class_sets, self.classes_per_set)
        if self.layout == "mobile":
            return mobile_spec()
        raise ConfigError(f"unknown dataset layout {self.layout!r}")

    def nuisance_spec(self) -> NuisanceSpec:
        return NuisanceSpec(kind=self.nuisance_kind, ratio=self.nuisance_ratio)


@dataclass
class EvalConfig:
    tau: float | None = None  # None -> 1/c
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    val_fraction: float = 0.1


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    model: dict
    training: TrainConfig
    evaluation: EvalConfig
    raw_text: str = ""

    def config_hash(self) -> str:
        return hashlib.sha256(self.raw_text.encode("utf-8")).hexdigest()[:16]


def _get(parser, section, key, cast, default=None):
    if not parser.has_option(section, key):
        if default is None:
            raise ConfigError(f"missing [{section}] {key}")
        return default
    raw = parser.get(section, key)
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_file(io.StringIO(text))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in ("dataset", "model", "training", "evaluation"):
        if not parser.has_section(section):
            raise ConfigError(f"missing [{section}] section")

    ds = DatasetConfig(
        layout=_get(parser, "dataset", "layout", str, "diagonal"),
        class_sets=_get(parser, "dataset", "class_sets", int, 2),
        classes_per_set=_get(parser, "dataset", "classes_per_set", int, 3),
        dim=_get(parser, "dataset", "dim", int, 20),
        per_combo=_get(parser, "dataset", "per_combo", int, 80),
        noise_sigma=_get(parser, "dataset", "noise_sigma", float, 0.2),
        nuisance_kind=_get(parser, "dataset", "nuisance_kind", str, "additive_offset"),
        nuisance_ratio=_get(parser, "dataset", "nuisance_ratio", float, 1.5),
        seed=_get(parser, "dataset", "seed", int, 0),
    )
    ds.split_spec()  # validate layout eagerly
    ds.nuisance_spec()

    model = {
        "p_width": _get(parser, "model", "p_width", int, 64),
        "g_width": _get(parser, "model", "g_width", int, 32),
        "p_dropout": _get(parser, "model", "p_dropout", float, 0.5),
    }

    training = TrainConfig(
        k=_get(parser, "training", "k", int, 2),
        batch_size=_get(parser, "training", "batch_size", int, 128),
        epochs=_get(parser, "training", "epochs", int, 65),
        lr=_get(parser, "training", "lr", float, 1e-3),
        lr_heads=(
            float(parser.get("training", "lr_heads"))
            if parser.has_option("training", "lr_heads")
            else None
        ),
        optimizer=_get(parser, "training", "optimizer", str, "adam"),
        variant=_get(parser, "training", "variant", str, "full"),
        gamma=_get(parser, "training", "gamma", float, 0.01),
        alpha=_get(parser, "training", "alpha", float, 1.0),
        w_u=_get(parser, "training", "w_u", float, 2.0),
        warmup_epochs=_get(parser, "training", "warmup_epochs", int, 30),
        refine_epochs=_get(parser, "training", "refine_epochs", int, 15),
        discovery_restarts=_get(parser, "training", "discovery_restarts", int, 5),
        early_stop=_get(parser, "training", "early_stop", bool, False),
        patience=_get(parser, "training", "patience", int, 10),
        p_width=model["p_width"],
        g_width=model["g_width"],
        p_dropout=model["p_dropout"],
    )
    if training.variant not in (
        "full", "direct", "single_space", "feature_based",
        "class_confuse", "no_unification", "meta",
    ):
        raise ConfigError(f"unknown variant {training.variant!r}")

    tau_raw = _get(parser, "evaluation", "tau", str, "auto")
    tau = None if tau_raw.strip() == "auto" else float(tau_raw)
    seeds_raw = _get(parser, "evaluation", "seeds", str, "0")
    try:
        seeds = [int(s) for s in seeds_raw.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad seeds list {seeds_raw!r}") from exc
    if not seeds:
        raise ConfigError("seeds list must be nonempty")
    val_fraction = _get(parser, "evaluation", "val_fraction", float, 0.1)
    if not 0 < val_fraction < 1:
        raise ConfigError("val_fraction must be in (0, 1)")

    return ExperimentConfig(
        dataset=ds,
        model=model,
        training=training,
        evaluation=EvalConfig(tau=tau, seeds=seeds, val_fraction=val_fraction),
        raw_text=text,
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
