"""Experiment configuration, read from a TOML document."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .models import DiscConfig, GenConfig, LMConfig, background_config
from .noising import NoiseKind
from .scoring import METHODS

ALL_METHODS = tuple(METHODS)


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train: str = ""
    valid: str = ""
    test: str = ""
    ood: str = ""                     # separate OOD file split between valid and test
    schema: str = "label,text"
    ood_label: str = "outOfDomain"
    label_sep: str = "/"
    label_mode: str = "fine"          # fine | coarse
    holdout_k: float = 0.0            # > 0 synthesises OOD by holding out classes
    ood_valid_fraction: float | None = None
    min_freq: int = 1
    pretrained: str = ""              # GloVe-style vector file
    pretrained_for_gen: bool = True


@dataclass
class ModelsConfig:
    lm: LMConfig = field(default_factory=LMConfig)
    background: LMConfig = field(default_factory=background_config)
    gen: GenConfig = field(default_factory=GenConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    disc_lmcl: DiscConfig = field(default_factory=lambda: DiscConfig(head="lmcl"))


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    models: ModelsConfig = field(default_factory=ModelsConfig)
    methods: list[str] = field(default_factory=lambda: list(ALL_METHODS))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output: str = "out"
    p_noise: float = 0.5
    noise_resample: bool = True
    lof_k: int = 20
    msp_tau: float = 1.0
    msp_high_tau: float = 1000.0
    threads: int = 1
    cache: bool = True

    def validate(self) -> "ExperimentConfig":
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(ALL_METHODS)}")
        if not self.methods:
            raise ConfigError("no methods selected")
        if not self.seeds:
            raise ConfigError("no seeds given")
        if self.data.label_mode not in ("fine", "coarse"):
            raise ConfigError(f"label_mode must be 'fine' or 'coarse', got {self.data.label_mode!r}")
        if not 0.0 <= self.p_noise <= 1.0:
            raise ConfigError("p_noise must lie in [0, 1]")
        if self.models.disc.head != "softmax" or self.models.disc_lmcl.head != "lmcl":
            raise ConfigError("models.disc must use the softmax head and models.disc_lmcl the lmcl head")
        return self

    @property
    def out(self) -> Path:
        return Path(self.output)

    def noise_kinds(self) -> list[NoiseKind]:
        return [k for k in NoiseKind if any(m.endswith(f"backlm_{k.value}") for m in self.methods)]


def _build(cls, values: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    extra = set(values) - set(names)
    if extra:
        raise ConfigError(f"[{where}] unknown keys {sorted(extra)}")
    return values


def from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    data = DataConfig(**_build(DataConfig, doc.pop("data", {}), "data"))
    defaults = ModelsConfig()
    mdoc = doc.pop("models", {})
    _build(ModelsConfig, mdoc, "models")
    models = ModelsConfig(**{
        f.name: dataclasses.replace(getattr(defaults, f.name),
                                    **_build(type(getattr(defaults, f.name)), mdoc.get(f.name, {}),
                                             f"models.{f.name}"))
        for f in dataclasses.fields(ModelsConfig)
    })
    exp = doc.pop("experiment", {})
    if doc:
        raise ConfigError(f"unknown sections {sorted(doc)}")
    _build(ExperimentConfig, exp, "experiment")
    if "data" in exp or "models" in exp:
        raise ConfigError("[experiment] may not contain data or models")
    return ExperimentConfig(data=data, models=models, **exp).validate()


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        cfg = from_dict(tomllib.load(fh))
    base = Path(path).parent
    for name in ("train", "valid", "test", "ood", "pretrained"):
        value = getattr(cfg.data, name)
        if value and not Path(value).is_absolute():
            setattr(cfg.data, name, str(base / value))
    if not Path(cfg.output).is_absolute():
        cfg.output = str(base / cfg.output)
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
