"""Experiment configuration: schema, validation, and YAML round-trip.

An experiment file has five sections (all optional; defaults shown in the
dataclasses): ``dataset``, ``noise``, ``model``, ``train``, ``augment``,
``run``. Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

import yaml

from .augment import AugmentConfig
from .errors import ValidationError

METHODS = ("ours", "default_baseline", "label_smooth")
NOISE_KINDS = ("none", "symmetric", "asymmetric", "instance_dependent")


@dataclass
class DatasetConfig:
    kind: str = "synthetic"      # "synthetic" | "folder"
    root: str | None = None      # folder mode: contains train/<class>/, test/<class>/
    num_classes: int = 4
    image_size: int = 28
    channels: int = 3
    train_per_class: int = 500
    test_per_class: int = 250
    data_seed: int = 7
    pixel_noise: float = 0.10

    def __post_init__(self):
        if self.kind not in ("synthetic", "folder"):
            raise ValidationError(f"dataset.kind must be synthetic|folder, got {self.kind!r}")
        if self.kind == "folder" and not self.root:
            raise ValidationError("dataset.kind=folder requires dataset.root")


@dataclass
class NoiseConfig:
    kind: str = "none"
    rate: float = 0.0
    convention: str = "uniform_all"     # symmetric noise only
    proxy_epochs: int = 40              # instance-dependent budget

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValidationError(f"noise.kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.kind != "none" and not 0.0 <= self.rate < 1.0:
            raise ValidationError(f"noise.rate must be in [0, 1), got {self.rate}")


@dataclass
class ModelSettings:
    encoder: str = "toy_cnn"
    projection_layers: int = 2
    projection_dim: int = 128
    mixup_head_layers: int = 2


@dataclass
class TrainConfig:
    method: str = "ours"
    stage1_epochs: int = 30
    stage2_epochs: int = 70
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    groups_per_batch: int = 2    # K
    group_size: int = 4          # M; batch size is K * M
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 10     # epochs, counted from the start of stage 2
    temperature: float = 0.5
    contrastive_coefficient: float = 0.1   # lambda in the stage-2 total
    label_smooth_epsilon: float = 0.1
    seed: int = 1
    remainder_policy: str = "resample"
    supervised_view: str = "auto"   # auto: weak views for ours, raw for baselines
    use_supervised_loss: bool = True
    use_mixup_loss: bool = True
    use_contrastive_loss: bool = True
    include_positive_in_denominator: bool = False
    evaluate_test_each_epoch: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"train.method must be one of {METHODS}, got {self.method!r}")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValidationError("epoch counts must be >= 0")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ValidationError(
                f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}"
            )
        if self.lr_decay_every < 1:
            raise ValidationError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if self.groups_per_batch < 1 or self.group_size < 1:
            raise ValidationError("groups_per_batch and group_size must be >= 1")
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        if self.contrastive_coefficient < 0:
            raise ValidationError("contrastive_coefficient must be >= 0")
        if self.supervised_view not in ("auto", "weak", "raw"):
            raise ValidationError(
                f"supervised_view must be auto|weak|raw, got {self.supervised_view!r}"
            )

    @property
    def batch_size(self) -> int:
        return self.groups_per_batch * self.group_size

    @property
    def total_epochs(self) -> int:
        return self.stage1_epochs + self.stage2_epochs


@dataclass
class RunDefaults:
    out_dir: str | None = None
    export_features: bool = False


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    run: RunDefaults = field(default_factory=RunDefaults)

    def to_dict(self) -> dict:
        def plain(value):
            if isinstance(value, dict):
                return {k: plain(v) for k, v in value.items()}
            if isinstance(value, tuple):
                return [plain(v) for v in value]
            return value

        return plain(asdict(self))


_SECTIONS = {
    "dataset": DatasetConfig,
    "noise": NoiseConfig,
    "model": ModelSettings,
    "train": TrainConfig,
    "augment": AugmentConfig,
    "run": RunDefaults,
}


def _build_section(cls, payload: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ValidationError(
            f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
        )
    coerced = {}
    for key, value in payload.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return cls(**coerced)


def config_from_dict(payload: dict) -> ExperimentConfig:
    if not isinstance(payload, dict):
        raise ValidationError(f"config root must be a mapping, got {type(payload).__name__}")
    unknown = set(payload) - set(_SECTIONS)
    if unknown:
        raise ValidationError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        kwargs[section] = _build_section(cls, payload.get(section, {}) or {}, section)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            payload = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ValidationError(f"config file {path} is not valid YAML: {exc}") from exc
    return config_from_dict(payload)


def save_config(path, config: ExperimentConfig) -> None:
    payload = config.to_dict()
    with open(path, "w") as fh:
        yaml.safe_dump(payload, fh, sort_keys=True)
