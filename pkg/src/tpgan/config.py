"""Experiment configuration as flat ``section.key = value`` text.

Example::

    # three-class garment ablation
    dataset.source = synthetic:garments
    split.majority_class = 0
    split.minority_classes = 1,2
    train.profile = desk
    experiment.method = gan-v3
"""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import ImbalanceSpec
from .errors import ValidationError
from .training import TrainConfig

METHODS = ("baseline", "smote", "b-smote", "adasyn", "gan-v1", "gan-v2", "gan-v3")
OUTPUT_ROOT_ENV = "TPGAN_OUTPUT_ROOT"


@dataclass
class DatasetConfig:
    # a manifest path, "synthetic:garments" or "idx:<images file>,<labels file>"
    source: str = "synthetic:garments"
    channels: int = 1
    per_class: int = 1000
    seed: int = 0


@dataclass
class SplitConfig:
    majority_class: int = 0
    minority_classes: tuple[int, ...] = (1, 2)
    balanced_ratio: float = 0.1
    majority_count: int = 800
    minority_count: typing.Optional[int] = None
    seed: int = 0

    def spec(self) -> ImbalanceSpec:
        return ImbalanceSpec(self.majority_class, tuple(self.minority_classes), self.balanced_ratio,
                             self.majority_count, self.seed, self.minority_count)


@dataclass
class ExperimentSection:
    method: str = "gan-v3"
    repetitions: int = 1
    output_dir: str = "runs/experiment"
    k_neighbors: int = 5
    reference_epochs: int = 30


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def validate(self) -> "ExperimentConfig":
        e = self.experiment
        if e.method not in METHODS:
            raise ValidationError(f"experiment.method must be one of {METHODS}, got {e.method!r}")
        if e.repetitions < 1:
            raise ValidationError("experiment.repetitions must be >= 1")
        if e.k_neighbors < 1:
            raise ValidationError("experiment.k_neighbors must be >= 1")
        if self.dataset.channels not in (1, 3):
            raise ValidationError("dataset.channels must be 1 or 3")
        self.split.spec()
        dataclasses.replace(self.train)  # re-runs TrainConfig validation
        return self

    @property
    def variant(self) -> str:
        return self.experiment.method[4:] if self.experiment.method.startswith("gan-") else "baseline"

    def train_config(self, seed: int) -> TrainConfig:
        return dataclasses.replace(self.train, variant=self.variant, seed=seed)

    def output_path(self) -> Path:
        out = Path(self.experiment.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out


_SECTIONS = ("dataset", "split", "train", "experiment")
_SKIP = {("train", "variant")}


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if raw == "" or raw.lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(raw, inner, key)
    try:
        if origin in (tuple, list):
            return tuple(int(v) for v in raw.split(",") if v.strip() != "")
        if hint is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if hint in (int, float, str):
            return hint(raw)
    except ValueError as exc:
        raise ValidationError(f"{key}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from exc
    raise ValidationError(f"{key}: unsupported field type {hint}")


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def to_pairs(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    pairs = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            if (section, f.name) in _SKIP:
                continue
            pairs.append((f"{section}.{f.name}", _format(getattr(obj, f.name))))
    return pairs


def serialize(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_pairs(cfg))


def apply_overrides(cfg: ExperimentConfig, pairs: dict[str, str]) -> ExperimentConfig:
    """Return a copy of ``cfg`` with dotted keys replaced by parsed values."""
    sections = {s: dataclasses.asdict(getattr(cfg, s)) for s in _SECTIONS}
    for key, raw in pairs.items():
        section, _, name = key.partition(".")
        if section not in sections or name not in sections[section] or (section, name) in _SKIP:
            raise ValidationError(f"unknown config key {key!r}")
        hint = _hints(type(getattr(cfg, section)))[name]
        sections[section][name] = _coerce(raw.strip(), hint, key)
    built = {}
    for s in _SECTIONS:
        cls = type(getattr(cfg, s))
        try:
            built[s] = cls(**sections[s])
        except ValidationError as exc:
            raise ValidationError(f"[{s}] {exc}") from exc
    return ExperimentConfig(**built)


def parse(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'section.key = value'")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return apply_overrides(base or ExperimentConfig(), pairs)


def load(path: str | Path) -> ExperimentConfig:
    return parse(Path(path).read_text())


def save(cfg: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize(cfg))
    return path
