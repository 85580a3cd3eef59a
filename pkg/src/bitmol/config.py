"""Declarative run configuration: nested dataclass sections, strict key checking, content digest."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .model import BitConfig
from .pretrain import CorruptionConfig, PretrainConfig
from .tasks import FinetuneConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    path: str | None = None  # JSONL input; synthetic data is generated when absent
    seed: int = 0
    n_molecules: int = 64
    n_pockets: int = 64
    n_complexes: int = 64
    n_families: int = 0
    mol_atoms: tuple[int, int] = (6, 16)
    pocket_atoms: tuple[int, int] = (20, 60)


@dataclass
class AffinityTask:
    data_seed: int = 11
    n_complexes: int = 800
    finetune: FinetuneConfig = field(default_factory=lambda: FinetuneConfig(epochs=20, batch_size=16, peak_lr=2e-3))


@dataclass
class RetrievalTask:
    data_seed: int = 12
    n_families: int = 4
    train_pockets: int = 48
    train_ligands: int = 240
    eval_pockets: int = 16
    eval_ligands: int = 800
    n_actives: int = 5
    pool_size: int = 500
    finetune: FinetuneConfig = field(default_factory=lambda: FinetuneConfig(epochs=20, batch_size=8, peak_lr=1e-3))


@dataclass
class ClassifyTask:
    data_seed: int = 13
    n_molecules: int = 240
    use_3d: bool = False
    finetune: FinetuneConfig = field(default_factory=lambda: FinetuneConfig(epochs=20, batch_size=16, peak_lr=1e-3))


@dataclass
class ScreenTask:
    data_seed: int = 14
    n_pockets: int = 4
    library_size: int = 400
    k1: int = 40
    m: int = 10
    retrieval_checkpoint: str | None = None
    classifier_checkpoint: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    init: str | None = None  # checkpoint to start from
    model: BitConfig = field(default_factory=BitConfig)
    data: DataSection = field(default_factory=DataSection)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    affinity: AffinityTask = field(default_factory=AffinityTask)
    retrieval: RetrievalTask = field(default_factory=RetrievalTask)
    classify: ClassifyTask = field(default_factory=ClassifyTask)
    screen: ScreenTask = field(default_factory=ScreenTask)


PRESETS = {"desk": {}, "tiny": dataclasses.asdict(BitConfig.tiny()), "large": dataclasses.asdict(BitConfig.large())}


def _build(cls, raw, path: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{path or 'root'}' must be a mapping")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        names = ", ".join(f"{path}.{k}" if path else k for k in unknown)
        raise ConfigError(f"unknown config key(s): {names}")
    kwargs = {}
    for name, value in raw.items():
        hint = hints[name]
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, sub)
        elif typing.get_origin(hint) is tuple and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section '{path or 'root'}': {exc}") from exc


def from_dict(raw: dict | None) -> RunConfig:
    raw = dict(raw or {})
    model = raw.get("model")
    if isinstance(model, dict) and "preset" in model:
        model = dict(model)
        preset = model.pop("preset")
        if preset not in PRESETS:
            raise ConfigError(f"unknown model preset '{preset}' (choose from {sorted(PRESETS)})")
        raw["model"] = {**PRESETS[preset], **model}
    return _build(RunConfig, raw, "")


def load(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(raw)


def to_dict(cfg) -> dict:
    def clean(x):
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        return x
    return clean(dataclasses.asdict(cfg))


# where results are written does not change them, so it stays out of the digest
_NOT_DIGESTED = ("out",)


def digest(cfg: RunConfig) -> str:
    """sha256 over the canonical (sorted-key) JSON of the fully resolved config."""
    raw = {k: v for k, v in to_dict(cfg).items() if k not in _NOT_DIGESTED}
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
