"""Experiment configuration: one JSON file driving the whole pipeline.

Relative paths inside a config file are resolved against the file's
directory. Every field can be overridden on the command line with a
``key=value`` pair using dotted paths (``train.seed_epochs=40``); values
are coerced to the field's existing type.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .fhseg import FHConfig
from .losses import LossConfig
from .recursion import StopRule
from .segnet import TrainConfig
from .weaklabel import GateConfig, RefinePolicy

SELECTION_MODES = ("human", "auto")


@dataclass
class ExperimentConfig:
    d_pix_manifest: str = ""
    d_img_manifest: str = ""
    test_manifests: list[str] = field(default_factory=list)
    experiment_dir: str = "experiment"
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    fh: FHConfig = field(default_factory=FHConfig)
    policy: RefinePolicy = field(default_factory=RefinePolicy)
    gate: GateConfig = field(default_factory=GateConfig)
    stop: StopRule = field(default_factory=StopRule)
    selection_mode: str = "human"  # stage-2 candidate selection
    recursion_selection_mode: str = "auto"  # selection in later recursions
    refine_each_recursion: bool = True
    include_negative_dimg: bool = True
    review_timeout_s: float = 86400.0
    review_poll_s: float = 0.5
    rejection_cap: int = 3
    model_width: int = 16
    balance_per_class: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.selection_mode not in SELECTION_MODES:
            raise ValueError(f"selection_mode must be one of {SELECTION_MODES}")
        if self.recursion_selection_mode not in SELECTION_MODES:
            raise ValueError(f"recursion_selection_mode must be one of {SELECTION_MODES}")
        if self.rejection_cap < 1:
            raise ValueError("rejection_cap must be >= 1")

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        nested = {
            "train": TrainConfig,
            "loss": LossConfig,
            "fh": FHConfig,
            "policy": RefinePolicy,
            "gate": GateConfig,
            "stop": StopRule,
        }
        for key, typ in nested.items():
            if key in data and isinstance(data[key], dict):
                data[key] = typ(**data[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        cfg = cls.from_dict(data)
        base = path.parent
        cfg.d_pix_manifest = _resolve(base, cfg.d_pix_manifest)
        cfg.d_img_manifest = _resolve(base, cfg.d_img_manifest)
        cfg.test_manifests = [_resolve(base, m) for m in cfg.test_manifests]
        cfg.experiment_dir = _resolve(base, cfg.experiment_dir)
        return cfg

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _resolve(base: Path, ref: str) -> str:
    if not ref:
        return ref
    p = Path(ref)
    return str(p if p.is_absolute() else base / p)


def _coerce(current, raw: str):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, list):
        return json.loads(raw)
    if current is None:
        if raw.lower() in ("none", "null"):
            return None
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw
    return raw


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``dotted.key=value`` overrides, returning a new config."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip().lstrip("-")
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ValueError(f"unknown config section {part!r} in override {item!r}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise ValueError(f"unknown config field {key!r}")
        node[leaf] = _coerce(node[leaf], raw.strip())
    return ExperimentConfig.from_dict(data)
