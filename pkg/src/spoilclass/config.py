"""Experiment configuration loaded from YAML (JSON is accepted as a subset)."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .backbones import ARCHITECTURES, BackboneSpec
from .bof import BofSettings, DetectorConfig
from .cnn import Hyperparams
from .dataset import IMAGE_SIZE, TARGETS
from .errors import ConfigError
from .hybrid import HybridHeadKind

FAMILIES = ("cnn", "hybrid", "bof")
_SECTIONS = {"cnn": {"backbone", "hyperparams"}, "hybrid": {"backbone", "head"}, "bof": {"bof"}}
_HEAD_FIELDS = {"knn": {"k"}, "decision_tree": {"max_depth"}, "svm": {"kernel", "C"},
                "ensemble": {"n_estimators"}}
_TOP = {"manifest", "target", "family", "seed", "output_dir", "image_size", "split", "folds",
        "backbone", "hyperparams", "head", "bof", "mpca_mode", "save_models", "name"}


@dataclass
class ExperimentConfig:
    manifest: Path
    target: str
    family: str
    seed: int = 0
    output_dir: Path = Path("runs")
    image_size: int = IMAGE_SIZE
    split_ratio: float = 0.8
    stratify_on: Optional[str] = None
    k_folds: int = 5
    backbone: Optional[BackboneSpec] = None
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    head_kind: Optional[HybridHeadKind] = None
    head_config: dict = field(default_factory=dict)
    bof: BofSettings = field(default_factory=BofSettings)
    mpca_mode: str = "recall"
    save_models: bool = True
    name: Optional[str] = None
    text: str = ""
    overrides: dict = field(default_factory=dict)

    @property
    def model_name(self) -> str:
        if self.name:
            return self.name
        if self.family == "cnn":
            return self.backbone.model_name
        if self.family == "hybrid":
            return self.backbone.model_name + self.head_kind.display
        return "BagOfFeatures"

    def digest(self) -> str:
        h = hashlib.sha256(self.text.encode("utf-8"))
        h.update(repr(sorted(self.overrides.items())).encode("utf-8"))
        return h.hexdigest()[:10]

    def override(self, seed: Optional[int] = None, output_dir=None) -> "ExperimentConfig":
        """Command-line overrides; the config text itself is left untouched."""
        if seed is not None:
            self.seed = int(seed)
            self.overrides["seed"] = self.seed
        if output_dir is not None:
            self.output_dir = Path(output_dir).resolve()
            self.overrides["output_dir"] = str(self.output_dir)
        return self


def _section(raw, key, allowed):
    value = raw.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(key, "must be a mapping")
    unknown = set(value) - set(allowed)
    if unknown:
        raise ConfigError(f"{key}.{sorted(unknown)[0]}", "unknown field")
    return value


def _build(cls, key, values):
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from exc


def parse_config(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = set(raw) - _TOP
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    for key in ("manifest", "target", "family"):
        if raw.get(key) in (None, ""):
            raise ConfigError(key, "is required")
    family = raw["family"]
    if family not in FAMILIES:
        raise ConfigError("family", f"must be one of {FAMILIES}")
    if raw["target"] not in TARGETS:
        raise ConfigError("target", f"must be one of {TARGETS}")
    stray = {"backbone", "hyperparams", "head", "bof"} & set(raw) - _SECTIONS[family]
    if stray:
        raise ConfigError(sorted(stray)[0], f"does not apply to family {family!r}")

    manifest = Path(raw["manifest"])
    if not manifest.is_absolute():
        manifest = (base_dir / manifest).resolve()
    out = Path(raw.get("output_dir", "runs"))
    if not out.is_absolute():
        out = (base_dir / out).resolve()
    split = _section(raw, "split", {"ratio", "stratify_on"})
    folds = _section(raw, "folds", {"k"})
    cfg = ExperimentConfig(
        manifest=manifest, target=raw["target"], family=family,
        seed=int(raw.get("seed", 0)), output_dir=out,
        image_size=int(raw.get("image_size", IMAGE_SIZE)),
        split_ratio=float(split.get("ratio", 0.8)),
        stratify_on=split.get("stratify_on"),
        k_folds=int(folds.get("k", 5)),
        mpca_mode=raw.get("mpca_mode", "recall"),
        save_models=bool(raw.get("save_models", True)),
        name=raw.get("name"),
        text=text,
    )
    if cfg.stratify_on is not None and cfg.stratify_on not in TARGETS:
        raise ConfigError("split.stratify_on", f"must be one of {TARGETS}")
    if cfg.mpca_mode not in ("recall", "one_vs_rest"):
        raise ConfigError("mpca_mode", "must be 'recall' or 'one_vs_rest'")
    if cfg.k_folds != 5:
        raise ConfigError("folds.k", "the protocol uses five folds")

    if family in ("cnn", "hybrid"):
        bb = _section(raw, "backbone", {"name", "weight_init"})
        if "name" not in bb:
            raise ConfigError("backbone.name", "is required")
        if bb["name"] not in ARCHITECTURES:
            raise ConfigError("backbone.name", f"must be one of {ARCHITECTURES}")
        cfg.backbone = _build(BackboneSpec, "backbone", bb)
    if family == "cnn":
        hp_fields = {f.name for f in fields(Hyperparams)}
        cfg.hyperparams = _build(Hyperparams, "hyperparams",
                                 _section(raw, "hyperparams", hp_fields))
    if family == "hybrid":
        head = dict(_section(raw, "head", {"kind", "k", "kernel", "C", "n_estimators",
                                           "max_depth"}))
        if "kind" not in head:
            raise ConfigError("head.kind", "is required")
        try:
            cfg.head_kind = HybridHeadKind(head.pop("kind"))
        except ValueError as exc:
            raise ConfigError("head.kind", str(exc)) from exc
        allowed = _HEAD_FIELDS[cfg.head_kind.value]
        for key in head:
            if key not in allowed:
                raise ConfigError(f"head.{key}", f"not used by the {cfg.head_kind.value} head")
        cfg.head_config = head
    if family == "bof":
        det_fields = {f.name for f in fields(DetectorConfig)}
        set_fields = {f.name for f in fields(BofSettings)} - {"detector"}
        raw_bof = dict(_section(raw, "bof", det_fields | set_fields))
        detector = _build(DetectorConfig, "bof", {k: raw_bof.pop(k) for k in list(raw_bof)
                                                  if k in det_fields})
        cfg.bof = _build(BofSettings, "bof", {**raw_bof, "detector": detector})
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("<file>", f"{path} does not exist")
    text = path.read_bytes().decode("utf-8")
    return parse_config(text, path.parent)
