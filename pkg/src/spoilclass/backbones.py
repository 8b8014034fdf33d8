"""Pretrained convolutional backbones, head surgery and frozen feature extraction."""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import nn
from torchvision import models as tvm

from .errors import (InvalidClassCount, ShapeMismatch, UnknownArchitecture,
                     WeightsUnavailable)

log = logging.getLogger(__name__)

ARCHITECTURES = ("AlexNet", "ResNet18", "ResNet50", "InceptionV3", "EfficientNetB0")

# (learnable params in millions, layers, learnable layers) as published for
# each network; the layer counts come from a different toolbox and are kept
# for reference only.
EXPECTED_STATS = {
    "AlexNet": (58.5, 25, 8),
    "ResNet18": (11.1, 71, 18),
    "ResNet50": (23.5, 177, 50),
    "InceptionV3": (21.8, 315, 48),
    "EfficientNetB0": (4.0, 290, 82),
}

FEATURE_DIMS = {"AlexNet": 256, "ResNet18": 512, "ResNet50": 2048,
                "InceptionV3": 2048, "EfficientNetB0": 1280}
MIN_INPUT = {"AlexNet": 63, "ResNet18": 32, "ResNet50": 32,
             "InceptionV3": 75, "EfficientNetB0": 32}

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)
NORMALISATION = {name: (_IMAGENET_MEAN, _IMAGENET_STD) for name in ARCHITECTURES}
# torchvision's Inception weights expect inputs mapped to [-1, 1]
NORMALISATION["InceptionV3"] = ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5))

_WEIGHTS = {
    "AlexNet": (tvm.alexnet, tvm.AlexNet_Weights.IMAGENET1K_V1),
    "ResNet18": (tvm.resnet18, tvm.ResNet18_Weights.IMAGENET1K_V1),
    "ResNet50": (tvm.resnet50, tvm.ResNet50_Weights.IMAGENET1K_V1),
    "InceptionV3": (tvm.inception_v3, tvm.Inception_V3_Weights.IMAGENET1K_V1),
    "EfficientNetB0": (tvm.efficientnet_b0, tvm.EfficientNet_B0_Weights.IMAGENET1K_V1),
}

WEIGHTS_ENV = "SPOILCLASS_WEIGHTS_DIR"
DOWNLOAD_ENV = "SPOILCLASS_ALLOW_DOWNLOAD"


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    weight_init: str = "pretrained"  # pretrained | random

    def __post_init__(self):
        if self.name not in ARCHITECTURES:
            raise UnknownArchitecture(self.name)
        if self.weight_init not in ("pretrained", "random"):
            raise ValueError(f"weight_init must be 'pretrained' or 'random', got {self.weight_init!r}")

    @property
    def expected_stats(self):
        return EXPECTED_STATS[self.name]

    @property
    def model_name(self) -> str:
        """Display name; random initialisation carries a ``w0`` suffix."""
        return self.name + ("w0" if self.weight_init == "random" else "")


def weights_dir() -> Path:
    env = os.environ.get(WEIGHTS_ENV)
    if env:
        return Path(env)
    return Path(torch.hub.get_dir()) / "checkpoints"


def weights_file(name: str) -> Path:
    _, weights = _WEIGHTS[name]
    return weights_dir() / Path(weights.url).name


def _load_state_dict(name: str):
    path = weights_file(name)
    if path.is_file():
        return torch.load(path, map_location="cpu", weights_only=True)
    if os.environ.get(DOWNLOAD_ENV, "").lower() in ("1", "true", "yes"):
        _, weights = _WEIGHTS[name]
        try:
            return torch.hub.load_state_dict_from_url(
                weights.url, model_dir=str(path.parent), map_location="cpu",
                progress=False, check_hash=True)
        except Exception as exc:  # network failures come in many types
            raise WeightsUnavailable(f"download of {name} weights failed: {exc}") from exc
    raise WeightsUnavailable(
        f"no pretrained weights for {name} at {path}; populate the cache "
        f"(${WEIGHTS_ENV}) or set {DOWNLOAD_ENV}=1")


class _Normalise(nn.Module):
    def __init__(self, mean, std):
        super().__init__()
        self.register_buffer("mean", torch.tensor(mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std).view(1, 3, 1, 1))

    def forward(self, x):
        return (x - self.mean) / self.std


class ClassifierModel(nn.Module):
    """normalise -> convolutional base -> pooling -> (hidden FC) -> linear head.

    Inputs are NCHW float tensors in ``[0, 1]``; ``forward`` returns logits.
    """

    def __init__(self, spec: BackboneSpec, base, pool, neck, head):
        super().__init__()
        self.spec = spec
        self.normalise = _Normalise(*NORMALISATION[spec.name])
        self.base = base
        self.pool = pool
        self.neck = neck
        self.head = head

    @property
    def n_outputs(self) -> int:
        return self.head.out_features

    def forward(self, x):
        x = self.base(self.normalise(x))
        x = torch.flatten(self.pool(x), 1)
        return self.head(self.neck(x))

    def learnable_parameters(self, include_head: bool = True) -> int:
        mods = [self.base, self.neck] + ([self.head] if include_head else [])
        return sum(p.numel() for m in mods for p in m.parameters())

    def base_parameters(self) -> int:
        """Parameters of everything except the final linear classifier."""
        return self.learnable_parameters(include_head=False)


def _assemble(spec: BackboneSpec, net) -> ClassifierModel:
    name = spec.name
    if name == "AlexNet":
        return ClassifierModel(spec, net.features, net.avgpool, net.classifier[:-1],
                               net.classifier[-1])
    if name in ("ResNet18", "ResNet50"):
        base = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool,
                             net.layer1, net.layer2, net.layer3, net.layer4)
        return ClassifierModel(spec, base, net.avgpool, nn.Identity(), net.fc)
    if name == "InceptionV3":
        base = nn.Sequential(
            net.Conv2d_1a_3x3, net.Conv2d_2a_3x3, net.Conv2d_2b_3x3, net.maxpool1,
            net.Conv2d_3b_1x1, net.Conv2d_4a_3x3, net.maxpool2,
            net.Mixed_5b, net.Mixed_5c, net.Mixed_5d, net.Mixed_6a, net.Mixed_6b,
            net.Mixed_6c, net.Mixed_6d, net.Mixed_6e, net.Mixed_7a, net.Mixed_7b,
            net.Mixed_7c)
        return ClassifierModel(spec, base, net.avgpool, net.dropout, net.fc)
    # EfficientNetB0
    return ClassifierModel(spec, net.features, net.avgpool, net.classifier[0],
                           net.classifier[1])


def build_backbone(spec: BackboneSpec, seed: int = 0) -> ClassifierModel:
    """The named network with its original 1000-class ImageNet head.

    Random initialisation is seeded; pretrained weights come from the local
    cache (see :func:`weights_dir`).
    """
    ctor, _ = _WEIGHTS[spec.name]
    kwargs = {"weights": None}
    if spec.name == "InceptionV3":
        kwargs.update(aux_logits=True, init_weights=True, transform_input=False)
    state = _load_state_dict(spec.name) if spec.weight_init == "pretrained" else None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = ctor(**kwargs)
    if state is not None:
        net.load_state_dict(state)
    model = _assemble(spec, net)
    return model


def replace_head(model: ClassifierModel, n_classes: int, seed: int = 0) -> ClassifierModel:
    """Swap the final linear layer for a freshly initialised ``n_classes`` one.

    Mutates and returns ``model``; every other parameter is left untouched.
    """
    if n_classes < 2:
        raise InvalidClassCount(n_classes)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model.head = nn.Linear(model.head.in_features, n_classes)
    return model


def set_trainable(model: ClassifierModel, freeze_fraction: float = 0.0) -> None:
    """Freeze the first ``freeze_fraction`` of base parameter tensors."""
    if not 0.0 <= freeze_fraction <= 1.0:
        raise ValueError("freeze_fraction must lie in [0, 1]")
    params = list(model.base.parameters())
    cut = int(round(freeze_fraction * len(params)))
    for i, p in enumerate(params):
        p.requires_grad_(i >= cut)
    for p in list(model.neck.parameters()) + list(model.head.parameters()):
        p.requires_grad_(True)


def state_fingerprint(module: nn.Module) -> str:
    h = hashlib.sha256()
    for key, tensor in sorted(module.state_dict().items()):
        h.update(key.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def to_nchw(tensors) -> torch.Tensor:
    arr = np.asarray(tensors, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def check_batch(tensors, name: str) -> np.ndarray:
    arr = np.asarray(tensors)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ShapeMismatch(f"expected N x H x W x 3 tensors, got shape {arr.shape}")
    if arr.shape[0] and min(arr.shape[1:3]) < MIN_INPUT[name]:
        raise ShapeMismatch(f"{name} needs inputs of at least {MIN_INPUT[name]} pixels")
    return arr


class FeatureExtractor:
    """Frozen convolutional base followed by global average pooling."""

    def __init__(self, spec: BackboneSpec, model: ClassifierModel):
        self.spec = spec
        self.module = nn.Sequential(model.normalise, model.base,
                                    nn.AdaptiveAvgPool2d(1), nn.Flatten())
        self.module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.dim = FEATURE_DIMS[spec.name]
        self._fingerprint = None

    def fingerprint(self) -> str:
        if self._fingerprint is None:
            self._fingerprint = state_fingerprint(self.module)
        return self._fingerprint

    def __call__(self, tensors, batch_size: int = 16) -> np.ndarray:
        arr = check_batch(tensors, self.spec.name)
        out = np.zeros((arr.shape[0], self.dim), dtype=np.float64)
        with torch.inference_mode():
            for start in range(0, arr.shape[0], batch_size):
                batch = to_nchw(arr[start:start + batch_size])
                out[start:start + batch.shape[0]] = self.module(batch).double().numpy()
        return out


@dataclass
class FeatureMatrix:
    features: np.ndarray
    ids: List[str] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeMismatch("feature matrix must be two-dimensional")
        if self.ids and len(self.ids) != self.features.shape[0]:
            raise ShapeMismatch("ids do not align with feature rows")
        if self.labels and len(self.labels) != self.features.shape[0]:
            raise ShapeMismatch("labels do not align with feature rows")
        if not np.all(np.isfinite(self.features)):
            raise ShapeMismatch("feature matrix contains non-finite values")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, ids: Sequence[str]) -> "FeatureMatrix":
        index = {r: i for i, r in enumerate(self.ids)}
        rows = [index[i] for i in ids]
        labels = [self.labels[r] for r in rows] if self.labels else []
        return FeatureMatrix(self.features[rows], list(ids), labels)


def make_feature_extractor(spec: BackboneSpec, seed: int = 0) -> FeatureExtractor:
    if spec.weight_init != "pretrained":
        log.warning("feature extractor for %s uses randomly initialised weights",
                    spec.name)
    return FeatureExtractor(spec, build_backbone(spec, seed))


def extract_features(extractor: FeatureExtractor, tensors, ids: Optional[Sequence[str]] = None,
                     labels: Optional[Sequence[str]] = None, batch_size: int = 16) -> FeatureMatrix:
    arr = np.asarray(tensors)
    if arr.size == 0 and arr.ndim <= 1:
        return FeatureMatrix(np.zeros((0, extractor.dim)), [], [])
    feats = extractor(arr, batch_size=batch_size)
    return FeatureMatrix(feats, list(ids or []), list(labels or []))
