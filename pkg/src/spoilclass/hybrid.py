"""Classical classifier heads on frozen backbone features."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import joblib
import numpy as np
from sklearn.ensemble import BaggingClassifier
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC
from sklearn.tree import DecisionTreeClassifier

from . import kernels
from .backbones import (BackboneSpec, FeatureExtractor, FeatureMatrix, extract_features,
                        make_feature_extractor)
from .dataset import FoldPlan, ImageBank
from .errors import (ConfigError, DegenerateFeatures, DimensionMismatch,
                     InsufficientSamples, StaleExtractor)


class HybridHeadKind(str, enum.Enum):
    KNN = "knn"
    DECISION_TREE = "decision_tree"
    SVM = "svm"
    ENSEMBLE = "ensemble"

    @property
    def display(self) -> str:
        return {"knn": "knn", "decision_tree": "DT", "svm": "SVM",
                "ensemble": "Ensemble"}[self.value]


_SCALED = (HybridHeadKind.KNN, HybridHeadKind.SVM)
HEAD_DEFAULTS = {
    HybridHeadKind.KNN: {"k": 5},
    HybridHeadKind.DECISION_TREE: {},
    HybridHeadKind.SVM: {"kernel": "linear", "C": 1.0},
    HybridHeadKind.ENSEMBLE: {"n_estimators": 100},
}


class KnnHead:
    """Euclidean k-nearest-neighbour vote over integer class indices."""

    def __init__(self, k: int = 5):
        if k < 1:
            raise ConfigError("head.k", "must be at least 1")
        self.k = k

    def fit(self, x, y, n_classes):
        self.train_ = np.ascontiguousarray(x, dtype=np.float64)
        self.labels_ = np.asarray(y, dtype=np.int64)
        self.n_classes_ = n_classes
        return self

    def predict(self, x):
        k = min(self.k, self.train_.shape[0])
        return kernels.knn_vote(self.train_, self.labels_, x, k, self.n_classes_)


def _make_head(kind: HybridHeadKind, config: dict, seed: int):
    cfg = {**HEAD_DEFAULTS[kind], **(config or {})}
    if kind is HybridHeadKind.KNN:
        return KnnHead(int(cfg["k"]))
    if kind is HybridHeadKind.DECISION_TREE:
        return DecisionTreeClassifier(random_state=seed,
                                      **{k: v for k, v in cfg.items() if k != "k"})
    if kind is HybridHeadKind.SVM:
        return SVC(kernel=cfg["kernel"], C=float(cfg["C"]), random_state=seed)
    return BaggingClassifier(DecisionTreeClassifier(), n_estimators=int(cfg["n_estimators"]),
                             random_state=seed)


@dataclass
class HybridModel:
    kind: HybridHeadKind
    head: object
    scaler: Optional[StandardScaler]
    vocabulary: tuple
    dim: int
    extractor_fingerprint: Optional[str] = None
    fold_index: int = 0
    seed: int = 0
    head_config: dict = field(default_factory=dict)
    extractor: Optional[FeatureExtractor] = field(default=None, repr=False)

    @property
    def name(self) -> str:
        base = self.extractor.spec.model_name if self.extractor is not None else "features"
        return base + self.kind.display


def train_hybrid(features, labels: Sequence[str], kind, head_config: Optional[dict] = None,
                 seed: int = 0, vocabulary: Optional[Sequence[str]] = None,
                 extractor: Optional[FeatureExtractor] = None) -> HybridModel:
    """Fit a classical head on an ``N x D`` feature matrix."""
    kind = HybridHeadKind(kind)
    x = features.features if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    labels = list(labels)
    if x.ndim != 2 or x.shape[0] != len(labels):
        raise DimensionMismatch("features and labels are not aligned")
    vocab = tuple(vocabulary) if vocabulary is not None else tuple(sorted(set(labels)))
    n_classes = len(vocab)
    if x.shape[0] < n_classes:
        raise InsufficientSamples(f"{x.shape[0]} samples for {n_classes} classes")
    index = {v: i for i, v in enumerate(vocab)}
    y = np.array([index[v] for v in labels], dtype=np.int64)
    scaler = None
    if kind in _SCALED:
        if np.all(np.ptp(x, axis=0) == 0.0):
            raise DegenerateFeatures(f"{kind.value} needs features with non-zero variance")
        scaler = StandardScaler().fit(x)
        x = scaler.transform(x)
    head = _make_head(kind, head_config, seed)
    if isinstance(head, KnnHead):
        head.fit(x, y, n_classes)
    else:
        head.fit(x, y)
    return HybridModel(kind, head, scaler, vocab, features_dim(x),
                       extractor.fingerprint() if extractor is not None else None,
                       seed=seed, head_config=dict(head_config or {}), extractor=extractor)


def features_dim(x) -> int:
    return int(np.asarray(x).shape[1])


def predict_hybrid(model: HybridModel, inputs, extractor: Optional[FeatureExtractor] = None):
    """Labels for pre-extracted features (2-D) or standardised images (4-D)."""
    if isinstance(inputs, FeatureMatrix):
        x = inputs.features
    else:
        x = np.asarray(inputs)
        if x.ndim == 4:
            extractor = extractor or model.extractor
            if extractor is None:
                raise DimensionMismatch("image input needs a feature extractor")
            if (model.extractor_fingerprint is not None
                    and extractor.fingerprint() != model.extractor_fingerprint):
                raise StaleExtractor("extractor weights differ from those used in training")
            x = extractor(x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise DimensionMismatch(f"expected {model.dim}-d features, got shape {x.shape}")
    if model.scaler is not None:
        x = model.scaler.transform(x)
    idx = np.asarray(model.head.predict(x), dtype=np.int64)
    return [model.vocabulary[i] for i in idx]


def save_hybrid(model: HybridModel, path) -> Path:
    path = Path(path)
    payload = {k: getattr(model, k) for k in
               ("kind", "head", "scaler", "vocabulary", "dim", "extractor_fingerprint",
                "fold_index", "seed", "head_config")}
    joblib.dump(payload, path)
    return path


def load_hybrid(path, extractor: Optional[FeatureExtractor] = None) -> HybridModel:
    payload = joblib.load(path)
    model = HybridModel(**payload)
    if extractor is not None:
        if payload["extractor_fingerprint"] != extractor.fingerprint():
            raise StaleExtractor(f"{path} was trained on a different extractor")
        model.extractor = extractor
    return model


def run_hybrid_repetitions(spec: BackboneSpec, kind, foldplan: FoldPlan, data: ImageBank,
                           head_config: Optional[dict] = None, seed: int = 0,
                           extractor: Optional[FeatureExtractor] = None,
                           features: Optional[FeatureMatrix] = None) -> List[HybridModel]:
    """One head per fold, fit on that fold's training ids with ``seed + fold``."""
    if foldplan.k != 5 or len(foldplan.folds) != 5:
        raise ConfigError("folds.k", "five-fold plans are required")
    extractor = extractor or make_feature_extractor(spec, seed)
    if features is None:
        ids = sorted({i for tr, va in foldplan.folds for i in tr + va})
        features = extract_features(extractor, data.tensors(ids), ids,
                                    [data.labels[i] for i in ids])
    models = []
    for i, (train_ids, _) in enumerate(foldplan.folds):
        sub = features.subset(train_ids)
        m = train_hybrid(sub, sub.labels, kind, head_config, seed + i, data.vocabulary,
                         extractor)
        m.fold_index = i
        models.append(m)
    return models
