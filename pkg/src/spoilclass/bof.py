"""Bag-of-features baseline: fast-Hessian/Haar descriptors, k-means words, linear SVM.

The descriptor follows the SURF recipe (box-filter Hessian detector on an
integral image, dominant Haar orientation, 4x4x4 Haar sums). Keypoints are
kept at their grid position without sub-pixel refinement.
"""
from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from sklearn.svm import SVC

from . import kernels
from .dataset import FoldPlan, ImageBank
from .errors import (ConfigError, DimensionMismatch, SingleClassInput,
                     TooFewDescriptors)

log = logging.getLogger(__name__)

DESCRIPTOR_TAG = "surf64-fasthessian"
DESCRIPTOR_DIM = 64
OCTAVE_FILTERS = ((9, 15, 21, 27), (15, 27, 39, 51), (27, 51, 75, 99), (51, 99, 147, 195))


@dataclass(frozen=True)
class DetectorConfig:
    threshold: float = 4e-4
    octaves: int = 3
    init_step: int = 2
    max_keypoints: Optional[int] = 500
    upright: bool = False

    def __post_init__(self):
        if not 1 <= self.octaves <= len(OCTAVE_FILTERS):
            raise ConfigError("bof.octaves", f"must lie in 1..{len(OCTAVE_FILTERS)}")


@dataclass
class DescriptorSet:
    descriptors: np.ndarray  # (n, 64)
    rows: np.ndarray
    cols: np.ndarray
    scales: np.ndarray
    orientations: np.ndarray
    responses: np.ndarray

    def __len__(self):
        return self.descriptors.shape[0]

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        return cls(np.zeros((0, DESCRIPTOR_DIM)), z, z.copy(), z.copy(), z.copy(), z.copy())


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luma of an RGB image in [0, 1]; 2-D input passes through."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.max(initial=0.0) > 1.0:
        image = image / 255.0
    return image @ np.array([0.299, 0.587, 0.114])


def detect_keypoints(ii: np.ndarray, config: DetectorConfig):
    """Scale-space maxima of the Hessian determinant above ``config.threshold``."""
    h = ii.shape[0] - 1
    w = ii.shape[1] - 1
    found = []
    for octave in range(config.octaves):
        filters = OCTAVE_FILTERS[octave]
        step = config.init_step * 2 ** octave
        layers = [kernels.hessian_response(ii, f, step) for f in filters]
        det = np.stack([d for d, _ in layers])
        margin = (filters[-1] - 1) // 2 + 1
        rows = np.arange(det.shape[1]) * step
        cols = np.arange(det.shape[2]) * step
        inside = (((rows >= margin) & (rows < h - margin))[:, None]
                  & ((cols >= margin) & (cols < w - margin))[None, :])
        local_max = ndimage.maximum_filter(det, size=3, mode="constant", cval=-np.inf)
        for layer in (1, 2):
            hit = (det[layer] >= local_max[layer]) & (det[layer] > config.threshold) & inside
            ii_r, ii_c = np.nonzero(hit)
            scale = 1.2 * filters[layer] / 9.0
            for r, c in zip(ii_r, ii_c):
                found.append((det[layer, r, c], rows[r], cols[c], scale))
    if not found:
        return np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0)
    arr = np.array(found, dtype=np.float64)
    # strongest first; stable so equal responses keep discovery order
    order = np.argsort(-arr[:, 0], kind="stable")
    if config.max_keypoints is not None:
        order = order[:config.max_keypoints]
    arr = arr[order]
    return arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 0]


def extract_descriptors(image: np.ndarray, config: DetectorConfig = DetectorConfig()) -> DescriptorSet:
    """Detect interest points on the grayscale image and describe each with 64 values."""
    gray = to_gray(image)
    ii = kernels.integral_image(gray)
    rows, cols, scales, responses = detect_keypoints(ii, config)
    if rows.size == 0:
        return DescriptorSet.empty()
    if config.upright:
        angles = np.zeros_like(rows)
    else:
        angles = kernels.dominant_orientation(ii, rows, cols, scales)
    desc = kernels.haar_descriptors(ii, rows, cols, scales, angles)
    return DescriptorSet(desc, rows, cols, scales, angles, responses)


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

@dataclass
class VisualVocabulary:
    centroids: np.ndarray
    seed: int
    inertia_history: List[float]
    descriptor_type: str = DESCRIPTOR_TAG
    _tree: Optional[cKDTree] = field(default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def n_iter(self) -> int:
        return len(self.inertia_history) - 1

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.centroids)
        return self._tree

    def fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.centroids).tobytes()).hexdigest()

    def to_dict(self):
        return {"K": self.size, "seed": self.seed, "descriptor_type": self.descriptor_type,
                "inertia_history": list(self.inertia_history),
                "centroids": self.centroids.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["centroids"], dtype=np.float64), d["seed"],
                   list(d["inertia_history"]), d["descriptor_type"])


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1), out=d2)
    return centers


def build_vocabulary(descriptors: np.ndarray, k: int, seed: int = 0, max_iter: int = 300,
                     tol: float = 1e-4) -> VisualVocabulary:
    """Lloyd k-means with k-means++ seeding.

    ``inertia_history[i]`` is the within-cluster sum of squares after the
    i-th assignment step; a step that would raise it is discarded and ends the
    run, so the history never increases.
    """
    x = np.ascontiguousarray(descriptors, dtype=np.float64)
    if k < 1:
        raise ConfigError("bof.vocab_size", "must be positive")
    if x.shape[0] < k:
        raise TooFewDescriptors(f"{x.shape[0]} descriptors cannot form {k} words")
    rng = np.random.default_rng(seed)
    centers = kmeans_plusplus(x, k, rng)
    labels, d2 = kernels.nearest_centroid(x, centers)
    history = [float(d2.sum())]
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            far = np.argsort(-d2, kind="stable")[:empty.size]
            new[empty] = x[far]
        new_labels, new_d2 = kernels.nearest_centroid(x, new)
        inertia = float(new_d2.sum())
        if inertia > history[-1]:
            break
        previous = history[-1]
        centers, labels, d2 = new, new_labels, new_d2
        history.append(inertia)
        if previous - inertia <= tol * previous:
            break
    return VisualVocabulary(centers, seed, history)


def assign_words(descriptors: np.ndarray, vocab: VisualVocabulary, exact: bool = True,
                 eps: float = 0.5) -> np.ndarray:
    """Visual-word index per descriptor via the k-d tree (``eps`` > 0 is approximate)."""
    d = np.asarray(descriptors, dtype=np.float64)
    if d.ndim != 2 or d.shape[1] != vocab.centroids.shape[1]:
        raise DimensionMismatch(
            f"descriptors of shape {d.shape} do not match {vocab.centroids.shape[1]}-d words")
    if d.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    _, idx = vocab.tree().query(d, k=1, eps=0.0 if exact else eps)
    return np.asarray(idx, dtype=np.int64)


def encode(descriptors, vocab: VisualVocabulary, normalise: str = "l1", exact: bool = True,
           eps: float = 0.5) -> np.ndarray:
    """Occurrence histogram of visual words, length ``vocab.size``.

    ``normalise`` is ``"l1"`` (sums to one) or ``"none"`` (raw counts). An
    empty descriptor set gives a zero histogram and a warning.
    """
    if isinstance(descriptors, DescriptorSet):
        descriptors = descriptors.descriptors
    words = assign_words(descriptors, vocab, exact, eps)
    hist = np.bincount(words, minlength=vocab.size).astype(np.float64)
    if words.size == 0:
        warnings.warn("empty descriptor set encoded as a zero histogram", stacklevel=2)
        return hist
    if normalise == "l1":
        hist /= hist.sum()
    elif normalise != "none":
        raise ConfigError("bof.normalise", f"unknown normalisation {normalise!r}")
    return hist


# ---------------------------------------------------------------------------
# classifier
# ---------------------------------------------------------------------------

@dataclass
class BofModel:
    vocabulary: VisualVocabulary
    svm: SVC
    vocabulary_labels: tuple
    detector: DetectorConfig
    normalise: str = "l1"
    exact: bool = True
    eps: float = 0.5
    fold_index: int = 0
    seed: int = 0

    def histograms(self, descriptor_sets) -> np.ndarray:
        return np.stack([encode(d, self.vocabulary, self.normalise, self.exact, self.eps)
                         for d in descriptor_sets]) if len(descriptor_sets) else \
            np.zeros((0, self.vocabulary.size))

    def predict(self, descriptor_sets) -> List[str]:
        h = self.histograms(descriptor_sets)
        return [self.vocabulary_labels[i] for i in self.svm.predict(h)]


def train_bof(histograms: np.ndarray, labels: Sequence[str], seed: int = 0, C: float = 1.0,
              vocabulary: Optional[Sequence[str]] = None):
    """Linear-kernel SVM on histogram vectors; returns ``(svm, label_vocabulary)``."""
    labels = list(labels)
    if len(set(labels)) < 2:
        raise SingleClassInput("a classifier needs at least two classes")
    vocab = tuple(vocabulary) if vocabulary is not None else tuple(sorted(set(labels)))
    index = {v: i for i, v in enumerate(vocab)}
    y = np.array([index[v] for v in labels])
    svm = SVC(kernel="linear", C=C, random_state=seed)
    svm.fit(np.asarray(histograms, dtype=np.float64), y)
    return svm, vocab


@dataclass
class BofSettings:
    vocab_size: int = 500
    max_descriptors: int = 50_000
    C: float = 1.0
    normalise: str = "l1"
    exact: bool = True
    eps: float = 0.5
    max_iter: int = 300
    tol: float = 1e-4
    detector: DetectorConfig = field(default_factory=DetectorConfig)


class DescriptorCache:
    """Per-image descriptor sets for one :class:`ImageBank`."""

    def __init__(self, data: ImageBank, config: DetectorConfig):
        self.data = data
        self.config = config
        self._sets: Dict[str, DescriptorSet] = {}

    def __getitem__(self, rid: str) -> DescriptorSet:
        if rid not in self._sets:
            self._sets[rid] = extract_descriptors(self.data.gray(rid), self.config)
        return self._sets[rid]

    def many(self, ids) -> List[DescriptorSet]:
        return [self[i] for i in ids]


def fit_bof(train_ids: Sequence[str], data: ImageBank, settings: BofSettings, seed: int,
            cache: Optional[DescriptorCache] = None, fold_index: int = 0) -> BofModel:
    cache = cache or DescriptorCache(data, settings.detector)
    sets = cache.many(train_ids)
    pooled = np.concatenate([s.descriptors for s in sets]) if sets else np.zeros((0, 64))
    rng = np.random.default_rng(seed)
    if pooled.shape[0] > settings.max_descriptors:
        keep = np.sort(rng.choice(pooled.shape[0], settings.max_descriptors, replace=False))
        pooled = pooled[keep]
    vocab = build_vocabulary(pooled, settings.vocab_size, seed, settings.max_iter, settings.tol)
    model = BofModel(vocab, None, data.vocabulary, settings.detector, settings.normalise,
                     settings.exact, settings.eps, fold_index, seed)
    hist = model.histograms(sets)
    model.svm, _ = train_bof(hist, [data.labels[i] for i in train_ids], seed, settings.C,
                             data.vocabulary)
    return model


def run_bof_repetitions(foldplan: FoldPlan, data: ImageBank, settings: BofSettings = BofSettings(),
                        seed: int = 0, cache: Optional[DescriptorCache] = None) -> List[BofModel]:
    """Vocabulary and SVM rebuilt on each fold's training ids, seeded ``seed + fold``."""
    if foldplan.k != 5 or len(foldplan.folds) != 5:
        raise ConfigError("folds.k", "five-fold plans are required")
    cache = cache or DescriptorCache(data, settings.detector)
    return [fit_bof(tr, data, settings, seed + i, cache, i)
            for i, (tr, _) in enumerate(foldplan.folds)]
