"""Manifests, image standardisation and stratified split/fold plans."""
from __future__ import annotations

import csv
import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from sklearn.model_selection import StratifiedKFold

from .errors import (ConfigError, DecodeError, DuplicateId, InsufficientClassSamples,
                     MissingFile, UnknownLabel)

TARGETS = ("particle_size", "relative_density", "fabric_structure", "plasticity",
           "bmac_category")
DEFAULT_VOCABULARY = ("Cat-1", "Cat-2", "Cat-3", "Cat-4",
                      "Cat-1 or 2", "Cat-2 or 3", "Cat-3 or 4")
IMAGE_SIZE = 512

_HEADER_RE = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\[(.*)\])?\s*$")


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: Path
    labels: Mapping[str, str]
    size: Optional[Tuple[int, int]] = None  # native (width, height)


@dataclass
class Manifest:
    records: List[ImageRecord]
    vocabularies: Dict[str, Tuple[str, ...]]
    path: Optional[Path] = None

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def by_id(self) -> Dict[str, ImageRecord]:
        return {r.id: r for r in self.records}

    def labels(self, target: str, ids: Optional[Sequence[str]] = None) -> List[str]:
        if ids is None:
            return [r.labels[target] for r in self.records]
        lookup = self.by_id()
        return [lookup[i].labels[target] for i in ids]


def _parse_header(cells):
    if len(cells) < 2 + len(TARGETS):
        raise DecodeError(f"manifest header needs id, path and {len(TARGETS)} label columns")
    names = []
    vocabs = {}
    for cell in cells[2:]:
        match = _HEADER_RE.match(cell)
        if not match:
            raise DecodeError(f"cannot parse header cell {cell!r}")
        name, vocab = match.group(1), match.group(2)
        names.append(name)
        if vocab is not None:
            vocabs[name] = tuple(v.strip() for v in vocab.split("|") if v.strip())
        else:
            vocabs[name] = DEFAULT_VOCABULARY
    missing = [t for t in TARGETS if t not in names]
    if missing:
        raise DecodeError(f"manifest lacks label columns {missing}")
    return names, vocabs


def load_manifest(path, check_files: bool = True, delimiter: str = ",") -> Manifest:
    """Read a manifest and validate ids, labels and image files.

    Header: ``id, path, <target>[Cat-1|Cat-2|...], ...``. A target without a
    bracketed vocabulary gets :data:`DEFAULT_VOCABULARY`. Image paths are
    resolved against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest {path} does not exist")
    root = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DecodeError(f"manifest {path} is empty") from None
        names, vocabs = _parse_header(header)
        records = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DecodeError(f"{path}:{lineno}: expected {len(header)} columns")
            rid = row[0].strip()
            if rid in seen:
                raise DuplicateId(f"duplicate id {rid!r} at line {lineno}")
            seen.add(rid)
            labels = {}
            for name, value in zip(names, row[2:]):
                value = value.strip()
                if value not in vocabs[name]:
                    raise UnknownLabel(name, value)
                labels[name] = value
            img_path = (root / row[1].strip()).resolve()
            size = None
            if check_files:
                if not img_path.is_file():
                    raise MissingFile(f"image {img_path} for {rid!r} does not exist")
                try:
                    with Image.open(img_path) as im:
                        size = im.size
                except (UnidentifiedImageError, OSError) as exc:
                    raise DecodeError(f"cannot decode {img_path}: {exc}") from exc
            records.append(ImageRecord(rid, img_path, labels, size))
    return Manifest(records, {n: vocabs[n] for n in names}, path)


def write_manifest(path, rows, vocabularies: Mapping[str, Sequence[str]]):
    """Write ``(id, relative_path, labels_dict)`` rows with a vocabulary header."""
    header = ["id", "path"] + [f"{t}[{'|'.join(vocabularies[t])}]" for t in TARGETS]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rid, rel, labels in rows:
            writer.writerow([rid, rel] + [labels[t] for t in TARGETS])


def standardise(source, size: int = IMAGE_SIZE) -> np.ndarray:
    """Decode to RGB and stretch to ``size x size``; float32 in ``[0, 1]``.

    Accepts an :class:`ImageRecord`, a path, a PIL image or a uint8 array.
    Bilinear interpolation with no aspect-ratio preservation.
    """
    if isinstance(source, ImageRecord):
        source = source.path
    if isinstance(source, (str, Path)):
        try:
            with Image.open(source) as im:
                im.load()
                img = im.copy()
        except FileNotFoundError as exc:
            raise MissingFile(str(exc)) from exc
        except (UnidentifiedImageError, OSError) as exc:
            raise DecodeError(f"cannot decode {source}: {exc}") from exc
    elif isinstance(source, Image.Image):
        img = source
    else:
        arr = np.asarray(source)
        if arr.dtype != np.uint8:
            raise DecodeError(f"array input must be uint8, got {arr.dtype}")
        img = Image.fromarray(arr)
    if img.mode != "RGB":
        warnings.warn(f"converting {img.mode} image to RGB", stacklevel=2)
        img = img.convert("RGB")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / np.float32(255.0)


# ---------------------------------------------------------------------------
# split and fold plans
# ---------------------------------------------------------------------------

@dataclass
class SplitPlan:
    train_ids: List[str]
    test_ids: List[str]
    target: str
    seed: int
    ratio: float = 0.8

    def to_dict(self):
        return {"kind": "split", "target": self.target, "seed": self.seed,
                "ratio": self.ratio, "train": list(self.train_ids),
                "test": list(self.test_ids)}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["train"]), list(d["test"]), d["target"], d["seed"], d["ratio"])


@dataclass
class FoldPlan:
    folds: List[Tuple[List[str], List[str]]]
    target: str
    seed: int
    k: int = 5

    def to_dict(self):
        return {"kind": "folds", "target": self.target, "seed": self.seed, "k": self.k,
                "folds": [{"train": list(t), "validation": list(v)} for t, v in self.folds]}

    @classmethod
    def from_dict(cls, d):
        folds = [(list(f["train"]), list(f["validation"])) for f in d["folds"]]
        return cls(folds, d["target"], d["seed"], d["k"])


def save_plan(plan, path):
    Path(path).write_text(json.dumps(plan.to_dict(), indent=2), encoding="utf-8")


def load_plan(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return SplitPlan.from_dict(d) if d["kind"] == "split" else FoldPlan.from_dict(d)


def _ids_and_labels(records, target):
    ids = [r.id for r in records]
    labels = [r.labels[target] for r in records]
    return ids, labels


def split_train_test(records, target: str, ratio: float = 0.8, seed: int = 0) -> SplitPlan:
    """Stratified hold-out split; every class lands on both sides."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError("split.ratio", f"must lie strictly between 0 and 1, got {ratio}")
    ids, labels = _ids_and_labels(records, target)
    counts = Counter(labels)
    for label, n in sorted(counts.items()):
        if n < 2:
            raise InsufficientClassSamples(label, n, 2)
    rng = np.random.default_rng(seed)
    test = set()
    for label in sorted(counts):
        members = [i for i, lab in zip(ids, labels) if lab == label]
        n_test = int(math.floor((1.0 - ratio) * len(members) + 0.5))
        n_test = min(max(n_test, 1), len(members) - 1)
        order = rng.permutation(len(members))
        test.update(members[j] for j in order[:n_test])
    return SplitPlan([i for i in ids if i not in test], [i for i in ids if i in test],
                     target, seed, ratio)


def make_folds(split: SplitPlan, records, k: int = 5, seed: Optional[int] = None,
               target: Optional[str] = None) -> FoldPlan:
    """Stratified k-fold plan over the split's training ids."""
    target = target or split.target
    seed = split.seed if seed is None else seed
    lookup = {r.id: r for r in records}
    train = list(split.train_ids)
    labels = [lookup[i].labels[target] for i in train]
    for label, n in sorted(Counter(labels).items()):
        if n < k:
            raise InsufficientClassSamples(label, n, k)
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    folds = []
    for tr, va in skf.split(np.zeros(len(train)), labels):
        folds.append(([train[i] for i in tr], [train[i] for i in va]))
    return FoldPlan(folds, target, seed, k)


# ---------------------------------------------------------------------------
# in-memory image access for the trainers
# ---------------------------------------------------------------------------

@dataclass
class ImageBank:
    """Id-addressed standardised tensors and labels for one target.

    Tensors are cached as uint8 to keep memory at ~0.8 MB per 512x512 image.
    """

    labels: Dict[str, str]
    vocabulary: Tuple[str, ...]
    size: int = IMAGE_SIZE
    records: Dict[str, ImageRecord] = field(default_factory=dict)
    _cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @classmethod
    def from_manifest(cls, manifest: Manifest, target: str, size: int = IMAGE_SIZE):
        present = {r.labels[target] for r in manifest}
        vocab = tuple(v for v in manifest.vocabularies[target] if v in present)
        return cls({r.id: r.labels[target] for r in manifest}, vocab, size,
                   {r.id: r for r in manifest})

    @classmethod
    def from_arrays(cls, ids, tensors, labels, vocabulary=None):
        """Wrap already-standardised float tensors (N x H x W x 3, values in [0, 1])."""
        tensors = np.asarray(tensors)
        vocab = tuple(vocabulary) if vocabulary is not None else tuple(sorted(set(labels)))
        bank = cls(dict(zip(ids, labels)), vocab, tensors.shape[1])
        for i, t in zip(ids, tensors):
            bank._cache[i] = np.clip(np.floor(t * 255.0 + 0.5), 0, 255).astype(np.uint8)
        return bank

    def tensor(self, rid: str) -> np.ndarray:
        cached = self._cache.get(rid)
        if cached is None:
            t = standardise(self.records[rid], self.size)
            cached = np.clip(np.floor(t * 255.0 + 0.5), 0, 255).astype(np.uint8)
            self._cache[rid] = cached
        return cached.astype(np.float32) / np.float32(255.0)

    def tensors(self, ids: Sequence[str]) -> np.ndarray:
        if len(ids) == 0:
            return np.zeros((0, self.size, self.size, 3), dtype=np.float32)
        return np.stack([self.tensor(i) for i in ids])

    def gray(self, rid: str) -> np.ndarray:
        t = self.tensor(rid)
        return t @ np.array([0.299, 0.587, 0.114], dtype=np.float32)

    def label_indices(self, ids: Sequence[str]) -> np.ndarray:
        index = {v: j for j, v in enumerate(self.vocabulary)}
        return np.array([index[self.labels[i]] for i in ids], dtype=np.int64)
