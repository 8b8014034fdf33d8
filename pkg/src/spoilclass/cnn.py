"""Fine-tuning of classifier backbones per cross-validation fold."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .backbones import (BackboneSpec, ClassifierModel, build_backbone, check_batch,
                        replace_head, set_trainable, to_nchw)
from .dataset import FoldPlan, ImageBank
from .errors import ConfigError, DivergenceDetected, EmptyFold, InvalidClassCount

log = logging.getLogger(__name__)


@dataclass
class Hyperparams:
    learning_rate: float = 1e-5
    batch_size: int = 64
    optimiser: str = "adam"
    max_epochs: int = 100
    patience: int = 10
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weighted_loss: bool = False
    freeze_fraction: float = 0.0
    eval_batch_size: int = 32

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if not self.learning_rate > 0:
            raise ConfigError("hyperparams.learning_rate", "must be positive")
        if self.batch_size < 1:
            raise ConfigError("hyperparams.batch_size", "must be at least 1")
        if self.patience >= self.max_epochs:
            raise ConfigError("hyperparams.patience", "must be smaller than max_epochs")
        if self.optimiser != "adam":
            raise ConfigError("hyperparams.optimiser", "only 'adam' is supported")


@dataclass
class LearningCurves:
    train_loss: List[float] = field(default_factory=list)
    train_accuracy: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)


@dataclass
class TrainedModel:
    model: ClassifierModel
    fold_index: int
    hyperparams: Hyperparams
    curves: LearningCurves
    selected_epoch: int
    seed: int
    vocabulary: tuple

    def metadata(self) -> dict:
        return {
            "backbone": asdict(self.model.spec),
            "hyperparams": asdict(self.hyperparams),
            "fold_index": self.fold_index,
            "selected_epoch": self.selected_epoch,
            "seed": self.seed,
            "vocabulary": list(self.vocabulary),
            "curves": asdict(self.curves),
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = directory / f"fold{self.fold_index}"
        torch.save(self.model.state_dict(), stem.with_suffix(".pt"))
        stem.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2))
        return stem.with_suffix(".pt")


# ---------------------------------------------------------------------------
# loss: reference numpy implementation used by the gradient checks
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean negative log-softmax of the target class."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_p[np.arange(len(targets)), targets].mean())


def cross_entropy_grad(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """d(mean cross-entropy) / d(logits) = (softmax - onehot) / N."""
    g = softmax(logits)
    g[np.arange(len(targets)), targets] -= 1.0
    return g / len(targets)


def class_weights(y: np.ndarray, n_classes: int) -> torch.Tensor:
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    w = np.where(counts > 0, counts.sum() / (n_classes * np.maximum(counts, 1)), 0.0)
    return torch.tensor(w, dtype=torch.float32)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _evaluate(model, x, y, batch_size, weight=None):
    model.eval()
    total_loss = 0.0
    correct = 0
    with torch.inference_mode():
        for start in range(0, len(y), batch_size):
            xb = to_nchw(x[start:start + batch_size])
            yb = torch.from_numpy(y[start:start + batch_size])
            logits = model(xb)
            total_loss += F.cross_entropy(logits, yb, weight=weight, reduction="sum").item()
            correct += int((logits.argmax(1) == yb).sum())
    return total_loss / len(y), correct / len(y)


def train_fold(model: ClassifierModel, fold, data: ImageBank, hp: Hyperparams,
               seed: int = 0, fold_index: int = 0) -> TrainedModel:
    """Train on ``fold[0]`` ids, validate on ``fold[1]`` ids every epoch.

    The returned weights are those of the epoch with the lowest validation
    loss; training stops after ``hp.patience`` epochs without improvement.
    """
    train_ids, val_ids = fold
    if len(train_ids) == 0 or len(val_ids) == 0:
        raise EmptyFold(f"fold {fold_index} has an empty side")
    n_classes = model.n_outputs
    if n_classes < 2:
        raise InvalidClassCount(n_classes)
    x_tr = check_batch(data.tensors(train_ids), model.spec.name)
    y_tr = data.label_indices(train_ids)
    x_va = check_batch(data.tensors(val_ids), model.spec.name)
    y_va = data.label_indices(val_ids)

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    set_trainable(model, hp.freeze_fraction)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=hp.learning_rate, betas=hp.betas, eps=hp.eps)
    weight = class_weights(y_tr, n_classes) if hp.weighted_loss else None

    curves = LearningCurves()
    best_loss = math.inf
    best_epoch = -1
    best_state = None
    for epoch in range(hp.max_epochs):
        model.train()
        order = rng.permutation(len(y_tr))
        run_loss = 0.0
        correct = 0
        # the last partial batch is kept
        for start in range(0, len(order), hp.batch_size):
            idx = order[start:start + hp.batch_size]
            xb = to_nchw(x_tr[idx])
            yb = torch.from_numpy(y_tr[idx])
            opt.zero_grad()
            logits = model(xb)
            loss = F.cross_entropy(logits, yb, weight=weight)
            if not torch.isfinite(loss):
                raise DivergenceDetected(epoch, loss.item())
            loss.backward()
            opt.step()
            run_loss += loss.item() * len(idx)
            correct += int((logits.detach().argmax(1) == yb).sum())
        val_loss, val_acc = _evaluate(model, x_va, y_va, hp.eval_batch_size, weight)
        if not math.isfinite(val_loss):
            raise DivergenceDetected(epoch, val_loss)
        curves.train_loss.append(run_loss / len(y_tr))
        curves.train_accuracy.append(correct / len(y_tr))
        curves.val_loss.append(val_loss)
        curves.val_accuracy.append(val_acc)
        log.info("fold %d epoch %d: loss %.4f acc %.3f | val loss %.4f acc %.3f",
                 fold_index, epoch, curves.train_loss[-1], curves.train_accuracy[-1],
                 val_loss, val_acc)
        if val_loss < best_loss:
            best_loss = val_loss
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        elif epoch - best_epoch >= hp.patience:
            break
    model.load_state_dict(best_state)
    model.eval()
    return TrainedModel(model, fold_index, hp, curves, best_epoch, seed, data.vocabulary)


def predict_proba(model, tensors, batch_size: int = 32) -> np.ndarray:
    """Softmax class probabilities, float64, one row per input."""
    net = model.model if isinstance(model, TrainedModel) else model
    arr = check_batch(tensors, net.spec.name)
    out = np.zeros((arr.shape[0], net.n_outputs))
    net.eval()
    with torch.inference_mode():
        for start in range(0, arr.shape[0], batch_size):
            logits = net(to_nchw(arr[start:start + batch_size])).double().numpy()
            out[start:start + logits.shape[0]] = softmax(logits)
    return out


def predict(model, tensors, batch_size: int = 32) -> np.ndarray:
    return predict_proba(model, tensors, batch_size).argmax(axis=1)


def run_repetitions(spec: BackboneSpec, foldplan: FoldPlan, data: ImageBank,
                    hp: Hyperparams, seed: int = 0) -> List[TrainedModel]:
    """One freshly built model per fold, seeded with ``seed + fold_index``."""
    if foldplan.k != 5 or len(foldplan.folds) != 5:
        raise ConfigError("folds.k", "five-fold plans are required")
    trained = []
    for i, fold in enumerate(foldplan.folds):
        model = build_backbone(spec, seed=seed + i)
        replace_head(model, len(data.vocabulary), seed=seed + i)
        trained.append(train_fold(model, fold, data, hp, seed=seed + i, fold_index=i))
    return trained
