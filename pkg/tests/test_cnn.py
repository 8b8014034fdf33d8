import json

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from spoilclass.backbones import BackboneSpec, build_backbone, replace_head
from spoilclass.cnn import (Hyperparams, cross_entropy, cross_entropy_grad, predict,
                            predict_proba, run_repetitions, softmax, train_fold)
from spoilclass.dataset import FoldPlan, ImageBank
from spoilclass.errors import ConfigError, DivergenceDetected, EmptyFold
from spoilclass.synth import texture_arrays


def micro_net_loss(params, x, y):
    """Two-layer tanh network; returns mean cross-entropy."""
    w1, b1, w2, b2 = params
    return cross_entropy(np.tanh(x @ w1 + b1) @ w2 + b2, y)


def micro_net_grad(params, x, y):
    w1, b1, w2, b2 = params
    h = np.tanh(x @ w1 + b1)
    g_logits = cross_entropy_grad(h @ w2 + b2, y)
    g_h = g_logits @ w2.T * (1 - h ** 2)
    return [x.T @ g_h, g_h.sum(0), h.T @ g_logits, g_logits.sum(0)]


def central_differences(f, params, eps=1e-6):
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + eps
            up = f(params)
            p[i] = old - eps
            down = f(params)
            p[i] = old
            g[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)


def test_gradient_check_numpy_reference(rng):
    x = rng.normal(size=(7, 5))
    y = rng.integers(0, 3, 7)
    params = [rng.normal(size=(5, 4)), rng.normal(size=4), rng.normal(size=(4, 3)),
              rng.normal(size=3)]
    numeric = central_differences(lambda p: micro_net_loss(p, x, y), params)
    for a, b in zip(micro_net_grad(params, x, y), numeric):
        assert rel_error(a, b) < 1e-4


def test_gradient_check_training_loss(rng):
    # the loss used by the trainer, differentiated by autograd
    x = torch.tensor(rng.normal(size=(6, 5)))
    y = torch.tensor(rng.integers(0, 4, 6))
    w = torch.tensor(rng.normal(size=(5, 4)), requires_grad=True)
    F.cross_entropy(torch.tanh(x @ w), y).backward()

    def f(params):
        return float(F.cross_entropy(torch.tanh(x @ torch.tensor(params[0])), y))
    numeric = central_differences(f, [w.detach().numpy().copy()])[0]
    assert rel_error(w.grad.numpy(), numeric) < 1e-4


def test_softmax_and_loss_consistent_with_torch(rng):
    logits = rng.normal(size=(9, 4)) * 10
    y = rng.integers(0, 4, 9)
    p = softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    ref = F.cross_entropy(torch.tensor(logits), torch.tensor(y)).item()
    assert cross_entropy(logits, y) == pytest.approx(ref, rel=1e-12)


def test_hyperparam_validation():
    with pytest.raises(ConfigError):
        Hyperparams(learning_rate=0)
    with pytest.raises(ConfigError):
        Hyperparams(max_epochs=5, patience=5)
    with pytest.raises(ConfigError):
        Hyperparams(optimiser="sgd")


@pytest.fixture(scope="module")
def toy():
    ids, x, labels = texture_arrays(8, size=32, seed=2)
    keep = [i for i, lab in enumerate(labels) if lab in ("Cat-1", "Cat-4")]
    bank = ImageBank.from_arrays([ids[i] for i in keep], x[keep], [labels[i] for i in keep])
    ids = [ids[i] for i in keep]
    return bank, ids


def _fresh(n=2, seed=0):
    m = build_backbone(BackboneSpec("ResNet18", "random"), seed)
    return replace_head(m, n, seed)


def test_toy_training_reduces_loss(toy):
    bank, ids = toy
    fold = (ids[::2] + ids[1::2][:4], ids[1::2][4:])
    hp = Hyperparams(learning_rate=1e-3, batch_size=8, max_epochs=8, patience=7)
    tm = train_fold(_fresh(), fold, bank, hp, seed=0)
    c = tm.curves
    assert c.train_loss[-1] < c.train_loss[0]
    assert tm.selected_epoch == int(np.argmin(c.val_loss))
    probs = predict_proba(tm, bank.tensors(ids))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert predict(tm, bank.tensors(ids)).shape == (len(ids),)


def test_early_stopping_and_checkpoint(toy):
    bank, ids = toy
    hp = Hyperparams(learning_rate=1e-2, batch_size=16, max_epochs=30, patience=2)
    tm = train_fold(_fresh(), (ids[:12], ids[12:]), bank, hp, seed=1)
    n = len(tm.curves)
    assert n <= 30
    if n < 30:
        assert n - 1 - tm.selected_epoch == hp.patience


def test_divergence_is_reported(toy):
    bank, ids = toy
    m = _fresh()
    with torch.no_grad():
        m.head.weight.fill_(float("nan"))
    with pytest.raises(DivergenceDetected):
        train_fold(m, (ids[:12], ids[12:]), bank, Hyperparams(max_epochs=3, patience=1))


def test_empty_fold(toy):
    bank, ids = toy
    with pytest.raises(EmptyFold):
        train_fold(_fresh(), (ids, []), bank, Hyperparams(max_epochs=3, patience=1))


def test_repetitions_and_save(toy, tmp_path):
    bank, ids = toy
    folds = [(ids[:i] + ids[i + 3:], ids[i:i + 3]) for i in range(0, 15, 3)]
    plan = FoldPlan(folds, "particle_size", 0)
    hp = Hyperparams(learning_rate=1e-3, batch_size=16, max_epochs=2, patience=1)
    models = run_repetitions(BackboneSpec("ResNet18", "random"), plan, bank, hp, seed=5)
    assert [m.fold_index for m in models] == list(range(5))
    assert [m.seed for m in models] == [5, 6, 7, 8, 9]
    path = models[0].save(tmp_path)
    meta = json.loads(path.with_suffix(".json").read_text())
    assert meta["selected_epoch"] == models[0].selected_epoch
    assert set(torch.load(path, weights_only=True)) == set(models[0].model.state_dict())
    with pytest.raises(ConfigError):
        run_repetitions(BackboneSpec("ResNet18", "random"),
                        FoldPlan(folds[:3], "particle_size", 0, 3), bank, hp)
