import numpy as np
import pytest

from spoilclass.backbones import BackboneSpec, FeatureMatrix, make_feature_extractor
from spoilclass.dataset import FoldPlan, ImageBank
from spoilclass.errors import (DegenerateFeatures, DimensionMismatch, InsufficientSamples,
                               StaleExtractor)
from spoilclass.hybrid import (HybridHeadKind, load_hybrid, predict_hybrid,
                               run_hybrid_repetitions, save_hybrid, train_hybrid)

KINDS = list(HybridHeadKind)


def blobs(rng, n=40, d=8, sep=20.0):
    centres = {"Cat-1": np.zeros(d), "Cat-2": np.full(d, sep)}
    labels = ["Cat-1"] * n + ["Cat-2"] * n
    x = np.stack([centres[lab] + rng.normal(scale=0.5, size=d) for lab in labels])
    return x, labels, centres


def _threshold_oracle(x, centres):
    names = sorted(centres)
    return [min(names, key=lambda c: np.linalg.norm(row - centres[c])) for row in x]


@pytest.mark.parametrize("kind", KINDS)
def test_separated_blobs_are_perfect(kind, rng):
    x, y, centres = blobs(rng)
    xt, yt, _ = blobs(rng)
    model = train_hybrid(x, y, kind, seed=0)
    pred = predict_hybrid(model, xt)
    assert pred == _threshold_oracle(xt, centres) == yt


def test_knn_k1_recalls_training_labels(rng):
    x = rng.normal(size=(50, 6))
    y = list(rng.choice(["Cat-1", "Cat-2", "Cat-3"], 50))
    model = train_hybrid(x, y, "knn", {"k": 1})
    assert predict_hybrid(model, x) == y


def test_ensemble_not_worse_than_single_tree(rng):
    from sklearn.tree import DecisionTreeClassifier
    x, y, _ = blobs(rng, sep=1.0)
    ens = train_hybrid(x, y, "ensemble", seed=0)
    ens_acc = np.mean(np.array(predict_hybrid(ens, x)) == np.array(y))
    tree = ens.head.estimators_[0]
    idx = np.array([ens.vocabulary.index(v) for v in y])
    assert ens_acc >= np.mean(tree.predict(x) == idx)
    assert isinstance(tree, DecisionTreeClassifier)


def test_errors(rng):
    x, y, _ = blobs(rng, n=5)
    model = train_hybrid(x, y, "svm")
    with pytest.raises(DimensionMismatch):
        predict_hybrid(model, x[:, :4])
    with pytest.raises(InsufficientSamples):
        train_hybrid(x[:1], y[:1], "knn", vocabulary=("Cat-1", "Cat-2"))
    with pytest.raises(DegenerateFeatures):
        train_hybrid(np.ones((10, 3)), ["Cat-1"] * 5 + ["Cat-2"] * 5, "knn")


@pytest.fixture(scope="module")
def image_setup():
    from spoilclass.synth import texture_arrays
    ids, x, labels = texture_arrays(5, size=64, seed=1)
    bank = ImageBank.from_arrays(ids, x, labels)
    ex = make_feature_extractor(BackboneSpec("ResNet18", "random"), seed=0)
    return bank, ids, ex


def test_inline_and_preextracted_agree(image_setup):
    bank, ids, ex = image_setup
    feats = FeatureMatrix(ex(bank.tensors(ids)), ids, [bank.labels[i] for i in ids])
    model = train_hybrid(feats, feats.labels, "knn", extractor=ex)
    assert predict_hybrid(model, feats) == predict_hybrid(model, bank.tensors(ids))


def test_save_load_and_stale_extractor(image_setup, tmp_path):
    bank, ids, ex = image_setup
    feats = FeatureMatrix(ex(bank.tensors(ids)), ids, [bank.labels[i] for i in ids])
    model = train_hybrid(feats, feats.labels, "svm", extractor=ex)
    path = save_hybrid(model, tmp_path / "h.joblib")
    again = load_hybrid(path, ex)
    assert predict_hybrid(again, feats) == predict_hybrid(model, feats)
    other = make_feature_extractor(BackboneSpec("ResNet18", "random"), seed=9)
    with pytest.raises(StaleExtractor):
        load_hybrid(path, other)
    model.extractor = None
    with pytest.raises(StaleExtractor):
        predict_hybrid(model, bank.tensors(ids[:2]), other)


def test_repetitions(image_setup):
    bank, ids, ex = image_setup
    folds = [([i for j, i in enumerate(ids) if j % 5 != f], [i for j, i in enumerate(ids)
                                                            if j % 5 == f]) for f in range(5)]
    models = run_hybrid_repetitions(ex.spec, "decision_tree", FoldPlan(folds, "particle_size", 0),
                                    bank, seed=3, extractor=ex)
    assert [m.fold_index for m in models] == list(range(5))
    assert [m.seed for m in models] == [3, 4, 5, 6, 7]
    assert models[0].name == "ResNet18w0DT"
