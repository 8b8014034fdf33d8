import math
import warnings
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st
from PIL import Image

from spoilclass.dataset import (TARGETS, FoldPlan, ImageBank, ImageRecord, SplitPlan,
                                load_manifest, load_plan, make_folds, save_plan, split_train_test,
                                standardise, write_manifest)
from spoilclass.errors import (ConfigError, DecodeError, DuplicateId, InsufficientClassSamples,
                               MissingFile, UnknownLabel)


def records_from_counts(counts, target="particle_size"):
    recs = []
    for label, n in counts.items():
        for j in range(n):
            labels = {t: "Cat-1" for t in TARGETS}
            labels[target] = label
            recs.append(ImageRecord(f"{label}_{j:03d}", Path("x.png"), labels))
    return recs


def test_split_proportional_example():
    recs = records_from_counts({"A": 70, "B": 30})
    plan = split_train_test(recs, "particle_size", 0.8, seed=1)
    lab = {r.id: r.labels["particle_size"] for r in recs}
    assert Counter(lab[i] for i in plan.train_ids) == {"A": 56, "B": 24}
    assert Counter(lab[i] for i in plan.test_ids) == {"A": 14, "B": 6}


def test_fold_allocation_example():
    recs = records_from_counts({"A": 13, "B": 7})
    split = SplitPlan([r.id for r in recs], [], "particle_size", 0)
    plan = make_folds(split, recs, k=5, seed=0)
    lab = {r.id: r.labels["particle_size"] for r in recs}
    for train, val in plan.folds:
        c = Counter(lab[i] for i in val)
        assert c["A"] in (2, 3) and c["B"] in (1, 2)
        assert set(train).isdisjoint(val)


@given(st.dictionaries(st.sampled_from(["Cat-1", "Cat-2", "Cat-3", "Cat-4"]),
                       st.integers(7, 40), min_size=2, max_size=4),
       st.integers(0, 2 ** 31 - 1),
       st.floats(0.55, 0.9))
def test_split_and_fold_invariants(counts, seed, ratio):
    recs = records_from_counts(counts)
    ids = {r.id for r in recs}
    lab = {r.id: r.labels["particle_size"] for r in recs}
    plan = split_train_test(recs, "particle_size", ratio, seed)
    assert set(plan.train_ids) | set(plan.test_ids) == ids
    assert set(plan.train_ids).isdisjoint(plan.test_ids)
    for label, n in counts.items():
        n_test = sum(lab[i] == label for i in plan.test_ids)
        assert abs(n_test - (1 - ratio) * n) <= 1
        assert n_test >= 1 and n - n_test >= 1
    train_counts = Counter(lab[i] for i in plan.train_ids)
    if min(train_counts.values()) < 5:
        return
    folds = make_folds(plan, recs, 5, seed)
    seen = []
    for train, val in folds.folds:
        assert set(train) | set(val) == set(plan.train_ids)
        assert set(train).isdisjoint(val)
        seen.extend(val)
        for label, n in train_counts.items():
            v = sum(lab[i] == label for i in val)
            assert math.floor(n / 5) <= v <= math.ceil(n / 5)
    assert sorted(seen) == sorted(plan.train_ids)
    assert make_folds(plan, recs, 5, seed).to_dict() == folds.to_dict()
    assert split_train_test(recs, "particle_size", ratio, seed).to_dict() == plan.to_dict()


def test_split_validation():
    recs = records_from_counts({"A": 10, "B": 10})
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ConfigError) as e:
            split_train_test(recs, "particle_size", bad)
        assert e.value.field == "split.ratio"
    with pytest.raises(InsufficientClassSamples):
        split_train_test(records_from_counts({"A": 10, "B": 1}), "particle_size")
    split = split_train_test(records_from_counts({"A": 10, "B": 5}), "particle_size")
    with pytest.raises(InsufficientClassSamples):
        make_folds(split, records_from_counts({"A": 10, "B": 5}), 5)


def test_plan_roundtrip(tmp_path):
    recs = records_from_counts({"A": 20, "B": 15})
    split = split_train_test(recs, "particle_size", 0.8, 4)
    folds = make_folds(split, recs, 5)
    save_plan(split, tmp_path / "s.json")
    save_plan(folds, tmp_path / "f.json")
    assert load_plan(tmp_path / "s.json") == split
    f2 = load_plan(tmp_path / "f.json")
    assert isinstance(f2, FoldPlan) and f2.to_dict() == folds.to_dict()


def _write(tmp_path, rows, vocab=None):
    vocab = vocab or {t: ["Cat-1", "Cat-2"] for t in TARGETS}
    (tmp_path / "img").mkdir(exist_ok=True)
    for rid, rel, _ in rows:
        p = tmp_path / rel
        if not p.exists():
            Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(p)
    write_manifest(tmp_path / "m.csv", rows, vocab)
    return tmp_path / "m.csv"


def test_manifest_roundtrip(tmp_path):
    labels = {t: "Cat-2" for t in TARGETS}
    m = load_manifest(_write(tmp_path, [("a", "img/a.png", labels), ("b", "img/b.png", labels)]))
    assert len(m) == 2 and m[0].size == (8, 8)
    assert m.vocabularies["plasticity"] == ("Cat-1", "Cat-2")
    assert m.labels("plasticity") == ["Cat-2", "Cat-2"]


def test_manifest_errors(tmp_path):
    ok = {t: "Cat-1" for t in TARGETS}
    with pytest.raises(DuplicateId):
        load_manifest(_write(tmp_path, [("a", "img/a.png", ok), ("a", "img/a.png", ok)]))
    with pytest.raises(UnknownLabel):
        load_manifest(_write(tmp_path, [("a", "img/a.png", {**ok, "plasticity": "Cat-4"})]))
    path = _write(tmp_path, [("a", "img/a.png", ok)])
    (tmp_path / "img" / "a.png").unlink()
    with pytest.raises(MissingFile):
        load_manifest(path)
    (tmp_path / "img" / "a.png").write_bytes(b"not an image")
    with pytest.raises(DecodeError):
        load_manifest(path)
    assert len(load_manifest(path, check_files=False)) == 1


def test_standardise_gray_replicates_channels():
    gray = (np.arange(100 * 200) % 251).astype(np.uint8).reshape(100, 200)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = standardise(Image.fromarray(gray, mode="L"))
    assert caught, "expected a conversion warning"
    assert out.shape == (512, 512, 3) and out.dtype == np.float32
    assert np.array_equal(out[..., 0], out[..., 1]) and np.array_equal(out[..., 1], out[..., 2])
    ref = np.asarray(Image.fromarray(gray, "L").resize((512, 512), Image.BILINEAR),
                     np.float32) / 255
    assert np.array_equal(out[..., 0], ref)


def test_standardise_range_and_identity():
    arr = np.random.default_rng(0).integers(0, 256, (512, 512, 3), dtype=np.uint8)
    out = standardise(arr)
    assert out.min() >= 0 and out.max() <= 1
    assert np.array_equal(np.round(out * 255).astype(np.uint8), arr)
    with pytest.raises(DecodeError):
        standardise(arr.astype(np.float64))


def test_image_bank_from_arrays():
    t = np.random.default_rng(0).random((3, 16, 16, 3)).astype(np.float32)
    bank = ImageBank.from_arrays(["a", "b", "c"], t, ["Cat-2", "Cat-1", "Cat-2"])
    assert bank.vocabulary == ("Cat-1", "Cat-2")
    assert np.abs(bank.tensor("a") - t[0]).max() <= 0.5 / 255 + 1e-7
    assert list(bank.label_indices(["a", "b"])) == [1, 0]
    assert bank.tensors([]).shape == (0, 16, 16, 3)
