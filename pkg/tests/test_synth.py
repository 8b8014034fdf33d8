import numpy as np

from spoilclass.bmac import SpoilAttribute, score_bmac
from spoilclass.dataset import TARGETS, load_manifest
from spoilclass.synth import COMBINED, render, sample_labels, texture_arrays, generate


def test_render_is_seeded():
    lab = {t: "Cat-2" for t in TARGETS}
    a = render(lab, np.random.default_rng(1), 64, 48)
    b = render(lab, np.random.default_rng(1), 64, 48)
    assert a.shape == (48, 64, 3) and a.dtype == np.uint8
    assert np.array_equal(a, b)


def test_grain_scale_follows_particle_size():
    def roughness(cat):
        lab = {t: "Cat-2" for t in TARGETS}
        lab["particle_size"] = cat
        lab["fabric_structure"] = "Cat-1"
        g = render(lab, np.random.default_rng(0), 128, 128).mean(axis=2)
        return np.abs(np.diff(g, axis=1)).mean()
    assert roughness("Cat-1") > roughness("Cat-4")


def test_bmac_label_is_weighted_vote():
    rng = np.random.default_rng(3)
    attrs = [SpoilAttribute.PARTICLE_SIZE, SpoilAttribute.CONSISTENCY_OR_DENSITY,
             SpoilAttribute.FABRIC_STRUCTURE, SpoilAttribute.PLASTICITY]
    for _ in range(50):
        lab = sample_labels(rng, combined_rate=0.0)
        votes = {a: int(lab[t][-1]) for a, t in zip(attrs, TARGETS)}
        assert lab["bmac_category"] == f"Cat-{score_bmac(votes).assigned_category}"


def test_texture_arrays_balanced():
    ids, x, labels = texture_arrays(3, size=40, seed=0)
    assert x.shape == (12, 40, 40, 3) and x.dtype == np.float32
    assert sorted(set(labels)) == ["Cat-1", "Cat-2", "Cat-3", "Cat-4"]
    assert len(set(ids)) == 12


def test_generate_long_tail_manifest(tmp_path):
    path = generate(tmp_path, n=80, seed=1, width=48, height=48, combined_rate=0.1,
                    min_per_class=3)
    m = load_manifest(path)
    assert len(m) == 80
    counts = {}
    for r in m:
        counts[r.labels["particle_size"]] = counts.get(r.labels["particle_size"], 0) + 1
    assert counts["Cat-1"] > counts["Cat-4"]
    assert any(r.labels["plasticity"] == COMBINED or r.labels["relative_density"] == COMBINED
               for r in m)
