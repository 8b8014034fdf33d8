import numpy as np
import pytest
import torch
from torch import nn

from spoilclass.backbones import (ARCHITECTURES, FEATURE_DIMS, BackboneSpec,
                                  build_backbone, extract_features,
                                  make_feature_extractor, replace_head, set_trainable,
                                  state_fingerprint)
from spoilclass.errors import (InvalidClassCount, ShapeMismatch, UnknownArchitecture,
                               WeightsUnavailable)

_CACHE = {}


def built(name):
    if name not in _CACHE:
        _CACHE[name] = build_backbone(BackboneSpec(name, "random"), seed=0)
    return _CACHE[name]


def _last_channels(base):
    width = None
    for m in base.modules():
        if isinstance(m, nn.BatchNorm2d):
            width = m.num_features
        elif isinstance(m, nn.Conv2d):
            width = m.out_channels
    return width


@pytest.mark.parametrize("name", ARCHITECTURES)
def test_feature_width_matches_base(name):
    model = built(name)
    # the last normalised layer in module order need not be the output for Inception
    if name != "InceptionV3":
        assert _last_channels(model.base) == FEATURE_DIMS[name]
    size = 80 if name == "InceptionV3" else 64
    model.eval()
    with torch.inference_mode():
        out = model.base(torch.zeros(1, 3, size, size))
    assert out.shape[1] == FEATURE_DIMS[name]
    assert model.n_outputs == 1000


@pytest.mark.parametrize("name", ARCHITECTURES)
def test_head_surgery_keeps_base(name):
    model = built(name)
    before = state_fingerprint(model.base)
    n_before = model.base_parameters()
    replace_head(model, 4, seed=1)
    assert model.n_outputs == 4
    assert state_fingerprint(model.base) == before
    assert model.base_parameters() == n_before
    assert model.learnable_parameters() == n_before + model.head.in_features * 4 + 4


def test_invalid_inputs():
    with pytest.raises(UnknownArchitecture):
        BackboneSpec("VGG16")
    with pytest.raises(InvalidClassCount):
        replace_head(built("ResNet18"), 1)
    assert BackboneSpec("ResNet18", "random").model_name == "ResNet18w0"


def test_pretrained_needs_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("SPOILCLASS_WEIGHTS_DIR", str(tmp_path))
    monkeypatch.delenv("SPOILCLASS_ALLOW_DOWNLOAD", raising=False)
    with pytest.raises(WeightsUnavailable):
        build_backbone(BackboneSpec("ResNet18", "pretrained"))


def test_pretrained_loads_from_cache(tmp_path, monkeypatch):
    import torchvision.models as tvm
    from spoilclass.backbones import weights_file
    monkeypatch.setenv("SPOILCLASS_WEIGHTS_DIR", str(tmp_path))
    torch.manual_seed(7)
    ref = tvm.resnet18(weights=None)
    torch.save(ref.state_dict(), weights_file("ResNet18"))
    model = build_backbone(BackboneSpec("ResNet18", "pretrained"))
    assert torch.equal(model.base[0].weight, ref.conv1.weight)


def test_seeded_random_init_is_reproducible():
    a = build_backbone(BackboneSpec("ResNet18", "random"), seed=3)
    b = build_backbone(BackboneSpec("ResNet18", "random"), seed=3)
    assert state_fingerprint(a) == state_fingerprint(b)


def test_freeze_fraction():
    model = build_backbone(BackboneSpec("ResNet18", "random"))
    set_trainable(model, 0.5)
    flags = [p.requires_grad for p in model.base.parameters()]
    assert not flags[0] and flags[-1]
    assert sum(not f for f in flags) == round(0.5 * len(flags))
    assert all(p.requires_grad for p in model.head.parameters())


def test_extractor_batch_invariance_and_shapes(rng):
    ex = make_feature_extractor(BackboneSpec("ResNet18", "random"), seed=0)
    imgs = rng.random((8, 64, 64, 3)).astype(np.float32)
    many = ex(imgs)
    one = ex(imgs[:1])
    assert many.shape == (8, 512) and many.dtype == np.float64
    np.testing.assert_allclose(one[0], many[0], atol=1e-5)
    assert extract_features(ex, np.zeros((0,))).features.shape == (0, 512)
    with pytest.raises(ShapeMismatch):
        ex(imgs[..., :2])
    with pytest.raises(ShapeMismatch):
        ex(np.zeros((1, 16, 16, 3), np.float32))
    assert all(not p.requires_grad for p in ex.module.parameters())
