import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(name, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}" + (f" :: {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_torch():
    import torch
    torch.set_num_threads(1)
    yield


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """60 balanced synthetic images at 128 px with a manifest."""
    from spoilclass.synth import generate

    root = tmp_path_factory.mktemp("synth")
    return generate(root, n=60, seed=3, width=128, height=128, distribution="balanced",
                    combined_rate=0.0, min_per_class=6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_config(path: Path, manifest: Path, **body) -> Path:
    import yaml

    doc = {"manifest": str(manifest), "output_dir": str(path.parent / "runs")}
    doc.update(body)
    path.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    return path


CNN_BODY = dict(target="plasticity", family="cnn", image_size=64, seed=0,
                backbone={"name": "ResNet18", "weight_init": "random"},
                hyperparams={"learning_rate": 1e-3, "batch_size": 16, "max_epochs": 3,
                             "patience": 2})
HYBRID_BODY = dict(target="plasticity", family="hybrid", image_size=96, seed=0,
                   backbone={"name": "ResNet18", "weight_init": "random"}, head={"kind": "knn"})
BOF_BODY = dict(target="plasticity", family="bof", image_size=128, seed=0,
                bof={"vocab_size": 40, "max_descriptors": 5000})


@pytest.fixture(scope="session")
def experiment_runs(tmp_path_factory, small_dataset):
    """One bundle per model family on the small synthetic set."""
    from spoilclass.experiment import run

    root = tmp_path_factory.mktemp("exp")
    out = {}
    for name, body in (("cnn", CNN_BODY), ("hybrid", HYBRID_BODY), ("bof", BOF_BODY)):
        cfg = write_config(root / f"{name}.yaml", small_dataset, **body)
        out[name] = {"config": cfg, "bundle": run(cfg)}
    out["root"] = root
    out["results"] = root / "runs"
    return out
