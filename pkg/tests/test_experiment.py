import pytest

from conftest import BOF_BODY, write_config
from spoilclass.config import parse_config
from spoilclass.errors import ConfigError, DataError, MixedTargets, NoBundles, TooFewRuns
from spoilclass.experiment import bmac_compose, compare, load_bundle, read_table, report, run

BASE = "manifest: m.csv\ntarget: plasticity\n"


@pytest.mark.parametrize("text, field", [
    ("manifest: m.csv\nfamily: bof\n", "target"),
    ("target: plasticity\nfamily: bof\n", "manifest"),
    (BASE + "family: svm\n", "family"),
    (BASE + "family: bof\nbackbone: {name: ResNet18}\n", "backbone"),
    (BASE + "family: cnn\nbackbone: {name: VGG}\n", "backbone.name"),
    (BASE + "family: hybrid\nbackbone: {name: ResNet18}\nhead: {kind: svm, k: 3}\n", "head.k"),
    (BASE + "family: cnn\nbackbone: {name: ResNet18}\nhyperparams: {batch_size: 0}\n",
     "hyperparams.batch_size"),
    (BASE + "family: bof\nbof: {octaves: 7}\n", "bof.octaves"),
    (BASE + "family: bof\nsplit: {ratio: 1.2}\n", "split.ratio"),
    (BASE + "family: bof\nfolds: {k: 3}\n", "folds.k"),
    (BASE + "family: bof\ncolour: red\n", "colour"),
])
def test_config_errors_name_the_field(text, field, tmp_path):
    if "ratio: 1.2" in text:
        # the ratio is checked when the split is drawn
        m = tmp_path / "m.csv"
        m.write_text("id,path," + ",".join(["particle_size", "relative_density", "fabric_structure",
                                            "plasticity", "bmac_category"]) + "\n")
        cfg = parse_config(text, tmp_path)
        with pytest.raises(ConfigError) as e:
            run(cfg)
    else:
        with pytest.raises(ConfigError) as e:
            parse_config(text)
    assert e.value.field == field


def test_config_model_names():
    cfg = parse_config(BASE + "family: hybrid\nbackbone: {name: ResNet50}\nhead: {kind: svm}\n")
    assert cfg.model_name == "ResNet50SVM"
    cfg = parse_config(BASE + "family: cnn\nbackbone: {name: AlexNet, weight_init: random}\n")
    assert cfg.model_name == "AlexNetw0"
    assert parse_config(BASE + "family: bof\n").model_name == "BagOfFeatures"


def test_bundle_contents(experiment_runs):
    b = load_bundle(experiment_runs["cnn"]["bundle"])
    assert len(b["folds"]) == 5
    assert all(len(f["curves"]["train_loss"]) == len(f["curves"]["val_loss"]) >= 1
               for f in b["folds"])
    raw = experiment_runs["cnn"]["config"].read_bytes()
    assert b["config_text"].encode("utf-8") == raw
    assert (experiment_runs["cnn"]["bundle"] / "config.yaml").read_bytes() == raw
    assert b["aggregate"]["n_reports"] == 5
    assert set(b["environment"]) >= {"numpy", "torch", "backend"}
    assert b["split"]["test"] == b["folds"][0]["test_ids"]
    for f in b["folds"]:
        assert set(f["test_ids"]).isdisjoint(b["split"]["train"])
    assert (experiment_runs["cnn"]["bundle"] / "models" / "fold0.pt").is_file()


def test_bundle_layout(experiment_runs):
    for fam in ("cnn", "hybrid", "bof"):
        path = experiment_runs[fam]["bundle"]
        b = load_bundle(path)
        assert path.parent.name == b["model_name"]
        assert path.parent.parent.name == b["target"]
        assert path.name == b["run_id"]
    leftovers = [p for p in experiment_runs["results"].rglob(".tmp-*")]
    assert leftovers == []


def test_failed_run_leaves_no_bundle(small_dataset, tmp_path, monkeypatch):
    from spoilclass import experiment
    cfg = write_config(tmp_path / "c.yaml", small_dataset, **BOF_BODY)

    def boom(*a, **k):
        raise DataError("simulated failure")
    monkeypatch.setitem(experiment._RUNNERS, "bof", boom)
    with pytest.raises(DataError):
        run(cfg)
    left = [p.name for p in (tmp_path / "runs").rglob("*")]
    assert "bundle.json" not in left
    assert not any(n.startswith(".tmp-") for n in left)


def test_compare(experiment_runs, tmp_path):
    comp = compare(experiment_runs["results"], out_dir=tmp_path)
    assert comp.target == "plasticity"
    assert len(comp.rows) == 3
    baseline = [r for r in comp.rows if r["baseline"]]
    assert len(baseline) == 1 and baseline[0]["p_value"] is None
    assert sum(r["p_value"] is not None for r in comp.rows) == 2
    table = read_table(tmp_path / "comparison.csv")
    for row, r in zip(table, comp.rows):
        assert float(row["accuracy_mean"]) == r["accuracy_mean"]
    assert (tmp_path / "pvalues.png").stat().st_size > 0


def test_compare_errors(experiment_runs, tmp_path, small_dataset):
    with pytest.raises(NoBundles):
        compare(tmp_path)
    with pytest.raises(TooFewRuns):
        compare(experiment_runs["results"], baseline="nope")
    single = tmp_path / "single"
    single.mkdir()
    run(write_config(single / "c.yaml", small_dataset,
                     **{**BOF_BODY, "target": "fabric_structure"}))
    with pytest.raises(TooFewRuns):
        compare(single / "runs")
    import shutil
    shutil.copytree(experiment_runs["results"] / "plasticity", single / "runs" / "plasticity")
    with pytest.raises(MixedTargets):
        compare(single / "runs")
    assert compare(single / "runs", target="plasticity").target == "plasticity"


def test_report_single_cnn_bundle(experiment_runs, tmp_path):
    import shutil
    src = experiment_runs["cnn"]["bundle"]
    dst = tmp_path / "r" / src.name
    shutil.copytree(src, dst)
    figs = report(tmp_path / "r", tmp_path / "out")
    assert len(figs["learning_curves"]) == 1
    assert len(figs["accuracy_bars"]) == 1
    assert len(figs["precision_recall"]) == 1
    assert figs["pvalues"] == []
    bars = read_table(tmp_path / "out" / "accuracy_bars.csv")
    assert len(bars) == 1 and len({r["target"] for r in bars}) == 1
    with pytest.raises(NoBundles):
        report(tmp_path / "empty")


def test_compose_examples():
    ids = ["s1", "s2", "s3"]
    all2 = {t: {i: "Cat-2" for i in ids}
            for t in ("particle_size", "relative_density", "fabric_structure", "plasticity")}
    comp = bmac_compose(all2)
    assert comp.categories == {i: 2 for i in ids} and comp.excluded == {}
    mixed = {t: dict(v) for t, v in all2.items()}
    mixed["plasticity"]["s2"] = "Cat-2 or 3"
    comp = bmac_compose(mixed, direct={"s1": "Cat-2", "s3": "Cat-1"})
    assert list(comp.excluded) == ["s2"] and len(comp.excluded) == 1
    assert comp.n_compared == 2 and comp.agreement == 0.5
    with pytest.raises(DataError):
        bmac_compose({"particle_size": {}})
    bad = {t: dict(v) for t, v in all2.items()}
    del bad["plasticity"]["s3"]
    with pytest.raises(DataError):
        bmac_compose(bad)
