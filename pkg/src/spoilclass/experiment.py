"""End-to-end runs, result bundles, cross-model comparison and report tables."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import _accel
from .bmac import SpoilAttribute, parse_category, score_bmac
from .config import ExperimentConfig, load_config
from .dataset import ImageBank, load_manifest, make_folds, save_plan, split_train_test
from .errors import DataError, MixedTargets, NoBundles, TooFewRuns
from .metrics import (MetricsReport, aggregate, evaluate, format_mean_std,
                      significance_vs_best)

log = logging.getLogger(__name__)

BUNDLE = "bundle.json"
SCHEMA = 1


# ---------------------------------------------------------------------------
# bundle helpers
# ---------------------------------------------------------------------------

def environment_fingerprint() -> dict:
    import numba  # noqa: F401 - version only
    import scipy
    import sklearn
    import torch
    import torchvision

    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sklearn": sklearn.__version__,
        "torch": torch.__version__,
        "torchvision": torchvision.__version__,
        "numba": numba.__version__ if _accel.HAVE_NUMBA else None,
        "backend": _accel.get_backend(),
        "torch_threads": torch.get_num_threads(),
    }


def _run_id(cfg: ExperimentConfig) -> str:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    return f"{stamp}-{cfg.digest()}"


def _write_atomic(final_dir: Path, bundle: dict, extra_files: Mapping[str, bytes],
                  stage: Path) -> Path:
    """Move a fully written staging directory into place with one rename."""
    (stage / BUNDLE).write_text(json.dumps(bundle, indent=1), encoding="utf-8")
    for name, data in extra_files.items():
        (stage / name).write_bytes(data)
    final_dir.parent.mkdir(parents=True, exist_ok=True)
    os.replace(stage, final_dir)
    return final_dir


def load_bundle(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / BUNDLE
    return json.loads(path.read_text(encoding="utf-8"))


def find_bundles(results_dir) -> List[dict]:
    root = Path(results_dir)
    out = []
    for p in sorted(root.rglob(BUNDLE)):
        if any(part.startswith(".tmp-") for part in p.relative_to(root).parts):
            continue
        b = load_bundle(p)
        b["_path"] = str(p.parent)
        out.append(b)
    return out


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _fold_entry(i, ids, true, pred, cfg, vocab, **extra) -> dict:
    rep = evaluate(pred, true, vocab, cfg.mpca_mode)
    return {"fold_index": i, "test_ids": list(ids), "true": list(true),
            "predicted": list(pred), "metrics": rep.to_dict(), **extra}


def _run_cnn(cfg, bank, split, folds, stage):
    import torch

    from .cnn import predict, run_repetitions

    torch.use_deterministic_algorithms(True, warn_only=True)
    test_x = bank.tensors(split.test_ids)
    true = [bank.labels[i] for i in split.test_ids]
    out = []
    for tm in run_repetitions(cfg.backbone, folds, bank, cfg.hyperparams, cfg.seed):
        pred = [bank.vocabulary[j] for j in predict(tm, test_x, cfg.hyperparams.eval_batch_size)]
        if cfg.save_models:
            tm.save(stage / "models")
        out.append(_fold_entry(tm.fold_index, split.test_ids, true, pred, cfg, bank.vocabulary,
                               curves=asdict(tm.curves), selected_epoch=tm.selected_epoch))
    return out


def _features(extractor, bank, ids, chunk=32):
    from .backbones import FeatureMatrix

    parts = [extractor(bank.tensors(ids[s:s + chunk])) for s in range(0, len(ids), chunk)]
    feats = np.concatenate(parts) if parts else np.zeros((0, extractor.dim))
    return FeatureMatrix(feats, list(ids), [bank.labels[i] for i in ids])


def _run_hybrid(cfg, bank, split, folds, stage):
    from .backbones import make_feature_extractor
    from .hybrid import predict_hybrid, run_hybrid_repetitions, save_hybrid

    extractor = make_feature_extractor(cfg.backbone, cfg.seed)
    feats = _features(extractor, bank, list(split.train_ids) + list(split.test_ids))
    test = feats.subset(split.test_ids)
    models = run_hybrid_repetitions(cfg.backbone, cfg.head_kind, folds, bank, cfg.head_config,
                                    cfg.seed, extractor, feats)
    out = []
    for m in models:
        pred = predict_hybrid(m, test)
        if cfg.save_models:
            (stage / "models").mkdir(exist_ok=True)
            save_hybrid(m, stage / "models" / f"fold{m.fold_index}.joblib")
        out.append(_fold_entry(m.fold_index, split.test_ids, test.labels, pred, cfg,
                               bank.vocabulary, extractor_fingerprint=m.extractor_fingerprint))
    return out


def _run_bof(cfg, bank, split, folds, stage):
    from .bof import DescriptorCache, run_bof_repetitions

    cache = DescriptorCache(bank, cfg.bof.detector)
    models = run_bof_repetitions(folds, bank, cfg.bof, cfg.seed, cache)
    test_sets = cache.many(split.test_ids)
    true = [bank.labels[i] for i in split.test_ids]
    out = []
    for m in models:
        pred = m.predict(test_sets)
        if cfg.save_models:
            (stage / "models").mkdir(exist_ok=True)
            (stage / "models" / f"vocabulary{m.fold_index}.json").write_text(
                json.dumps(m.vocabulary.to_dict()), encoding="utf-8")
        out.append(_fold_entry(m.fold_index, split.test_ids, true, pred, cfg, bank.vocabulary,
                               vocabulary_fingerprint=m.vocabulary.fingerprint(),
                               kmeans_iterations=m.vocabulary.n_iter))
    return out


_RUNNERS = {"cnn": _run_cnn, "hybrid": _run_hybrid, "bof": _run_bof}


def run(config) -> Path:
    """Execute one configured experiment; returns the finished bundle directory."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    t0 = time.perf_counter()
    manifest = load_manifest(cfg.manifest)
    strat = cfg.stratify_on or cfg.target
    split = split_train_test(list(manifest), strat, cfg.split_ratio, cfg.seed)
    folds = make_folds(split, list(manifest), cfg.k_folds, cfg.seed)
    bank = ImageBank.from_manifest(manifest, cfg.target, cfg.image_size)
    timings = {"setup": time.perf_counter() - t0}

    run_id = _run_id(cfg)
    final = cfg.output_dir / cfg.target / cfg.model_name / run_id
    final.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".tmp-", dir=final.parent))
    try:
        save_plan(split, stage / "split.json")
        save_plan(folds, stage / "folds.json")
        t1 = time.perf_counter()
        fold_entries = _RUNNERS[cfg.family](cfg, bank, split, folds, stage)
        timings["train_and_predict"] = time.perf_counter() - t1
        reports = [MetricsReport.from_dict(f["metrics"]) for f in fold_entries]
        agg = aggregate(reports)
        timings["total"] = time.perf_counter() - t0
        bundle = {
            "schema": SCHEMA,
            "run_id": run_id,
            "model_name": cfg.model_name,
            "family": cfg.family,
            "target": cfg.target,
            "seed": cfg.seed,
            "vocabulary": list(bank.vocabulary),
            "config_text": cfg.text,
            "overrides": dict(cfg.overrides),
            "manifest": str(cfg.manifest),
            "split": split.to_dict(),
            "folds": fold_entries,
            "aggregate": agg.to_dict(),
            "environment": environment_fingerprint(),
            "timings": timings,
        }
        _write_atomic(final, bundle, {"config.yaml": cfg.text.encode("utf-8")}, stage)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    log.info("wrote %s", final)
    return final


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(v)


def write_table(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    """CSV with ``repr`` floats so values read back bit-for-bit; ``None`` is empty."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) or v is None else v for v in row])
    return path


def read_table(path) -> List[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _latest_per_model(bundles):
    latest = {}
    for b in sorted(bundles, key=lambda b: b["run_id"]):
        latest[b["model_name"]] = b
    return latest


def _accuracies(bundle) -> List[float]:
    return [f["metrics"]["overall_accuracy"] for f in bundle["folds"]]


@dataclass
class Comparison:
    target: str
    best: str
    rows: List[dict]
    pvalues: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)


def compare(results_dir, target: Optional[str] = None, baseline: str = "best",
            out_dir=None, equal_var: bool = False) -> Comparison:
    """Mean (± std) accuracy per model and t-tests against ``baseline``.

    ``baseline="best"`` picks the model with the highest mean accuracy. Only the
    most recent run of each model is used.
    """
    bundles = find_bundles(results_dir)
    if target is not None:
        bundles = [b for b in bundles if b["target"] == target]
    if not bundles:
        raise NoBundles(f"no result bundles under {results_dir}")
    targets = sorted({b["target"] for b in bundles})
    if len(targets) > 1:
        raise MixedTargets(f"bundles span several targets {targets}; pick one")
    target = targets[0]
    latest = _latest_per_model(bundles)
    if len(latest) < 2:
        raise TooFewRuns(f"need at least two models for {target}, found {len(latest)}")
    accs = {name: _accuracies(b) for name, b in latest.items()}
    best = None if baseline == "best" else baseline
    if best is not None and best not in accs:
        raise TooFewRuns(f"baseline {baseline!r} has no run for {target}")
    tests = significance_vs_best(accs, best, equal_var)
    best = best or next(n for n in sorted(accs) if n not in tests)

    rows = []
    for name in sorted(accs, key=lambda n: (-latest[n]["aggregate"]["overall_accuracy"]["mean"], n)):
        agg = latest[name]["aggregate"]
        oa, mp = agg["overall_accuracy"], agg["mpca"]
        t = tests.get(name)
        rows.append({
            "model": name, "family": latest[name]["family"], "run_id": latest[name]["run_id"],
            "accuracy_mean": oa["mean"], "accuracy_std": oa["std"],
            "accuracy": format_mean_std(oa["mean"], oa["std"]),
            "mpca_mean": mp["mean"], "mpca_std": mp["std"],
            "t": t.t if t else None, "df": t.df if t else None,
            "p_value": t.p if t else None,
            "significant": "" if t is None else ("yes" if t.significant else "no"),
            "baseline": name == best,
        })

    names = sorted(accs)
    pmat = {a: {b: (None if a == b else significance_vs_best({a: accs[a], b: accs[b]}, a,
                                                             equal_var)[b].p)
                for b in names} for a in names}

    out = Path(out_dir) if out_dir is not None else Path(results_dir) / target
    out.mkdir(parents=True, exist_ok=True)
    header = list(rows[0])
    files = [write_table(out / "comparison.csv", header, [[r[h] for h in header] for r in rows])]
    files.append(write_table(out / "pvalues.csv", ["model"] + names,
                             [[a] + [pmat[a][b] for b in names] for a in names]))
    from . import plots
    files.append(plots.pvalue_heatmap(pmat, names, out / "pvalues.png", f"p-values ({target})"))
    return Comparison(target, best, rows, pmat, files)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _best_fold(bundle) -> dict:
    """Fold whose selected epoch reached the highest validation accuracy."""
    def score(f):
        c = f.get("curves") or {}
        va = c.get("val_accuracy") or [0.0]
        return va[min(f.get("selected_epoch", len(va) - 1), len(va) - 1)]
    return max(bundle["folds"], key=lambda f: (score(f), -f["fold_index"]))


def report(results_dir, out_dir=None) -> Dict[str, List[Path]]:
    """Figures plus their data tables for every bundle under ``results_dir``.

    Returns a mapping from figure kind to the PNG paths written; every PNG has a
    CSV of the same stem holding the plotted values.
    """
    from . import plots

    bundles = find_bundles(results_dir)
    if not bundles:
        raise NoBundles(f"no result bundles under {results_dir}")
    out = Path(out_dir) if out_dir is not None else Path(results_dir) / "report"
    out.mkdir(parents=True, exist_ok=True)
    figures: Dict[str, List[Path]] = {"learning_curves": [], "accuracy_bars": [],
                                      "pvalues": [], "precision_recall": [], "mpca": []}
    by_target: Dict[str, Dict[str, dict]] = {}
    for b in bundles:
        by_target.setdefault(b["target"], {})
    for t in by_target:
        by_target[t] = _latest_per_model([b for b in bundles if b["target"] == t])

    # learning curves, one panel per CNN bundle (best fold)
    for t, models in sorted(by_target.items()):
        for name, b in sorted(models.items()):
            if b["family"] != "cnn":
                continue
            f = _best_fold(b)
            c = f["curves"]
            stem = out / f"learning_curves_{t}_{name}"
            epochs = list(range(1, len(c["train_loss"]) + 1))
            write_table(stem.with_suffix(".csv"),
                        ["fold", "epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"],
                        [[f["fold_index"], e, c["train_loss"][e - 1], c["train_accuracy"][e - 1],
                          c["val_loss"][e - 1], c["val_accuracy"][e - 1]] for e in epochs])
            figures["learning_curves"].append(
                plots.learning_curves(c, stem.with_suffix(".png"), f"{name} / {t}"))

    # grouped accuracy bars: one group per target
    bar_rows = []
    for t, models in sorted(by_target.items()):
        for name, b in sorted(models.items()):
            oa = b["aggregate"]["overall_accuracy"]
            bar_rows.append([t, name, oa["mean"], oa["std"], b["run_id"]])
    stem = out / "accuracy_bars"
    write_table(stem.with_suffix(".csv"), ["target", "model", "mean", "std", "run_id"], bar_rows)
    figures["accuracy_bars"].append(plots.accuracy_bars(bar_rows, stem.with_suffix(".png")))

    # p-value matrices where a target has at least two models
    for t, models in sorted(by_target.items()):
        if len(models) < 2:
            continue
        names = sorted(models)
        accs = {n: _accuracies(models[n]) for n in names}
        pmat = {a: {b: (None if a == b else significance_vs_best({a: accs[a], b: accs[b]}, a)[b].p)
                    for b in names} for a in names}
        stem = out / f"pvalues_{t}"
        write_table(stem.with_suffix(".csv"), ["model"] + names,
                    [[a] + [pmat[a][b] for b in names] for a in names])
        figures["pvalues"].append(plots.pvalue_heatmap(pmat, names, stem.with_suffix(".png"),
                                                       f"p-values ({t})"))

    # per-class precision/recall of the best model per target, and the MPCA summary
    mpca_rows = []
    for t, models in sorted(by_target.items()):
        best = max(sorted(models), key=lambda n: models[n]["aggregate"]["overall_accuracy"]["mean"])
        agg = models[best]["aggregate"]
        classes = list(models[best]["vocabulary"])
        rows = [[c, agg["precision"][c]["mean"], agg["precision"][c]["std"],
                 agg["recall"][c]["mean"], agg["recall"][c]["std"]] for c in classes]
        stem = out / f"precision_recall_{t}_{best}"
        write_table(stem.with_suffix(".csv"),
                    ["class", "precision_mean", "precision_std", "recall_mean", "recall_std"], rows)
        figures["precision_recall"].append(
            plots.precision_recall(rows, stem.with_suffix(".png"), f"{best} / {t}"))
        mpca_rows.append([t, best, agg["mpca"]["mean"], agg["mpca"]["std"]])
    stem = out / "mpca"
    write_table(stem.with_suffix(".csv"), ["target", "model", "mean", "std"], mpca_rows)
    figures["mpca"].append(plots.mpca_summary(mpca_rows, stem.with_suffix(".png")))

    index = {k: [str(p) for p in v] for k, v in figures.items()}
    (out / "report.json").write_text(json.dumps(index, indent=1), encoding="utf-8")
    return figures


# ---------------------------------------------------------------------------
# composing attribute predictions into a BMAC category
# ---------------------------------------------------------------------------

_COMPOSE_ATTRS = {
    "particle_size": SpoilAttribute.PARTICLE_SIZE,
    "relative_density": SpoilAttribute.CONSISTENCY_OR_DENSITY,
    "fabric_structure": SpoilAttribute.FABRIC_STRUCTURE,
    "plasticity": SpoilAttribute.PLASTICITY,
}


@dataclass
class Composition:
    categories: Dict[str, int]
    ties: Dict[str, bool]
    excluded: Dict[str, str]
    n_compared: int = 0
    n_agree: int = 0

    @property
    def agreement(self) -> Optional[float]:
        return self.n_agree / self.n_compared if self.n_compared else None

    def to_dict(self):
        return {"method": "weighted-vote composition of attribute predictions",
                "categories": self.categories, "ties": self.ties, "excluded": self.excluded,
                "n_excluded": len(self.excluded), "n_compared": self.n_compared,
                "agreement": self.agreement}


def bmac_compose(predictions: Mapping[str, Mapping[str, str]],
                 direct: Optional[Mapping[str, str]] = None) -> Composition:
    """Weighted-vote category from per-attribute predicted labels.

    ``predictions`` maps each attribute target to ``{sample_id: label}``. Samples
    with a label that is not a single category (e.g. "Cat-2 or 3") are excluded
    and tallied. With ``direct`` the composed category is compared against the
    directly predicted BMAC category.
    """
    missing = [t for t in _COMPOSE_ATTRS if t not in predictions]
    if missing:
        raise DataError(f"missing attribute predictions for {missing}")
    ids = set(predictions["particle_size"])
    for t in _COMPOSE_ATTRS:
        if set(predictions[t]) != ids:
            raise DataError(f"attribute {t} covers different sample ids")
    cats, ties, excluded = {}, {}, {}
    for sid in sorted(ids):
        labels = {}
        for t, attr in _COMPOSE_ATTRS.items():
            try:
                labels[attr] = parse_category(predictions[t][sid])
            except DataError:
                excluded[sid] = f"{t}={predictions[t][sid]!r}"
                break
        if sid in excluded:
            continue
        a = score_bmac(labels)
        cats[sid], ties[sid] = a.assigned_category, a.tie
    comp = Composition(cats, ties, excluded)
    if direct is not None:
        for sid, cat in cats.items():
            if sid not in direct:
                continue
            try:
                d = parse_category(direct[sid])
            except DataError:
                continue
            comp.n_compared += 1
            comp.n_agree += int(d == cat)
    if excluded:
        log.info("excluded %d samples with combined labels: %s", len(excluded),
                 dict(Counter(v.split("=")[0] for v in excluded.values())))
    return comp


def compose_bundles(bundles: Mapping[str, dict], fold: int = 0) -> Composition:
    """Compose from run bundles keyed by target (attributes plus optional bmac_category)."""
    def preds(b):
        f = next(x for x in b["folds"] if x["fold_index"] == fold)
        return dict(zip(f["test_ids"], f["predicted"]))
    attrs = {t: preds(bundles[t]) for t in _COMPOSE_ATTRS if t in bundles}
    direct = preds(bundles["bmac_category"]) if "bmac_category" in bundles else None
    return bmac_compose(attrs, direct)
