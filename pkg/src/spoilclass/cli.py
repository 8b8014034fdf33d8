"""``spoilclass`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .errors import ConfigError, DataError, SpoilClassError, TrainingError

log = logging.getLogger("spoilclass")


def _cmd_ingest(args):
    from .dataset import TARGETS, load_manifest

    m = load_manifest(args.manifest, check_files=not args.no_check_files)
    summary = {"records": len(m),
               "classes": {t: dict(sorted(Counter(r.labels[t] for r in m).items()))
                           for t in TARGETS if t in m.vocabularies}}
    print(json.dumps(summary, indent=1))


def _cmd_split(args):
    from .dataset import load_manifest, make_folds, save_plan, split_train_test

    m = load_manifest(args.manifest, check_files=False)
    split = split_train_test(list(m), args.target, args.ratio, args.seed)
    folds = make_folds(split, list(m), args.k, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_plan(split, out / "split.json")
    save_plan(folds, out / "folds.json")
    print(f"train {len(split.train_ids)}, test {len(split.test_ids)}, "
          f"{args.k} folds -> {out}")


def _cmd_run(args):
    from .config import load_config
    from .experiment import run

    cfg = load_config(args.config).override(seed=args.seed, output_dir=args.out)
    print(run(cfg))


def _cmd_compare(args):
    from .experiment import compare

    comp = compare(args.results, args.target, args.baseline, args.out)
    for r in comp.rows:
        p = "" if r["p_value"] is None else f"p={r['p_value']:.4g} ({r['significant']})"
        mark = "*" if r["baseline"] else " "
        print(f"{mark} {r['model']:<28} {r['accuracy']:<18} {p}")
    print("tables:", ", ".join(str(f) for f in comp.files))


def _cmd_report(args):
    from .experiment import report

    figs = report(args.results, args.out)
    for kind, paths in figs.items():
        for p in paths:
            print(f"{kind}: {p}")


def _cmd_bmac_score(args):
    from .bmac import score_file

    out = args.out or str(Path(args.input).with_suffix(".scored.csv"))
    n = score_file(args.input, out, with_strength=args.with_strength, delimiter=args.delimiter)
    print(f"scored {n} rows -> {out}")


def _cmd_compose(args):
    from .experiment import compose_bundles, load_bundle

    bundles = {}
    for item in args.bundle:
        if "=" not in item:
            raise ConfigError("--bundle", f"expected target=path, got {item!r}")
        target, path = item.split("=", 1)
        bundles[target] = load_bundle(path)
    comp = compose_bundles(bundles, args.fold)
    text = json.dumps(comp.to_dict(), indent=1)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(f"composed {len(comp.categories)} samples, excluded {len(comp.excluded)}, "
          f"agreement {comp.agreement}")


def _cmd_synth(args):
    from .synth import generate

    path = generate(args.out, n=args.n, seed=args.seed, width=args.size, height=args.size,
                    distribution=args.distribution, combined_rate=args.combined_rate)
    print(path)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spoilclass", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate a manifest and print class counts")
    s.add_argument("manifest")
    s.add_argument("--no-check-files", action="store_true")
    s.set_defaults(func=_cmd_ingest)

    s = sub.add_parser("split", help="write stratified split and fold plans")
    s.add_argument("manifest")
    s.add_argument("--target", required=True)
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_split)

    s = sub.add_parser("run", help="train and evaluate one configured model")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="override output_dir")
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("compare", help="accuracy table and t-tests across models")
    s.add_argument("results")
    s.add_argument("--target")
    s.add_argument("--baseline", default="best")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_compare)

    s = sub.add_parser("report", help="figures and data tables from result bundles")
    s.add_argument("results")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_report)

    s = sub.add_parser("bmac-score", help="weighted-vote BMAC category for a label table")
    s.add_argument("input")
    s.add_argument("--out")
    s.add_argument("--with-strength", action="store_true")
    s.add_argument("--delimiter", default=",")
    s.set_defaults(func=_cmd_bmac_score)

    s = sub.add_parser("compose", help="BMAC category from per-attribute run bundles")
    s.add_argument("--bundle", action="append", required=True, metavar="TARGET=DIR")
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_compose)

    s = sub.add_parser("synth", help="generate a synthetic texture dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=512)
    s.add_argument("--distribution", choices=("long_tail", "balanced"), default="long_tail")
    s.add_argument("--combined-rate", type=float, default=0.03)
    s.set_defaults(func=_cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 4
    except SpoilClassError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
