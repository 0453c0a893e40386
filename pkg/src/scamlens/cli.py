"""Command-line pipeline around the library.

Subcommands mirror the stages: ingest -> featurize -> split -> resample ->
train -> evaluate, plus importance, compare and synth. Every command writes
its outputs into --out together with a manifest.json describing inputs,
resolved parameters and produced files; reruns with identical inputs
produce byte-identical files.

Options resolve in three layers: command-line flag, then the --config JSON
object, then the built-in default. SCAMLENS_LOG=DEBUG|INFO|WARNING|ERROR
controls stderr logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from . import neural, trees
from .errors import MalformedReport, ScamlensError, UntrainedModel
from .evaluation import (ComparisonRow, ReportDocument, chart_csv, confusion,
                         metrics, report_to_csv, report_to_text)
from .features import Scaler, featurize_all, scaler_apply, scaler_fit
from .ingest import (FixtureSource, HttpSource, LabeledTable, ScamLabel,
                     read_histories_json, read_labels_csv, read_table_csv,
                     split, validate_and_dedup, write_histories_json,
                     write_table_csv)
from .resampling import ResampleMethod, apply_method
from .synth import make_synthetic_table

logger = logging.getLogger(__name__)

NEURAL_KINDS = ("alstm", "lstm")
TREE_KINDS = ("rf", "et", "gb")
MODEL_KINDS = NEURAL_KINDS + TREE_KINDS
RESAMPLER_NAMES = ("none", "ros", "smote", "adasyn", "smote-enn", "smote-tomek", "tomek")


# ---------------------------------------------------------------------------
# Model pipeline shared by train / evaluate / compare
# ---------------------------------------------------------------------------

@dataclass
class FittedModel:
    """A trained classifier plus the scaler that standardizes its inputs."""

    kind: str
    scaler: Scaler
    neural: neural.TrainedModel | None = None
    tree: "trees.ForestModel | trees.BoostingModel | None" = None


def train_model(train_table: LabeledTable, kind: str, resample: ResampleMethod,
                seed: int, config: dict) -> FittedModel:
    """Fit scaler on the raw training rows, standardize, resample in the
    standardized space, then train the requested classifier."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    scaler = scaler_fit(train_table)
    standardized = scaler_apply(scaler, train_table)
    resampled = apply_method(standardized, resample)
    if kind in NEURAL_KINDS:
        section = dict(config.get("neural", {}))
        section.pop("seed", None)
        section.pop("attention", None)
        valid_fraction = float(section.pop("valid_fraction", 0.15))
        train_cfg = neural.TrainConfig(seed=seed, attention=(kind == "alstm"), **section)
        model = neural.train(resampled, valid_fraction, train_cfg, scaler=scaler)
        return FittedModel(kind=kind, scaler=scaler, neural=model)
    if kind in ("rf", "et"):
        section = dict(config.get("forest", {}))
        section.pop("seed", None)
        forest_cfg = trees.ForestConfig(seed=seed, **section)
        fit = trees.train_random_forest if kind == "rf" else trees.train_extra_trees
        return FittedModel(kind=kind, scaler=scaler, tree=fit(resampled, forest_cfg))
    section = dict(config.get("boost", {}))
    section.pop("seed", None)
    boost_cfg = trees.BoostConfig(seed=seed, **section)
    return FittedModel(kind=kind, scaler=scaler,
                       tree=trees.train_gradient_boosting(resampled, boost_cfg))


def predict_model(fitted: FittedModel, table: LabeledTable) -> list[ScamLabel]:
    """Standardize with the stored scaler and predict labels."""
    standardized = scaler_apply(fitted.scaler, table)
    if fitted.kind in NEURAL_KINDS:
        labels, _ = neural.predict(fitted.neural, standardized)
        return labels
    if fitted.kind in ("rf", "et"):
        return trees.predict_forest(fitted.tree, standardized.rows)
    return trees.predict_boosting(fitted.tree, standardized.rows)


def save_fitted(fitted: FittedModel, path: Path) -> None:
    if fitted.kind in NEURAL_KINDS:
        doc = neural.model_to_dict(fitted.neural)
    else:
        doc = {"kind": fitted.kind, "scaler": fitted.scaler.to_dict(),
               "payload": trees.tree_model_to_dict(fitted.tree)}
    path.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_fitted(path: Path | str) -> FittedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = doc.get("kind")
    if kind in NEURAL_KINDS:
        model = neural.model_from_dict(doc)
        if model.scaler is None:
            raise UntrainedModel(f"{path}: checkpoint is missing its scaler")
        return FittedModel(kind=kind, scaler=model.scaler, neural=model)
    if kind in TREE_KINDS:
        return FittedModel(kind=kind, scaler=Scaler.from_dict(doc["scaler"]),
                           tree=trees.tree_model_from_dict(doc["payload"]))
    raise MalformedReport(f"{path}: unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# Small file helpers
# ---------------------------------------------------------------------------

def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_lines(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out_dir: Path, command: str, params: dict,
                   inputs: dict, outputs: list[str]) -> None:
    """manifest.json: resolved parameters, input paths as given, output
    file names relative to the output directory. No timestamps, so the
    file is stable across reruns."""
    doc = {
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": sorted(outputs),
        "package": "scamlens",
        "params": params,
        "version": __version__,
    }
    _write_json(out_dir / "manifest.json", doc)


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise MalformedReport(f"{path}: config must be a JSON object")
    return doc


def _resolve(args, config: dict, name: str, default):
    """Flag beats config beats default; a flag left at None means unset."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return default


def _csv_list(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [part.strip() for part in str(value).split(",") if part.strip()]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = _out_dir(args)
    pairs = read_labels_csv(args.labels)
    if args.fixtures:
        source = FixtureSource(Path(args.fixtures))
    else:
        source = HttpSource(args.base_url)
    entries = validate_and_dedup(pairs, source)
    write_histories_json(out / "histories.json", entries)
    write_manifest(out, "ingest",
                   params={"addresses": len(pairs), "kept": len(entries)},
                   inputs={"labels": args.labels,
                           "source": args.fixtures or args.base_url},
                   outputs=["histories.json"])
    logger.info("ingested %d of %d addresses", len(entries), len(pairs))
    return 0


def cmd_featurize(args) -> int:
    out = _out_dir(args)
    items = read_histories_json(args.histories)
    table = featurize_all(items)
    write_table_csv(out / "features.csv", table)
    write_manifest(out, "featurize",
                   params={"rows": table.n_rows},
                   inputs={"histories": args.histories},
                   outputs=["features.csv"])
    return 0


def cmd_split(args) -> int:
    out = _out_dir(args)
    config = load_config(args.config)
    ratio = float(_resolve(args, config, "ratio", 0.8))
    seed = int(_resolve(args, config, "seed", 0))
    table = read_table_csv(args.table)
    train_part, test_part = split(table, ratio, seed)
    write_table_csv(out / "train.csv", train_part)
    write_table_csv(out / "test.csv", test_part)
    write_manifest(out, "split",
                   params={"ratio": ratio, "seed": seed,
                           "train_rows": train_part.n_rows,
                           "test_rows": test_part.n_rows},
                   inputs={"table": args.table},
                   outputs=["train.csv", "test.csv"])
    return 0


def cmd_resample(args) -> int:
    """Standalone resampling: standardize internally (fit on the input),
    resample in that space, then map back to the original units so the
    output composes with the rest of the pipeline."""
    out = _out_dir(args)
    config = load_config(args.config)
    method = str(_resolve(args, config, "resample", "none"))
    k = int(_resolve(args, config, "k", 5))
    seed = int(_resolve(args, config, "seed", 0))
    table = read_table_csv(args.table)
    spec = ResampleMethod.from_cli_name(method, k_neighbors=k, seed=seed)
    scaler = scaler_fit(table)
    resampled = apply_method(scaler_apply(scaler, table), spec)
    raw = LabeledTable(
        list(resampled.feature_names),
        resampled.rows * scaler.stds + scaler.means,
        list(resampled.labels),
        list(resampled.ids),
    )
    write_table_csv(out / "resampled.csv", raw)
    write_manifest(out, "resample",
                   params={"resample": method, "k": k, "seed": seed,
                           "rows_in": table.n_rows, "rows_out": raw.n_rows},
                   inputs={"table": args.table},
                   outputs=["resampled.csv"])
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    config = load_config(args.config)
    kind = str(_resolve(args, config, "model", "alstm"))
    method = str(_resolve(args, config, "resample", "none"))
    k = int(_resolve(args, config, "k", 5))
    seed = int(_resolve(args, config, "seed", 0))
    if kind not in MODEL_KINDS:
        print(f"error: unknown model {kind!r} (choices: {', '.join(MODEL_KINDS)})",
              file=sys.stderr)
        return 2
    table = read_table_csv(args.table)
    spec = ResampleMethod.from_cli_name(method, k_neighbors=k, seed=seed)
    fitted = train_model(table, kind, spec, seed, config)
    save_fitted(fitted, out / "model.json")
    outputs = ["model.json"]
    if fitted.neural is not None:
        lines = ["epoch,train_loss,valid_loss"]
        lines += [f"{e},{repr(tl)},{repr(vl)}" for e, tl, vl in fitted.neural.train_log]
        _write_lines(out / "train_log.csv", lines)
        outputs.append("train_log.csv")
    elif kind == "gb":
        lines = ["stage,deviance"]
        lines += [f"{i},{repr(v)}" for i, v in enumerate(fitted.tree.deviance_path)]
        _write_lines(out / "deviance.csv", lines)
        outputs.append("deviance.csv")
    write_manifest(out, "train",
                   params={"model": kind, "resample": method, "k": k, "seed": seed,
                           "train_rows": table.n_rows},
                   inputs={"table": args.table},
                   outputs=outputs)
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    table = read_table_csv(args.table)
    fitted = load_fitted(args.model)
    predicted = predict_model(fitted, table)
    report = metrics(confusion(table.labels, predicted))
    _write_json(out / "metrics.json", report.to_dict())
    lines = ["address,true,predicted"]
    lines += [f"{i},{t.value},{p.value}"
              for i, t, p in zip(table.ids, table.labels, predicted)]
    _write_lines(out / "predictions.csv", lines)
    write_manifest(out, "evaluate",
                   params={"model_kind": fitted.kind, "rows": table.n_rows},
                   inputs={"model": args.model, "table": args.table},
                   outputs=["metrics.json", "predictions.csv"])
    return 0


def cmd_importance(args) -> int:
    out = _out_dir(args)
    fitted = load_fitted(args.model)
    if fitted.tree is None:
        raise UntrainedModel(
            f"importance needs a tree ensemble, got {fitted.kind!r}")
    vim = trees.feature_importance(fitted.tree)
    ranking = trees.importance_ranking(fitted.tree.feature_names, vim)
    lines = ["feature,importance"]
    lines += [f"{name},{repr(value)}" for name, value in ranking]
    _write_lines(out / "importance.csv", lines)
    write_manifest(out, "importance",
                   params={"model_kind": fitted.kind},
                   inputs={"model": args.model},
                   outputs=["importance.csv"])
    return 0


def cmd_compare(args) -> int:
    out = _out_dir(args)
    config = load_config(args.config)
    kinds = _csv_list(_resolve(args, config, "models", "alstm,rf,gb"))
    resamplers = _csv_list(_resolve(args, config, "resamplers", "none"))
    k = int(_resolve(args, config, "k", 5))
    seed = int(_resolve(args, config, "seed", 0))
    bad = [m for m in kinds if m not in MODEL_KINDS]
    bad += [r for r in resamplers if r not in RESAMPLER_NAMES]
    if bad:
        print(f"error: unknown names: {', '.join(bad)}", file=sys.stderr)
        return 2
    train_table = read_table_csv(args.train)
    test_table = read_table_csv(args.test)

    rows: list[ComparisonRow] = []
    importance: dict[str, list[tuple[str, float]]] = {}
    combos: dict[str, dict] = {}
    for kind in kinds:
        for method in resamplers:
            spec = ResampleMethod.from_cli_name(method, k_neighbors=k, seed=seed)
            fitted = train_model(train_table, kind, spec, seed, config)
            predicted = predict_model(fitted, test_table)
            report = metrics(confusion(test_table.labels, predicted))
            rows.append(ComparisonRow(kind, method, report))
            combos[f"{kind}+{method}"] = report.to_dict()
            if kind in TREE_KINDS and method == "none":
                vim = trees.feature_importance(fitted.tree)
                importance[kind] = trees.importance_ranking(
                    fitted.tree.feature_names, vim)
            logger.info("compare %s+%s: f1_w=%.4f", kind, method,
                        report.weighted_f1)
    doc = ReportDocument(rows, importance or None)
    (out / "report.csv").write_text(report_to_csv(doc), encoding="utf-8")
    (out / "report.txt").write_text(report_to_text(doc), encoding="utf-8")
    (out / "chart.csv").write_text(chart_csv(doc), encoding="utf-8")
    _write_json(out / "metrics.json", {
        "combinations": combos,
        "importance": {kind: [[n, v] for n, v in pairs]
                       for kind, pairs in importance.items()},
    })
    write_manifest(out, "compare",
                   params={"models": kinds, "resamplers": resamplers,
                           "k": k, "seed": seed},
                   inputs={"test": args.test, "train": args.train},
                   outputs=["report.csv", "report.txt", "chart.csv", "metrics.json"])
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args)
    config = load_config(args.config)
    n = int(_resolve(args, config, "n", 1500))
    separation = float(_resolve(args, config, "separation", 6.0))
    seed = int(_resolve(args, config, "seed", 42))
    table = make_synthetic_table(n=n, separation=separation, seed=seed)
    write_table_csv(out / "table.csv", table)
    counts = {lbl.value: c for lbl, c in table.class_counts().items()}
    write_manifest(out, "synth",
                   params={"class_counts": counts, "n": n,
                           "seed": seed, "separation": separation},
                   inputs={},
                   outputs=["table.csv"])
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scamlens",
        description="Address-level scam classification pipeline.")
    parser.add_argument("--version", action="version",
                        version=f"scamlens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None, help="JSON config file")
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "fetch and validate labeled address reports")
    p.add_argument("--labels", required=True, help="address,label CSV")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--fixtures", default=None,
                       help="directory of <address>.json report files")
    group.add_argument("--base-url", default=None,
                       help="HTTP endpoint serving <address>.json")

    p = add("featurize", cmd_featurize, "extract the 17 features per address")
    p.add_argument("--histories", required=True, help="histories.json from ingest")

    p = add("split", cmd_split, "stratified train/test split")
    p.add_argument("--table", required=True, help="feature table CSV")
    p.add_argument("--ratio", type=float, default=None,
                   help="train fraction per class (default 0.8)")
    p.add_argument("--seed", type=int, default=None)

    p = add("resample", cmd_resample, "rebalance a feature table")
    p.add_argument("--table", required=True, help="feature table CSV")
    p.add_argument("--resample", default=None, choices=RESAMPLER_NAMES,
                   help="resampling method (default none)")
    p.add_argument("--k", type=int, default=None, help="neighbor count (default 5)")
    p.add_argument("--seed", type=int, default=None)

    p = add("train", cmd_train, "train one classifier")
    p.add_argument("--table", required=True, help="training table CSV")
    p.add_argument("--model", default=None, choices=MODEL_KINDS,
                   help="classifier kind (default alstm)")
    p.add_argument("--resample", default=None, choices=RESAMPLER_NAMES,
                   help="resampling applied to the standardized training rows")
    p.add_argument("--k", type=int, default=None, help="neighbor count (default 5)")
    p.add_argument("--seed", type=int, default=None)

    p = add("evaluate", cmd_evaluate, "score a saved model on a table")
    p.add_argument("--table", required=True, help="evaluation table CSV")
    p.add_argument("--model", required=True, help="model.json from train")

    p = add("importance", cmd_importance, "feature importance of a tree model")
    p.add_argument("--model", required=True, help="model.json from train")

    p = add("compare", cmd_compare, "train/evaluate a grid of models x resamplers")
    p.add_argument("--train", required=True, help="training table CSV")
    p.add_argument("--test", required=True, help="evaluation table CSV")
    p.add_argument("--models", default=None,
                   help="comma list of model kinds (default alstm,rf,gb)")
    p.add_argument("--resamplers", default=None,
                   help="comma list of resamplers (default none)")
    p.add_argument("--k", type=int, default=None, help="neighbor count (default 5)")
    p.add_argument("--seed", type=int, default=None)

    p = add("synth", cmd_synth, "generate the synthetic benchmark table")
    p.add_argument("--n", type=int, default=None, help="total rows (default 1500)")
    p.add_argument("--separation", type=float, default=None,
                   help="distance between class means (default 6.0)")
    p.add_argument("--seed", type=int, default=None)

    return parser


def log_level_from_env(value: str | None) -> int:
    """Map the SCAMLENS_LOG value to a logging level; unknown -> WARNING."""
    level = getattr(logging, (value or "WARNING").upper(), None)
    return level if isinstance(level, int) else logging.WARNING


def setup_logging() -> None:
    logging.basicConfig(level=log_level_from_env(os.environ.get("SCAMLENS_LOG")),
                        stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScamlensError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
