"""Command-line entry point: ``lpmodrec <command> ...``."""

from __future__ import annotations

import csv
import itertools
import logging
import sys
from pathlib import Path

import click

from .classifier import (
    EvalReport,
    confusion_matrix,
    kfold_evaluate,
    load_model,
    predict,
    save_model,
    train_svm,
)
from .errors import ModrecError
from .features import FeatureTag, read_feature_csv, write_feature_csv
from .global_features import DEFAULT_QUANTILES
from .harness import (
    bundled_configs,
    diagnostic_feature_stability,
    extract_features,
    load_config,
    parameter_sweep,
    run_experiment,
)
from .iq import iter_manifest_instances
from .local_features import (
    DEFAULT_COMPONENTS,
    DEFAULT_SHINGLE,
    load_dictionaries,
    save_dictionaries,
    train_dictionaries,
)
from .simulator import NOISELESS, SimConfig, generate_dataset

FAMILY_CHOICES = click.Choice(["hoc", "os", "lp", "lp+hoc"], case_sensitive=False)


def _snr(text: str) -> float:
    return NOISELESS if str(text).lower() in ("inf", "noiseless") else float(text)


def _load_manifest(path, split):
    recs, xs = [], []
    for rec, x in iter_manifest_instances(path, split):
        recs.append(rec)
        xs.append(x)
    if not xs:
        raise click.ClickException(f"{path}: no instances" + (f" in split {split!r}" if split else ""))
    return recs, xs


def _label_rows(recs) -> list[dict]:
    return [{k: v for k, v in r.as_row().items()} for r in recs]


def _report_rows(report: EvalReport) -> list[list]:
    rows = [["metric", "value"], ["accuracy", f"{report.accuracy:.6f}"], ["n", report.total],
            ["folds", report.folds]]
    rows += [[f"acc_{c}", f"{a:.6f}"] for c, a in report.per_class_accuracy.items()]
    for i, t in enumerate(report.classes):
        for j, p in enumerate(report.classes):
            rows.append([f"confusion[{t}][{p}]", int(report.confusion[i, j])])
    return rows


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ModrecError as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc


@click.group(cls=_Group)
@click.option("-v", "--verbose", count=True, help="Log progress (repeat for debug).")
def main(verbose: int) -> None:
    """Modulation recognition from I/Q samples with local-pattern features."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--mod", "mods", multiple=True, required=True, help="Modulation (repeatable).")
@click.option("--snr", "snrs", multiple=True, default=["10"], show_default=True,
              help="SNR in dB, or 'inf' (repeatable).")
@click.option("--overlap", "overlaps", multiple=True, type=float, default=[100.0], show_default=True)
@click.option("--missing", "missings", multiple=True, type=int, default=[0], show_default=True)
@click.option("--rotation", "rotations", multiple=True, type=float, default=[0.0], show_default=True)
@click.option("--count", type=int, default=100, show_default=True, help="Training instances per cell.")
@click.option("--test-count", type=int, default=0, show_default=True, help="Test instances per cell.")
@click.option("--len", "length", type=int, default=512, show_default=True)
@click.option("--sps", type=int, default=4, show_default=True, help="Samples per symbol.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def simulate(mods, snrs, overlaps, missings, rotations, count, test_count, length, sps, seed, out):
    """Write simulated traces and a manifest for every knob combination."""
    cells = [
        SimConfig(mod, snr_db=_snr(s), overlap_pct=o, missing_symbols=m, rotation_rad=r,
                  n_samples=length, samples_per_symbol=sps)
        for mod, s, o, m, r in itertools.product(mods, snrs, overlaps, missings, rotations)
    ]
    counts = {"train": count}
    if test_count:
        counts["test"] = test_count
    path = generate_dataset(cells, counts, out, seed)
    click.echo(str(path))


@main.command("train-dict")
@click.option("--in", "manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--split", default="train", show_default=True, help="Manifest split to use ('' for all).")
@click.option("--l", "l", type=int, default=DEFAULT_SHINGLE, show_default=True, help="Shingle length.")
@click.option("--K", "K", type=int, default=DEFAULT_COMPONENTS, show_default=True, help="Mixture components.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def train_dict(manifest, split, l, K, seed, out):
    """Fit amplitude and phase GMM dictionaries on a manifest's instances."""
    _, xs = _load_manifest(manifest, split or None)
    dicts = train_dictionaries(xs, l, K, seed, description=f"{manifest} split={split or 'all'}")
    save_dictionaries(out, *dicts)
    click.echo(out)


@main.command()
@click.option("--features", "family", type=FAMILY_CHOICES, required=True)
@click.option("--in", "manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--dict", "dict_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--split", default="", help="Only this manifest split.")
@click.option("--q", type=int, default=DEFAULT_QUANTILES, show_default=True, help="Order-statistic quantiles.")
@click.option("--normalize/--no-normalize", default=False, show_default=True,
              help="Signed-sqrt and L2 normalize Fisher vectors.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def extract(family, manifest, dict_dir, split, q, normalize, out):
    """Compute one feature family for every instance of a manifest."""
    recs, xs = _load_manifest(manifest, split or None)
    dicts = load_dictionaries(dict_dir) if dict_dir else None
    X = extract_features(xs, family, dicts, q, normalize)
    write_feature_csv(out, [r.id for r in recs], _label_rows(recs), X, FeatureTag.parse(family))
    click.echo(out)


@main.command("train-clf")
@click.option("--features", "features", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--split", default="train", show_default=True, help="Rows to train on ('' for all).")
@click.option("--C", "C", default="1", show_default=True, help="Cost, or 'auto' for a grid search.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def train_clf(features, split, C, seed, out):
    """Train a one-vs-rest linear SVM on a feature CSV."""
    table = read_feature_csv(features)
    rows = [i for i, r in enumerate(table.labels) if not split or r["split"] == split]
    if not rows:
        raise click.ClickException(f"{features}: no rows in split {split!r}")
    cost = C if C == "auto" else float(C)
    model = train_svm(table.X[rows], [table.labels[i]["modulation"] for i in rows], cost, seed,
                      tag=table.tag)
    Path(out).mkdir(parents=True, exist_ok=True)
    save_model(model, Path(out) / "model.npz")
    click.echo(str(Path(out) / "model.npz"))


def _model_path(path) -> Path:
    p = Path(path)
    return p / "model.npz" if p.is_dir() else p


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--in", "manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--features", "features", type=click.Path(exists=True, dir_okay=False))
@click.option("--dict", "dict_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--split", default="", help="Only this split.")
@click.option("--q", type=int, default=DEFAULT_QUANTILES, show_default=True)
@click.option("--normalize/--no-normalize", default=False, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def classify(model_path, manifest, features, dict_dir, split, q, normalize, out):
    """Predict modulations for a manifest (or a feature CSV)."""
    model = load_model(_model_path(model_path))
    if (manifest is None) == (features is None):
        raise click.UsageError("give exactly one of --in or --features")
    if manifest:
        recs, xs = _load_manifest(manifest, split or None)
        ids, truth = [r.id for r in recs], [r.meta.modulation.value for r in recs]
        tag = model.feature_tag or FeatureTag.HOC
        X = extract_features(xs, tag, load_dictionaries(dict_dir) if dict_dir else None, q, normalize)
    else:
        table = read_feature_csv(features)
        rows = [i for i, r in enumerate(table.labels) if not split or r["split"] == split]
        if model.feature_tag is not None and table.tag is not model.feature_tag:
            raise click.ClickException(
                f"TagMismatch: model expects {model.feature_tag.value}, features are {table.tag.value}")
        ids = [table.ids[i] for i in rows]
        truth = [table.labels[i]["modulation"] for i in rows]
        X = table.X[rows]
    labels, scores = predict(model, X)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "true", "predicted"] + [f"score_{c}" for c in model.classes])
        for i, t, p, s in zip(ids, truth, labels, scores):
            w.writerow([i, t, p, *map(repr, s.tolist())])
    click.echo(out)


@main.command()
@click.option("--features", "features", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True),
              help="Score this model on the test split instead of cross-validating.")
@click.option("--folds", type=int, default=10, show_default=True)
@click.option("--C", "C", default="1", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--split", default="", help="Rows to use ('' for all).")
@click.option("--out", type=click.Path(dir_okay=False))
def evaluate(features, model_path, folds, C, seed, split, out):
    """Stratified k-fold accuracy and confusion matrix of a feature CSV."""
    table = read_feature_csv(features)
    rows = [i for i, r in enumerate(table.labels) if not split or r["split"] == split]
    labels = [table.labels[i]["modulation"] for i in rows]
    if model_path:
        model = load_model(_model_path(model_path))
        pred, _ = predict(model, table.X[rows])
        report = EvalReport(model.classes, confusion_matrix(labels, pred, model.classes))
    else:
        cost = C if C == "auto" else float(C)
        report = kfold_evaluate(table.X[rows], labels, folds, seed, cost, tag=table.tag)
    lines = _report_rows(report)
    if out:
        with open(out, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(lines)
    click.echo(f"accuracy {report.accuracy:.4f} over {report.total} instances")


@main.command()
@click.option("--config", "config", required=True,
              help=f"TOML file or bundled name ({', '.join(bundled_configs())}).")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--cache", type=click.Path(file_okay=False), help="Shared feature/dictionary cache.")
@click.option("--export/--no-export", default=True, show_default=True,
              help="Write traces, manifest and feature CSVs.")
def run(config, out, cache, export):
    """Run a declarative experiment and write its result tables."""
    cfg = load_config(config)
    table = run_experiment(cfg, out, cache, export_data=export)
    for row in table.rows:
        knobs = " ".join(f"{k}={row[k]}" for k in ("snr_db", "overlap_pct", "missing_symbols", "rotation_rad"))
        click.echo(f"{row['family']:7s} {knobs}  acc={row['accuracy_mean']:.4f}")


@main.command()
@click.option("--config", "config", required=True, help="TOML file or bundled config name.")
@click.option("--l", "ls", multiple=True, type=int, default=[2, 3, 5], show_default=True)
@click.option("--K", "Ks", multiple=True, type=int, default=[20, 50, 100], show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--cache", type=click.Path(file_okay=False))
def sweep(config, ls, Ks, out, cache):
    """Re-run an experiment over shingle lengths and dictionary sizes."""
    cfg = load_config(config)
    table = parameter_sweep(cfg, ls, Ks, out, cache)
    click.echo(f"{len(table.rows)} rows -> {Path(out) / 'sweep.csv'}")


@main.command()
@click.option("--knob", type=click.Choice(["overlap", "missing", "snr"]), default="overlap", show_default=True)
@click.option("--values", "values", multiple=True, type=float,
              default=[100, 90, 80, 70, 60, 50], show_default=True)
@click.option("--mod", "mods", multiple=True, default=["8QAM", "16QAM"], show_default=True)
@click.option("--instances", type=int, default=100, show_default=True)
@click.option("--len", "length", type=int, default=128, show_default=True)
@click.option("--snr", type=float, default=20.0, show_default=True)
@click.option("--sps", type=int, default=1, show_default=True, help="Samples per symbol.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def diagnose(knob, values, mods, instances, length, snr, sps, seed, out):
    """Mean/std of |C42|, |C63| and amplitude quartiles across a knob sweep."""
    if knob == "missing":
        values = [int(v) for v in values]
    diagnostic_feature_stability(mods, knob, values, instances, length, snr_db=snr,
                                 samples_per_symbol=sps, seed=seed, out=out)
    click.echo(out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
