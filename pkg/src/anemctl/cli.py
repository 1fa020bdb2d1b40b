"""Operator command line covering the full workflow: generate, validate,
rectify, train, cross-validate, analyze, recommend, serve."""
from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import domain, evaluate, features, network, rectifier, simulate
from .config import ConfigError, load_config
from .domain import Cohort, Direction, Medication
from .pipeline import recommend as run_recommend

logger = logging.getLogger(__name__)


def _fail(message: str, category: str = "operation") -> None:
    click.echo(json.dumps({"error": category, "message": message}), err=True)
    sys.exit(1)


def _read_cohort(path: str, name: str | None = None) -> Cohort:
    with open(path, "rb") as fh:
        return domain.ingest_csv(fh, name=name or Path(path).stem)


@click.group()
@click.option("--verbose", is_flag=True, help="Log at INFO level.")
def main(verbose: bool):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


config_option = click.option("--config", "config_path", type=click.Path(exists=True),
                             default=None, help="YAML run configuration.")


@main.command()
@click.option("--seed", type=int, default=None, help="Cohort seed (overrides config).")
@click.option("--patients", type=int, default=None)
@click.option("--occasions", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@config_option
def synth(seed, patients, occasions, out_dir, config_path):
    """Generate paired ground-truth/delayed synthetic cohorts plus manifest."""
    try:
        cfg = load_config(config_path, {"seed": seed})
        spec = cfg.cohort_spec()
        if patients:
            spec = dataclasses.replace(spec, n_patients=patients)
        if occasions:
            spec = dataclasses.replace(spec, n_occasions=occasions)
        ground, delayed = simulate.generate_cohort(spec)
    except (ConfigError, ValueError, simulate.SimulationError) as exc:
        _fail(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ground_truth.csv").write_bytes(domain.export_csv(ground))
    (out / "delayed.csv").write_bytes(domain.export_csv(delayed))
    (out / "manifest.json").write_text(simulate.manifest(spec))
    click.echo(f"wrote {out / 'ground_truth.csv'}, {out / 'delayed.csv'}, manifest.json")


@main.command("validate-data")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
def validate_data(data_path):
    """Ingest a cohort CSV and report its invariant status and label mix."""
    try:
        cohort = _read_cohort(data_path)
    except (domain.ParseError, domain.ValidationError) as exc:
        _fail(str(exc), "validation")
    report = {"patients": cohort.n_patients, "occasions": cohort.n_occasions}
    for med in Medication:
        hist = domain.label_histogram(cohort, med)
        report[med.value.lower()] = {d.value: n for d, n in hist.items()}
    click.echo(json.dumps(report, indent=2))


@main.command("rectify")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--log", "log_path", type=click.Path(), default=None)
@click.option("--max-lag", type=int, default=rectifier.DEFAULT_MAX_LAG, show_default=True)
@click.option("--role", type=click.Choice(["training", "validation"]), default="training",
              help="Rectification is meant for training cohorts only.")
@click.option("--force", is_flag=True, help="Allow rectifying a validation cohort.")
@click.option("--heuristic", is_flag=True,
              help="Run the hb-band delay detector before rectifying.")
def rectify_cmd(data_path, out_path, log_path, max_lag, role, force, heuristic):
    """Move delayed UP/DOWN decisions back to their basis exams."""
    if role == "validation" and not force:
        _fail("validation cohorts are audited raw; use --force to rectify anyway",
              "usage")
    try:
        cohort = _read_cohort(data_path)
        if heuristic:
            cohort = rectifier.detect_delayed_heuristic(cohort)
        rectified, log = rectifier.rectify(cohort, max_lag=max_lag)
    except (domain.ParseError, domain.ValidationError, ValueError) as exc:
        _fail(str(exc))
    Path(out_path).write_bytes(domain.export_csv(rectified))
    if log_path:
        Path(log_path).write_bytes(log.to_csv())
    click.echo(f"moved {len(log.entries)}, conflicts {len(log.conflicts)}, "
               f"skipped {len(log.skipped)}")


def _train_pair_from(cohort: Cohort, cfg) -> evaluate.TrainedPair:
    settings = cfg.validation_settings()
    examples = features.build_examples(cohort, settings.history_len)
    return evaluate.train_pair(examples, settings)


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--medication", type=click.Choice(["esa", "is", "both"]), default="both")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@config_option
def train(data_path, medication, out_dir, config_path):
    """Train direction classifiers on a (rectified) cohort."""
    try:
        cfg = load_config(config_path, {})
        cohort = _read_cohort(data_path)
        pair = _train_pair_from(cohort, cfg)
    except (ConfigError, domain.ParseError, domain.ValidationError,
            network.TrainingError, ValueError) as exc:
        _fail(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if medication in ("esa", "both"):
        (out / "esa_model.json").write_bytes(pair.esa_model.save())
        written.append("esa_model.json")
    if medication in ("is", "both"):
        (out / "is_model.json").write_bytes(pair.is_model.save())
        written.append("is_model.json")
    (out / "thresholds.json").write_text(json.dumps(
        {m.value: t for m, t in pair.thresholds.items()}, indent=2))
    click.echo(f"wrote {', '.join(written)} and thresholds.json to {out}")


def _report_dict(report: evaluate.RatesReport) -> dict:
    return {
        "r_total": report.r_total, "r_up": report.r_up, "r_stay": report.r_stay,
        "r_down": report.r_down,
        "counts": {d.value: n for d, n in report.counts.items()},
        "before_physician_rate": report.before_physician_rate,
    }


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the per-fold and aggregate report as JSON.")
@config_option
def lopo(data_path, out_path, config_path):
    """Leave-one-patient-out cross-validation."""
    try:
        cfg = load_config(config_path, {})
        cohort = _read_cohort(data_path)
        result = evaluate.lopo(cohort, cfg.validation_settings())
    except (ConfigError, domain.ParseError, domain.ValidationError,
            network.TrainingError, ValueError) as exc:
        _fail(str(exc))
    doc = {
        "folds": [{"patient_id": f.patient_id,
                   "reports": {m.value: _report_dict(r) if r else None
                               for m, r in f.reports.items()}}
                  for f in result.folds],
        "aggregate": {m.value: _report_dict(r) for m, r in result.aggregate.items()},
    }
    if out_path:
        Path(out_path).write_text(json.dumps(doc, indent=2))
    click.echo(json.dumps(doc["aggregate"], indent=2))


@main.command()
@click.option("--train-data", type=click.Path(exists=True), required=True)
@click.option("--valid-data", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@config_option
def rdv(train_data, valid_data, out_path, config_path):
    """Raw-data validation: train on one cohort, audit an independent one."""
    try:
        cfg = load_config(config_path, {})
        result = evaluate.rdv(_read_cohort(train_data), _read_cohort(valid_data),
                              cfg.validation_settings())
    except (ConfigError, domain.ParseError, domain.ValidationError,
            network.TrainingError, ValueError) as exc:
        _fail(str(exc))
    doc = {m.value: _report_dict(r) for m, r in result.reports.items()}
    if out_path:
        Path(out_path).write_text(json.dumps(doc, indent=2))
    click.echo(json.dumps(doc, indent=2))


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--medication", type=click.Choice(["esa", "is"]), default="esa")
@config_option
def roc(model_path, data_path, out_path, medication, config_path):
    """Emit the ROC sweep CSV and the nearest-corner threshold."""
    try:
        cfg = load_config(config_path, {})
        model = network.load(Path(model_path).read_bytes())
        cohort = _read_cohort(data_path)
        examples = features.build_examples(cohort, cfg.history_len)
        med = Medication.ESA if medication == "esa" else Medication.IS
        X = features.normalized_matrix(model.normalization, examples)
        X_prev = (features.normalized_prev_matrix(model.normalization, examples)
                  if med is Medication.IS else None)
        probs = evaluate._probabilities(model, med, X, X_prev)
        refs = [ex.esa_label if med is Medication.ESA else ex.is_label for ex in examples]
        curve = evaluate.roc(probs, refs)
        threshold = evaluate.select_threshold(curve)
    except (ConfigError, domain.ParseError, domain.ValidationError,
            network.ModelLoadError, ValueError) as exc:
        _fail(str(exc))
    Path(out_path).write_bytes(evaluate.roc_to_csv(curve))
    click.echo(json.dumps({"auc": curve.auc, "selected_threshold": threshold}))


@main.command("tune-weights")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--budget", type=int, default=8, show_default=True)
@config_option
def tune_weights(data_path, budget, config_path):
    """Search ESA class-weight adjustments that balance per-class rates."""
    try:
        cfg = load_config(config_path, {})
        cohort = _read_cohort(data_path)
        result = evaluate.tune_class_weights(cohort, cfg.validation_settings(),
                                             budget=budget, seed=cfg.seed)
    except (ConfigError, domain.ParseError, domain.ValidationError,
            network.TrainingError, ValueError) as exc:
        _fail(str(exc))
    click.echo(json.dumps({
        "weights": {d.value: w for d, w in result.weights.items()},
        "min_class_rate": result.min_class_rate,
        "rate_spread": result.rate_spread,
        "budget_exhausted": result.budget_exhausted,
    }, indent=2))


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--components", type=int, default=3, show_default=True)
@config_option
def pca(data_path, out_path, components, config_path):
    """Project the normalized feature space onto its top components."""
    try:
        cfg = load_config(config_path, {})
        cohort = _read_cohort(data_path)
        examples = features.build_examples(cohort, cfg.history_len)
        stats = features.fit_normalization(examples)
        X = features.normalized_matrix(stats, examples)
        result = evaluate.pca(X, k=components)
    except (ConfigError, domain.ParseError, domain.ValidationError, ValueError) as exc:
        _fail(str(exc))
    Path(out_path).write_bytes(evaluate.pca_to_csv(result, examples))
    click.echo(json.dumps({"explained_variance": result.explained_variance.tolist()}))


@main.command("recommend")
@click.option("--esa-model", type=click.Path(exists=True), required=True)
@click.option("--is-model", type=click.Path(exists=True), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--patient", "patient_id", required=True)
@click.option("--esa-threshold", type=float, default=0.475, show_default=True)
@click.option("--is-threshold", type=float, default=0.470, show_default=True)
def recommend_cmd(esa_model, is_model, data_path, patient_id, esa_threshold, is_threshold):
    """Direction recommendation for one patient's latest occasion."""
    try:
        esa = network.load(Path(esa_model).read_bytes())
        is_ = network.load(Path(is_model).read_bytes())
        cohort = _read_cohort(data_path)
        timeline = cohort.patient(patient_id)
        rec = run_recommend(esa, is_, timeline,
                            {Medication.ESA: esa_threshold, Medication.IS: is_threshold})
    except KeyError:
        _fail(f"patient {patient_id!r} not found in {data_path}")
    except (domain.ParseError, domain.ValidationError,
            network.ModelLoadError, ValueError) as exc:
        _fail(str(exc))
    click.echo(json.dumps(rec.to_json_dict(), indent=2))


@main.command()
@click.option("--esa-model", type=click.Path(exists=True), required=True)
@click.option("--is-model", type=click.Path(exists=True), required=True)
@click.option("--esa-threshold", type=float, default=0.475, show_default=True)
@click.option("--is-threshold", type=float, default=0.470, show_default=True)
@click.option("--port", type=int, default=8710, show_default=True)
@click.option("--bind", default="127.0.0.1", show_default=True)
def serve(esa_model, is_model, esa_threshold, is_threshold, port, bind):
    """Start the HTTP inference service (loopback by default)."""
    import uvicorn

    from .service import create_app

    try:
        esa = network.load(Path(esa_model).read_bytes())
        is_ = network.load(Path(is_model).read_bytes())
    except network.ModelLoadError as exc:
        _fail(str(exc))
    app = create_app(esa_model=esa, is_model=is_, esa_threshold=esa_threshold,
                     is_threshold=is_threshold)
    uvicorn.run(app, host=bind, port=port)


if __name__ == "__main__":
    main()
