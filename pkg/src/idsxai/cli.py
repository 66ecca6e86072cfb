"""Command-line interface.

Every option can also be set through an environment variable named
``IDSXAI_<COMMAND>_<OPTION>``, e.g. ``IDSXAI_RUN_SEED=3``.

Exit codes: 0 success, 2 invalid input, 3 artifact mismatch, 4 internal error.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__, synthetic
from .errors import ArtifactMismatch, DataValidationError
from .globalexplain import extract_significant_features, weight_table
from .localexplain import ExplainerContext
from .pipeline import (ExperimentConfig, build_manifest, compute_metrics, config_from_manifest, derive_seed,
                       detect_batch, explain_batch, fit_model, global_explanation, prepare_data, run_experiment,
                       snapshot_id, write_jsonl)
from .reports import (Layout, dump_json, load_global, load_models, load_prepared, write_global, write_local,
                      write_metrics, write_model, write_prepared, write_result)

log = logging.getLogger("idsxai")

EXIT_VALIDATION, EXIT_ARTIFACT, EXIT_INTERNAL = 2, 3, 4


class Failure(click.ClickException):
    def __init__(self, message, exit_code):
        super().__init__(message)
        self.exit_code = exit_code


class Group(click.Group):
    """Maps library exceptions onto the documented exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except FileNotFoundError as exc:
            raise Failure(f"file not found: {exc.filename or exc}", EXIT_VALIDATION) from exc
        except DataValidationError as exc:
            raise Failure(str(exc), EXIT_VALIDATION) from exc
        except ArtifactMismatch as exc:
            raise Failure(f"artifact mismatch: {exc}", EXIT_ARTIFACT) from exc
        except Exception as exc:  # noqa: BLE001
            log.debug("internal error", exc_info=True)
            raise Failure(f"internal error: {type(exc).__name__}: {exc}", EXIT_INTERNAL) from exc


def _int_list(ctx, param, value):
    if value is None or isinstance(value, (list, tuple)):
        return value
    try:
        return [int(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated integers") from None


def _rows(spec: str | None, n: int) -> list[int]:
    """``None`` for all rows, ``a:b`` for a range, or comma-separated indices."""
    if not spec:
        return list(range(n))
    if ":" in spec:
        a, b = spec.split(":", 1)
        return list(range(int(a or 0), min(int(b) if b else n, n)))
    rows = [int(v) for v in spec.split(",")]
    bad = [r for r in rows if not 0 <= r < n]
    if bad:
        raise DataValidationError(f"row indices out of range [0, {n}): {bad}")
    return rows


out_option = click.option("--out", "out", type=click.Path(file_okay=False), required=True,
                          help="Output directory.")
format_option = click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="text",
                             show_default=True, help="What to echo on stdout.")


def _echo(fmt, text, doc):
    click.echo(json.dumps(doc, indent=1, sort_keys=True) if fmt == "json" else text.rstrip("\n"))


class _Output:
    """Echoes text as it comes; JSON is gathered into one document for ``flush``."""

    def __init__(self, fmt):
        self.fmt, self.doc = fmt, {}

    def add(self, text, key, value):
        if self.fmt == "json":
            self.doc[key] = value
        else:
            click.echo(text.rstrip("\n"))

    def flush(self):
        if self.fmt == "json":
            click.echo(json.dumps(self.doc, indent=1, sort_keys=True))


def _config(layout: Layout) -> ExperimentConfig:
    doc = layout.read_manifest()
    if "config" not in doc:
        raise DataValidationError(f"{layout.manifest} not found or has no config; run prepare first")
    return config_from_manifest(doc, verify_inputs=False)


def _save_config(layout: Layout, config: ExperimentConfig, **sections):
    manifest = build_manifest(config)
    manifest.update(sections)
    layout.update_manifest(**manifest)


@click.group(cls=Group, context_settings={"auto_envvar_prefix": "IDSXAI", "show_default": True})
@click.version_option(__version__, prog_name="idsxai")
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def cli(verbose):
    """Train, evaluate and explain intrusion-detection classifiers on flow records."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.argument("path", type=click.Path(dir_okay=False))
@click.option("--rows", type=click.IntRange(2), default=2000)
@click.option("--seed", type=int, default=0)
@click.option("--attack-share", type=click.FloatRange(0, 1), default=0.5)
@click.option("--sttl-noise", type=click.FloatRange(0), default=40.0, help="Spread of the dominant feature.")
@click.option("--missing-rate", type=click.FloatRange(0, 1), default=0.0)
def synth(path, rows, seed, attack_share, sttl_noise, missing_rate):
    """Write a synthetic flow table in the UNSW-NB15 column layout."""
    frame = synthetic.write_csv(path, rows, seed, attack_share=attack_share, sttl_noise=sttl_noise,
                                missing_rate=missing_rate)
    click.echo(f"wrote {len(frame)} rows to {path}")


def data_options(f):
    opts = [
        click.option("--train", "train_paths", multiple=True, type=click.Path(dir_okay=False),
                     help="Training CSV (repeat for several parts)."),
        click.option("--test", "test_paths", multiple=True, type=click.Path(dir_okay=False),
                     help="Test CSV; without it the training data is split at random."),
        click.option("--schema", default="builtin:unsw-nb15", help="builtin:unsw-nb15 or a schema JSON path."),
        click.option("--seed", type=int, default=0, help="Master seed; every stage derives its own stream."),
        click.option("--balancing", type=click.Choice(["none", "undersample", "smote", "both"]), default="both"),
        click.option("--split-ratio", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.8),
        click.option("--nan-threshold", type=click.FloatRange(0, 1, min_open=True), default=0.30),
        click.option("--smote-k", type=click.IntRange(1), default=5),
        click.option("--smote-ratio", type=click.FloatRange(0, 1, min_open=True), default=1.0),
        click.option("--jobs", type=click.IntRange(1), default=1,
                     help="Worker bound; results do not depend on it."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def model_options(f):
    opts = [
        click.option("--model", "models", multiple=True, type=click.Choice(["cart", "linear"]),
                     default=("cart",)),
        click.option("--depth-grid", callback=_int_list, default="4,6,8,10,12,16,20",
                     help="Depths tried by k-fold cross-validation."),
        click.option("--max-depth", type=click.IntRange(0), default=None, help="Fixed depth; skips selection."),
        click.option("--folds", type=click.IntRange(2), default=5),
        click.option("--min-samples-split", type=click.IntRange(2), default=2),
        click.option("--learning-rate", type=click.FloatRange(0, min_open=True), default=0.1),
        click.option("--epochs", type=click.IntRange(1), default=200),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def explain_options(f):
    opts = [
        click.option("--row", "rows", multiple=True, type=click.IntRange(0), help="Test row to explain (repeat)."),
        click.option("--m", "m", type=click.IntRange(1), default=10, help="Features per local explanation."),
        click.option("--n-samples", type=click.IntRange(100), default=5000),
        click.option("--kernel-width", type=click.FloatRange(0, min_open=True), default=None),
        click.option("--ridge", type=click.FloatRange(0), default=1e-3),
        click.option("--n-iter", type=click.IntRange(1), default=5, help="Permutation repeats."),
        click.option("--self-score", is_flag=True, help="Score permutations against model predictions."),
        click.option("--n-significant", type=click.IntRange(1), default=10),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


@cli.command()
@out_option
@data_options
def prepare(out, train_paths, test_paths, schema, seed, balancing, split_ratio, nan_threshold, smote_k,
            smote_ratio, jobs):
    """Load, clean, encode, split and balance the data."""
    if not train_paths:
        raise click.UsageError("at least one --train file is required")
    _check_exists(train_paths + test_paths)
    config = ExperimentConfig(list(train_paths), list(test_paths), schema, seed, balancing, split_ratio,
                              nan_threshold, smote_k=smote_k, smote_ratio=smote_ratio)
    layout = Layout(out)
    _save_config(layout, config, jobs=jobs)
    data = prepare_data(config)
    write_prepared(layout, data.train, data.test, data.fit_train)
    tr, te, ft = data.train.class_counts(), data.test.class_counts(), data.fit_train.class_counts()
    click.echo(f"train {len(data.train)} (attack {tr[1]}, normal {tr[0]}); test {len(data.test)} "
               f"(attack {te[1]}, normal {te[0]}); fit set after {balancing}: {len(data.fit_train)} "
               f"(attack {ft[1]}, normal {ft[0]})")


def _check_exists(paths):
    for p in paths:
        if not Path(p).is_file():
            raise DataValidationError(f"input file not found: {p}")


@cli.command()
@out_option
@model_options
def train(out, models, depth_grid, max_depth, folds, min_samples_split, learning_rate, epochs):
    """Fit the classifiers on the prepared training set."""
    layout = Layout(out)
    config = _config(layout)
    config.models, config.depth_grid, config.max_depth = list(models), list(depth_grid), max_depth
    config.k_folds, config.min_samples_split = folds, min_samples_split
    config.learning_rate, config.epochs = learning_rate, epochs
    _save_config(layout, config)
    _, _, fit_train = load_prepared(layout)
    for kind in config.models:
        model, scores = fit_model(kind, fit_train.matrix, fit_train.labels, config, fit_train.feature_names)
        write_model(layout, kind, model, scores)
        detail = f" depth {model.max_depth} ({model.n_nodes} nodes)" if kind == "cart" else ""
        click.echo(f"trained {kind}{detail}")


@cli.command()
@out_option
@format_option
def evaluate(out, fmt):
    """Score the trained classifiers on the prepared test set."""
    layout = Layout(out)
    config = _config(layout)
    _, test, _ = load_prepared(layout)
    output = _Output(fmt)
    for kind, model in load_models(layout, config.models).items():
        metrics = compute_metrics(test.labels, model.predict(test.matrix))
        write_metrics(layout, kind, metrics)
        output.add(f"[{kind}]\n{metrics.render_text()}", kind, metrics.to_dict())
    output.flush()


@cli.command()
@out_option
@explain_options
@format_option
def explain(out, rows, m, n_samples, kernel_width, ridge, n_iter, self_score, n_significant, fmt):
    """Global permutation importance plus local explanations of chosen test rows."""
    layout = Layout(out)
    config = _config(layout)
    config.explain_rows, config.m, config.n_samples = list(rows), m, n_samples
    config.kernel_width, config.ridge, config.n_iter = kernel_width, ridge, n_iter
    config.self_score, config.n_significant = self_score, n_significant
    _save_config(layout, config)
    train_ds, test, _ = load_prepared(layout)
    bad = [r for r in rows if r >= len(test)]
    if bad:
        raise DataValidationError(f"rows {bad} exceed the test set size {len(test)}")
    ctx = ExplainerContext.from_preprocessor(train_ds.preprocessor)
    names = train_ds.feature_names
    output = _Output(fmt)
    for kind, model in load_models(layout, config.models).items():
        gi = global_explanation(model, test.matrix, test.labels, config, names)
        write_global(layout, kind, gi, n_significant)
        exps = explain_batch(model, test.matrix[list(rows)], ctx, m, n_samples,
                             derive_seed(config.seed, "explain"), list(rows), kernel_width, ridge)
        output.add(f"[{kind}] global\n{weight_table(gi, n_significant)}", kind,
                   {"global": gi.to_dict(), "local": [e.to_dict() for e in exps]})
        for exp in exps:
            write_local(layout, kind, exp)
            if fmt == "text":
                click.echo(exp.render_text().rstrip("\n"))
        normal = [e for e in exps if e.predicted_class == "Normal"]
        if normal:
            sig = extract_significant_features(normal, n_significant)
            dump_json(sig.to_dict(), layout.reports / f"significant_{kind}.json")
    output.flush()


@cli.command()
@out_option
@click.option("--threshold", type=click.FloatRange(0, 100), default=80.0,
              help="Warn when argmax confidence (percent) is at or below this.")
@click.option("--strict", is_flag=True, help="Also warn on every Attack verdict.")
@click.option("--rows", "row_spec", default=None, help="a:b range or comma list of test rows; default all.")
@click.option("--m", "m", type=click.IntRange(1), default=None, help="Defaults to the manifest value.")
@click.option("--n-samples", type=click.IntRange(100), default=None, help="Defaults to the manifest value.")
def detect(out, threshold, strict, row_spec, m, n_samples):
    """Classify test rows and attach explanations to low-confidence verdicts."""
    layout = Layout(out)
    config = _config(layout)
    config.threshold, config.strict = threshold, strict
    config.m = m or config.m
    config.n_samples = n_samples or config.n_samples
    _save_config(layout, config, detect={"rows": row_spec})
    train_ds, test, _ = load_prepared(layout)
    idx = _rows(row_spec, len(test))
    ctx = ExplainerContext.from_preprocessor(train_ds.preprocessor)
    for kind, model in load_models(layout, config.models).items():
        gi = load_global(layout, kind)
        reports = detect_batch(model, test.matrix[idx], ctx, threshold, idx, global_importance=gi, strict=strict,
                               m=config.m, n_samples=config.n_samples, seed=derive_seed(config.seed, "explain"),
                               kernel_width=config.kernel_width, ridge=config.ridge)
        path = layout.reports / f"detections_{kind}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_jsonl(reports, path)
        n_warn = sum(r.warning for r in reports)
        ref = f", global snapshot {snapshot_id(gi)}" if gi is not None else ""
        click.echo(f"[{kind}] {len(reports)} rows, {n_warn} warnings at threshold {threshold:g}{ref} -> {path}")


@cli.command()
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), default=None,
              help="Rerun exactly what an earlier manifest describes.")
@out_option
@data_options
@model_options
@explain_options
@click.option("--retrain-significant", is_flag=True, help="Also refit on the significant feature set.")
@format_option
def run(manifest_path, out, train_paths, test_paths, schema, seed, balancing, split_ratio, nan_threshold, smote_k,
        smote_ratio, jobs, models, depth_grid, max_depth, folds, min_samples_split, learning_rate, epochs, rows, m,
        n_samples, kernel_width, ridge, n_iter, self_score, n_significant, retrain_significant, fmt):
    """Full pipeline in one pass: prepare, train, evaluate, explain."""
    if manifest_path:
        if not Path(manifest_path).is_file():
            raise DataValidationError(f"manifest not found: {manifest_path}")
        config = config_from_manifest(json.loads(Path(manifest_path).read_text(encoding="utf-8")))
    else:
        if not train_paths:
            raise click.UsageError("give --train files or --manifest")
        _check_exists(train_paths + test_paths)
        config = ExperimentConfig(
            list(train_paths), list(test_paths), schema, seed, balancing, split_ratio, nan_threshold,
            list(models), list(depth_grid), max_depth, folds, min_samples_split, smote_k, smote_ratio,
            learning_rate=learning_rate, epochs=epochs, n_iter=n_iter, self_score=self_score,
            explain_rows=list(rows), m=m, n_samples=n_samples, kernel_width=kernel_width, ridge=ridge,
            n_significant=n_significant, retrain_on_significant=retrain_significant,
        )
    layout = Layout(out)
    dump_json(build_manifest(config), layout.manifest)
    result = run_experiment(config)
    write_result(layout, result)
    summary = {k: {"accuracy": r.metrics.accuracy, "top": r.global_importance.top(config.n_significant)}
               for k, r in result.models.items()}
    text = "\n".join(f"[{k}] accuracy {v['accuracy']:.4f}; top features: {', '.join(v['top'])}"
                     for k, v in summary.items())
    _echo(fmt, text, summary)
    if result.failures:
        for k, msg in result.failures.items():
            click.echo(f"[{k}] failed: {msg}", err=True)
        raise Failure("some models failed; see reports/failures.json", EXIT_INTERNAL)


def main(argv=None):
    return cli.main(args=argv, prog_name="idsxai")


if __name__ == "__main__":
    sys.exit(main())
