"""Output directory layout and writers for every report the CLI produces.

Layout under the output root::

    manifest.json
    prepared/      encoded datasets (.npz) and the fitted preprocessor
    models/        serialized classifiers
    reports/       metrics, global importance, distributions, detections
    explanations/  one JSON/text/PNG triple per explained row

Every table or JSON document gets its figure written beside it with the
same stem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import plotting
from .data import (EncodedDataset, Preprocessor, class_distribution, correlation_matrix, load_dataset,
                   save_dataset)
from .errors import ArtifactMismatch, DataValidationError
from .globalexplain import GlobalImportance, weight_table
from .models import load_model, save_model


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_text(text: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


@dataclass(frozen=True)
class Layout:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def prepared(self) -> Path:
        return self.root / "prepared"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def explanations(self) -> Path:
        return self.root / "explanations"

    def read_manifest(self) -> dict:
        if not self.manifest.exists():
            return {}
        return json.loads(self.manifest.read_text(encoding="utf-8"))

    def update_manifest(self, **sections) -> dict:
        doc = self.read_manifest()
        doc.update(sections)
        dump_json(doc, self.manifest)
        return doc


def write_prepared(layout: Layout, train: EncodedDataset, test: EncodedDataset, fit_train: EncodedDataset) -> None:
    layout.prepared.mkdir(parents=True, exist_ok=True)
    dump_json(train.preprocessor.to_dict(), layout.prepared / "preprocessor.json")
    save_dataset(train, layout.prepared / "train.npz")
    save_dataset(test, layout.prepared / "test.npz")
    save_dataset(fit_train, layout.prepared / "fit_train.npz")
    dist = class_distribution(train, test)
    layout.reports.mkdir(parents=True, exist_ok=True)
    dist.to_csv(layout.reports / "class_distribution.csv", index=False, float_format="%.2f")
    plotting.plot_class_distribution(dist, layout.reports / "class_distribution.png")
    correlation_matrix(train).to_csv(layout.reports / "correlation.csv", float_format="%.6f")


def load_prepared(layout: Layout):
    """``(train, test, fit_train)`` from a prepared output directory."""
    pre_path = layout.prepared / "preprocessor.json"
    if not pre_path.exists():
        raise DataValidationError(f"no prepared data under {layout.root}; run prepare first")
    try:
        pre = Preprocessor.from_dict(json.loads(pre_path.read_text(encoding="utf-8")))
    except (KeyError, TypeError) as exc:
        raise ArtifactMismatch(f"unreadable preprocessor {pre_path}: {exc}") from None
    return tuple(load_dataset(layout.prepared / f"{n}.npz", pre) for n in ("train", "test", "fit_train"))


def write_model(layout: Layout, kind: str, model, depth_scores: dict | None = None) -> None:
    layout.models.mkdir(parents=True, exist_ok=True)
    save_model(model, layout.models / f"{kind}.json")
    if kind == "cart":
        names = model.feature_names
        write_text(model.render(names), layout.models / "cart.txt")
    if depth_scores:
        dump_json({str(k): v for k, v in depth_scores.items()}, layout.reports / f"depth_scores_{kind}.json")
        plotting.plot_depth_scores(depth_scores, layout.reports / f"depth_scores_{kind}.png", model.max_depth)


def load_models(layout: Layout, kinds) -> dict:
    out = {}
    for kind in kinds:
        path = layout.models / f"{kind}.json"
        if not path.exists():
            raise DataValidationError(f"model file {path} not found; run train first")
        out[kind] = load_model(path)
    return out


def write_metrics(layout: Layout, kind: str, metrics) -> None:
    dump_json(metrics.to_dict(), layout.reports / f"metrics_{kind}.json")
    write_text(metrics.render_text(), layout.reports / f"metrics_{kind}.txt")
    plotting.plot_confusion(metrics, layout.reports / f"metrics_{kind}.png")


def write_global(layout: Layout, kind: str, gi: GlobalImportance, top: int = 10) -> None:
    dump_json(gi.to_dict(), layout.reports / f"global_{kind}.json")
    write_text(gi.to_csv(), layout.reports / f"global_{kind}.csv")
    write_text(weight_table(gi, top), layout.reports / f"global_{kind}.txt")
    plotting.plot_global_importance(gi, layout.reports / f"global_{kind}.png")


def load_global(layout: Layout, kind: str) -> GlobalImportance | None:
    path = layout.reports / f"global_{kind}.json"
    if not path.exists():
        return None
    return GlobalImportance.from_dict(json.loads(path.read_text(encoding="utf-8")))


def write_local(layout: Layout, kind: str, exp) -> None:
    stem = layout.explanations / f"{kind}_row{exp.instance_id}"
    dump_json(exp.to_dict(), stem.with_suffix(".json"))
    write_text(exp.render_text(), stem.with_suffix(".txt"))
    plotting.plot_local_explanation(exp, stem.with_suffix(".png"))


def write_result(layout: Layout, result) -> None:
    """Write everything from a :class:`~idsxai.pipeline.ExperimentResult`."""
    d = result.data
    write_prepared(layout, d.train, d.test, d.fit_train)
    for kind, r in result.models.items():
        write_model(layout, kind, r.model, r.depth_scores)
        write_metrics(layout, kind, r.metrics)
        write_global(layout, kind, r.global_importance)
        for exp in r.local:
            write_local(layout, kind, exp)
        if r.significant is not None:
            dump_json(r.significant.to_dict(), layout.reports / f"significant_{kind}.json")
        if r.significant_metrics is not None:
            write_metrics(layout, f"{kind}_significant", r.significant_metrics)
    if result.failures:
        dump_json(result.failures, layout.reports / "failures.json")
