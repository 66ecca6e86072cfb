"""End-to-end experiment runs, classification metrics and threshold-gated detection."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import cart
from .data import (ATTACK, EncodedDataset, apply_preprocessor, drop_high_nan_rows, encode_and_scale,
                   impute_median, load_csv, merge_parts, random_undersample, smote_balance, split_train_test)
from .errors import ArtifactMismatch, ConfigError, EmptyExplanations, EmptyInput, LengthMismatch
from .globalexplain import (GlobalImportance, SignificantFeatureSet, combine_global, extract_significant_features,
                            permutation_importance)
from .localexplain import DEFAULT_RIDGE, ExplainerContext, LocalExplanation, explain_instance
from .models import fit_linear
from .schema import resolve_schema

log = logging.getLogger(__name__)

MANIFEST_FORMAT = 1
BALANCING = ("none", "undersample", "smote", "both")
MODEL_KINDS = ("cart", "linear")


def derive_seed(seed: int, label: str) -> int:
    """Independent 32-bit seed for a named stage, stable across runs and job counts."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(label.encode())])
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    """Binary metrics with Attack as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    normal: ClassScores
    attack: ClassScores
    macro: ClassScores
    weighted: ClassScores
    fpr: float
    tnr: float
    tpr: float
    mcc: float
    far: float
    balanced_accuracy: float

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        return self.tp, self.fp, self.tn, self.fn

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        kw = dict(d)
        for k in ("normal", "attack", "macro", "weighted"):
            kw[k] = ClassScores(**d[k])
        return cls(**kw)

    def render_text(self) -> str:
        """Fixed-width summary; values rounded to 4 decimals."""
        lines = [f"{'':<14}{'precision':>10}{'recall':>10}{'f1-score':>10}{'support':>10}"]
        for name in ("normal", "attack", "macro", "weighted"):
            c = getattr(self, name)
            label = {"macro": "macro avg", "weighted": "weighted avg"}.get(name, name.capitalize())
            lines.append(f"{label:<14}{c.precision:>10.4f}{c.recall:>10.4f}{c.f1:>10.4f}{c.support:>10d}")
        lines.append("")
        lines.append(f"{'accuracy':<20}{self.accuracy:.4f}")
        for k in ("fpr", "tnr", "mcc", "far", "balanced_accuracy"):
            lines.append(f"{k:<20}{getattr(self, k):.4f}")
        lines.append(f"confusion  TP={self.tp} FP={self.fp} TN={self.tn} FN={self.fn}")
        return "\n".join(lines) + "\n"


def metrics_from_confusion(tp: int, fp: int, tn: int, fn: int) -> MetricsReport:
    tp, fp, tn, fn = int(tp), int(fp), int(tn), int(fn)
    total = tp + fp + tn + fn
    if total == 0:
        raise EmptyInput("no predictions to score")

    def scores(tp_, fp_, fn_):
        return ClassScores(_div(tp_, tp_ + fp_), _div(tp_, tp_ + fn_), _div(2 * tp_, 2 * tp_ + fp_ + fn_), tp_ + fn_)

    attack = scores(tp, fp, fn)
    normal = scores(tn, fn, fp)
    macro = ClassScores(*(0.5 * (getattr(normal, k) + getattr(attack, k)) for k in ("precision", "recall", "f1")),
                        total)
    weighted = ClassScores(*(_div(getattr(normal, k) * normal.support + getattr(attack, k) * attack.support, total)
                             for k in ("precision", "recall", "f1")), total)
    fpr = _div(fp, fp + tn)
    tpr = _div(tp, tp + fn)
    # exact integer numerator; the product of four factors stays exact in Python ints
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom else 0.0
    return MetricsReport(
        tp=tp, fp=fp, tn=tn, fn=fn, accuracy=(tp + tn) / total, normal=normal, attack=attack, macro=macro,
        weighted=weighted, fpr=fpr, tnr=1.0 - fpr, tpr=tpr, mcc=max(-1.0, min(1.0, mcc)), far=_div(fp, fp + tp),
        balanced_accuracy=0.5 * (tpr + 1.0 - fpr),
    )


def compute_metrics(y_true, y_pred) -> MetricsReport:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"y_true has {len(y_true)} labels, y_pred has {len(y_pred)}")
    if len(y_true) == 0:
        raise EmptyInput("no labels given")
    t = y_true == ATTACK
    p = y_pred == ATTACK
    return metrics_from_confusion(np.sum(t & p), np.sum(~t & p), np.sum(~t & ~p), np.sum(t & ~p))


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionReport:
    instance_id: int
    verdict: str
    confidence_percent: float
    warning: bool
    threshold_used: float
    local: LocalExplanation | None = None
    global_ref: str | None = None

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["local"] = None if self.local is None else self.local.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


def snapshot_id(gi: GlobalImportance) -> str:
    return hashlib.sha256(gi.to_json().encode()).hexdigest()[:16]


def detect(model, instance, context: ExplainerContext, threshold: float = 80.0, *, instance_id: int = 0,
           global_importance: GlobalImportance | None = None, strict: bool = False, m: int = 10,
           n_samples: int = 5000, seed: int = 0, kernel_width: float | None = None,
           ridge: float = DEFAULT_RIDGE) -> DetectionReport:
    """Classify one instance and explain it when confidence is at or below ``threshold``.

    Confidence is the argmax probability as a percentage, rounded to 10
    decimals so that e.g. p=0.8 gives exactly 80. ``strict`` additionally
    warns on every Attack verdict.
    """
    if not 0 <= threshold <= 100:
        raise ValueError("threshold must lie in [0, 100]")
    p = np.asarray(model.predict_proba(np.asarray(instance, dtype=float)), dtype=float)
    verdict = "Attack" if p[1] > p[0] else "Normal"
    confidence = round(100.0 * float(p.max()), 10)
    warning = confidence <= threshold or (strict and verdict == "Attack")
    local = gref = None
    if warning:
        local = explain_instance(model, instance, context, m=m, n_samples=n_samples, seed=seed,
                                 instance_id=instance_id, kernel_width=kernel_width, ridge=ridge)
        gref = snapshot_id(global_importance) if global_importance is not None else None
    return DetectionReport(int(instance_id), verdict, confidence, warning, float(threshold), local, gref)


def detect_batch(model, X, context: ExplainerContext, threshold: float = 80.0, instance_ids=None,
                 **kwargs) -> list[DetectionReport]:
    X = np.asarray(X, dtype=float)
    ids = range(len(X)) if instance_ids is None else instance_ids
    return [detect(model, x, context, threshold, instance_id=int(i), **kwargs) for x, i in zip(X, ids)]


def explain_batch(model, instances, context: ExplainerContext, m: int = 10, n_samples: int = 5000, seed: int = 0,
                  instance_ids=None, kernel_width: float | None = None,
                  ridge: float = DEFAULT_RIDGE) -> list[LocalExplanation]:
    """One explanation per instance, in order.

    Each instance's random stream depends only on ``(seed, instance_id)``, so
    results do not depend on how a set of instances is batched. Ids default
    to positions in ``instances``.
    """
    instances = list(instances)
    ids = range(len(instances)) if instance_ids is None else list(instance_ids)
    if len(ids) != len(instances):
        raise LengthMismatch("instance_ids and instances differ in length")
    return [explain_instance(model, x, context, m=m, n_samples=n_samples, seed=seed, instance_id=int(i),
                             kernel_width=kernel_width, ridge=ridge) for x, i in zip(instances, ids)]


# ---------------------------------------------------------------------------
# Experiment configuration and orchestration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    train_paths: list[str]
    test_paths: list[str] = field(default_factory=list)
    schema: str = "builtin:unsw-nb15"
    seed: int = 0
    balancing: str = "both"
    split_ratio: float = 0.8
    nan_threshold: float = 0.30
    models: list[str] = field(default_factory=lambda: ["cart"])
    depth_grid: list[int] = field(default_factory=lambda: [4, 6, 8, 10, 12, 16, 20])
    max_depth: int | None = None
    k_folds: int = 5
    min_samples_split: int = 2
    smote_k: int = 5
    smote_ratio: float = 1.0
    undersample_ratio: float = 1.0
    learning_rate: float = 0.1
    epochs: int = 200
    n_iter: int = 5
    self_score: bool = False
    explain_rows: list[int] = field(default_factory=list)
    m: int = 10
    n_samples: int = 5000
    kernel_width: float | None = None
    ridge: float = DEFAULT_RIDGE
    n_significant: int = 10
    retrain_on_significant: bool = False
    threshold: float = 80.0
    strict: bool = False

    def __post_init__(self):
        if isinstance(self.train_paths, (str, Path)):
            self.train_paths = [str(self.train_paths)]
        if isinstance(self.test_paths, (str, Path)):
            self.test_paths = [str(self.test_paths)]
        self.train_paths = [str(p) for p in self.train_paths]
        self.test_paths = [str(p) for p in self.test_paths]
        if not self.train_paths:
            raise ConfigError("at least one training file is required")
        if self.balancing not in BALANCING:
            raise ConfigError(f"balancing must be one of {BALANCING}")
        bad = [k for k in self.models if k not in MODEL_KINDS]
        if bad or not self.models:
            raise ConfigError(f"models must be drawn from {MODEL_KINDS}, got {self.models}")
        if not self.depth_grid and self.max_depth is None:
            raise ConfigError("depth grid is empty")
        if not 0 <= self.threshold <= 100:
            raise ConfigError("threshold must lie in [0, 100]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def build_manifest(config: ExperimentConfig) -> dict:
    """Everything needed to rerun: config, seeds per stage and input hashes."""
    from . import __version__

    stages = ("split", "balance", "cv", "permutation", "explain")
    return {
        "format": MANIFEST_FORMAT,
        "package_version": __version__,
        "config": config.to_dict(),
        "schema_id": resolve_schema(config.schema).name,
        "seeds": {s: derive_seed(config.seed, s) for s in stages},
        "inputs": {p: file_sha256(p) for p in config.train_paths + config.test_paths},
    }


def config_from_manifest(manifest: dict, verify_inputs: bool = True) -> ExperimentConfig:
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ArtifactMismatch(f"manifest format {manifest.get('format')!r} unsupported")
    config = ExperimentConfig.from_dict(manifest["config"])
    if verify_inputs:
        for path, digest in manifest.get("inputs", {}).items():
            if file_sha256(path) != digest:
                raise ArtifactMismatch(f"input file changed since the manifest was written: {path}")
    return config


@dataclass
class PreparedData:
    train: EncodedDataset
    test: EncodedDataset
    fit_train: EncodedDataset

    @property
    def context(self) -> ExplainerContext:
        return ExplainerContext.from_preprocessor(self.train.preprocessor)


def _load_parts(paths, schema):
    return merge_parts([load_csv(p, schema) for p in paths])


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Load, clean, encode and split; then balance the training part."""
    schema = resolve_schema(config.schema)
    train_raw = impute_median(drop_high_nan_rows(_load_parts(config.train_paths, schema), config.nan_threshold))
    if config.test_paths:
        test_raw = drop_high_nan_rows(_load_parts(config.test_paths, schema), config.nan_threshold)
        test_raw = impute_median(test_raw, reference=train_raw)
        train = encode_and_scale(train_raw)
        test = apply_preprocessor(test_raw, train.preprocessor, unseen="mode")
    else:
        pair = split_train_test(encode_and_scale(train_raw), config.split_ratio, derive_seed(config.seed, "split"))
        train, test = pair.train, pair.test
    return PreparedData(train, test, balance(train, config))


def balance(train: EncodedDataset, config: ExperimentConfig) -> EncodedDataset:
    """Apply the configured balancing.

    ``both`` undersamples the majority to twice the minority, then SMOTE
    closes the remaining gap; a full 1:1 undersample first would leave
    SMOTE nothing to do.
    """
    seed = derive_seed(config.seed, "balance")
    mode = config.balancing
    if mode == "undersample":
        return random_undersample(train, seed, config.undersample_ratio)
    if mode == "smote":
        return smote_balance(train, config.smote_k, config.smote_ratio, seed)
    if mode == "both":
        return smote_balance(random_undersample(train, seed, 0.5), config.smote_k, config.smote_ratio, seed + 1)
    return train


@dataclass
class ModelResult:
    model: object
    metrics: MetricsReport
    global_importance: GlobalImportance
    depth_scores: dict | None = None
    local: list[LocalExplanation] = field(default_factory=list)
    significant: SignificantFeatureSet | None = None
    significant_metrics: MetricsReport | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    manifest: dict
    data: PreparedData
    models: dict[str, ModelResult]
    failures: dict[str, str]


def fit_model(kind: str, X, y, config: ExperimentConfig, feature_names):
    if kind == "cart":
        scores = None
        depth = config.max_depth
        if depth is None:
            depth, scores = cart.select_depth(X, y, config.depth_grid, config.k_folds,
                                              derive_seed(config.seed, "cv"), config.min_samples_split)
        return cart.fit(X, y, depth, config.min_samples_split, feature_names), scores
    return fit_linear(X, y, config.learning_rate, config.epochs, config.seed), None


def global_explanation(model, X, y, config: ExperimentConfig, feature_names) -> GlobalImportance:
    """Permutation importance annotated with the model's own weights.

    Trees contribute impurity importance; the linear model contributes its
    normalized absolute coefficients.
    """
    gi = permutation_importance(model, X, y, config.n_iter, derive_seed(config.seed, "permutation"),
                                feature_names, config.self_score)
    if isinstance(model, cart.CartTree):
        return combine_global(gi, cart.impurity_importance(model))
    w = np.abs(model.weights)
    return combine_global(gi, w / w.sum() if w.sum() > 0 else w)


def _run_model(kind: str, data: PreparedData, config: ExperimentConfig) -> ModelResult:
    names = data.train.feature_names
    tr, te = data.fit_train, data.test
    model, scores = fit_model(kind, tr.matrix, tr.labels, config, names)
    metrics = compute_metrics(te.labels, model.predict(te.matrix))
    gi = global_explanation(model, te.matrix, te.labels, config, names)
    result = ModelResult(model, metrics, gi, scores)
    if config.explain_rows:
        rows = list(config.explain_rows)
        result.local = explain_batch(model, te.matrix[rows], data.context, config.m, config.n_samples,
                                     derive_seed(config.seed, "explain"), rows, config.kernel_width, config.ridge)
        try:
            result.significant = extract_significant_features(result.local, config.n_significant)
        except EmptyExplanations:
            log.warning("%s: no Normal-class explanations among explain_rows; no significant set", kind)
    if config.retrain_on_significant and result.significant is not None:
        cols = [names.index(f) for f in result.significant.features]
        sub_model, _ = fit_model(kind, tr.matrix[:, cols], tr.labels, config, [names[c] for c in cols])
        result.significant_metrics = compute_metrics(te.labels, sub_model.predict(te.matrix[:, cols]))
    return result


def run_experiment(config: ExperimentConfig, data: PreparedData | None = None) -> ExperimentResult:
    """Single pass: prepare, then per model fit, score, and explain.

    A model that fails is recorded in ``failures`` and the others still run.
    """
    manifest = build_manifest(config)
    data = data or prepare_data(config)
    results: dict[str, ModelResult] = {}
    failures: dict[str, str] = {}
    for kind in config.models:
        try:
            results[kind] = _run_model(kind, data, config)
        except Exception as exc:  # noqa: BLE001 - partial results are kept on purpose
            log.exception("model %s failed", kind)
            failures[kind] = f"{type(exc).__name__}: {exc}"
    return ExperimentResult(config, manifest, data, results, failures)


def write_jsonl(reports, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
