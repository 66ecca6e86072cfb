"""Perturbation-based local surrogate explanations for tabular flow records.

For one instance the explainer draws perturbed records from the training
marginals, maps each to a binary interpretable vector (numeric feature: same
quartile bin as the instance; categorical feature: same category), weights
it by an exponential kernel on its distance to the instance, and fits a
weighted ridge regression of the model's attack probability on the
interpretable vectors. Positive coefficients push toward Attack, negative
toward Normal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import FeatureStats, Preprocessor, bin_index, discretize
from .errors import DegenerateDesign, DimensionMismatch

NORMAL, ATTACK = "Normal", "Attack"
DEFAULT_RIDGE = 1e-3

__all__ = [
    "ExplainerContext", "PerturbationSample", "PerturbationSet", "LocalExplanation",
    "discretize", "perturb", "kernel_weight", "default_kernel_width", "select_features",
    "fit_surrogate", "explain_instance", "instance_rng",
]


def default_kernel_width(feature_count: int) -> float:
    return 0.75 * np.sqrt(feature_count)


def instance_rng(seed: int, instance_id: int) -> np.random.Generator:
    """Private stream for one (seed, instance) pair; independent of call order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(instance_id)]))


@dataclass(frozen=True)
class ExplainerContext:
    """What the explainer needs to know about the training data."""

    feature_names: tuple[str, ...]
    stats: tuple[FeatureStats, ...]

    @classmethod
    def from_preprocessor(cls, pre: Preprocessor) -> "ExplainerContext":
        return cls(tuple(pre.feature_names), tuple(pre.feature_stats))

    @property
    def n_features(self) -> int:
        return len(self.stats)

    @property
    def categorical(self) -> np.ndarray:
        return np.array([s.is_categorical for s in self.stats])

    def code_of(self, j: int, z_value):
        """Category code of a standardized value of categorical feature ``j``."""
        s = self.stats[j]
        return np.rint(np.asarray(z_value) * s.std + s.mean)

    def category_scaled(self, j: int) -> np.ndarray:
        s = self.stats[j]
        return (np.arange(len(s.categories)) - s.mean) / s.std


@dataclass(frozen=True)
class PerturbationSample:
    z: np.ndarray
    z_interp: np.ndarray
    f_of_z: tuple[float, float]
    kernel_weight: float


@dataclass(frozen=True)
class PerturbationSet:
    """Column-stacked perturbation samples; row 0 is the instance itself."""

    Z: np.ndarray
    interp: np.ndarray
    proba: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.Z)

    def __getitem__(self, i) -> PerturbationSample:
        return PerturbationSample(self.Z[i], self.interp[i], tuple(self.proba[i]), float(self.weights[i]))

    @property
    def target(self) -> np.ndarray:
        return self.proba[:, 1]


def _interp(ctx: ExplainerContext, instance: np.ndarray, Z: np.ndarray) -> np.ndarray:
    out = np.empty(Z.shape, dtype=np.int8)
    for j, s in enumerate(ctx.stats):
        if s.is_categorical:
            out[:, j] = ctx.code_of(j, Z[:, j]) == ctx.code_of(j, instance[j])
        else:
            edges = np.asarray(s.quartiles)
            out[:, j] = bin_index(Z[:, j], edges) == bin_index(instance[j], edges)
    return out


def kernel_weight(instance, z, width: float, categorical=None, mismatched=None) -> np.ndarray:
    """``exp(-d^2 / width^2)``.

    ``d^2`` sums squared standardized differences over numeric features plus
    one per mismatched categorical feature. ``z`` may be one vector or a
    matrix of rows. Without ``categorical`` every feature counts as numeric.
    """
    if width <= 0:
        raise ValueError("kernel width must be positive")
    instance = np.asarray(instance, dtype=float)
    z = np.asarray(z, dtype=float)
    diff2 = (z - instance) ** 2
    if categorical is not None and np.any(categorical):
        categorical = np.asarray(categorical, dtype=bool)
        if mismatched is None:
            mismatched = z[..., categorical] != instance[categorical]
        diff2 = diff2.copy()
        diff2[..., categorical] = np.asarray(mismatched, dtype=float)
    d2 = diff2.sum(axis=-1)
    return np.exp(-d2 / (width * width))


def perturb(instance, ctx: ExplainerContext, n_samples: int = 5000, seed: int = 0,
            model=None, kernel_width: float | None = None, instance_id: int = 0) -> PerturbationSet:
    """Draw ``n_samples`` records around ``instance`` (sample 0 is the instance).

    Numeric features are drawn as standard normals in standardized space
    (the scaled training marginal); constant columns stay at 0. Categorical
    features are drawn from the training category frequencies. Model
    probabilities are filled in when ``model`` is given, NaN otherwise.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    instance = np.asarray(instance, dtype=float)
    if instance.shape != (ctx.n_features,):
        raise DimensionMismatch(f"instance must have {ctx.n_features} features")
    rng = instance_rng(seed, instance_id)
    Z = np.empty((n_samples, ctx.n_features))
    for j, s in enumerate(ctx.stats):
        if s.is_categorical:
            codes = rng.choice(len(s.categories), size=n_samples, p=np.asarray(s.frequencies))
            Z[:, j] = ctx.category_scaled(j)[codes]
        elif s.quartiles:
            Z[:, j] = rng.standard_normal(n_samples)
        else:
            Z[:, j] = 0.0
    Z[0] = instance
    interp = _interp(ctx, instance, Z)
    interp[0] = 1
    width = kernel_width or default_kernel_width(ctx.n_features)
    cat = ctx.categorical
    weights = kernel_weight(instance, Z, width, cat, mismatched=(interp[:, cat] == 0))
    # far samples can underflow; keep every weight strictly positive
    weights = np.maximum(weights, np.finfo(float).tiny)
    weights[0] = 1.0
    if model is not None:
        proba = np.asarray(model.predict_proba(Z), dtype=float)
    else:
        proba = np.full((n_samples, 2), np.nan)
    return PerturbationSet(Z, interp, proba, weights)


def _weighted_ridge(X, y, w, ridge):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    sw = w.sum()
    xm = w @ X / sw
    ym = w @ y / sw
    Xc = X - xm
    yc = y - ym
    r = np.sqrt(w)
    A = Xc * r[:, None]
    b = yc * r
    if ridge > 0:
        A = np.vstack([A, np.sqrt(ridge) * np.eye(X.shape[1])])
        b = np.concatenate([b, np.zeros(X.shape[1])])
    coef = np.linalg.lstsq(A, b, rcond=None)[0]
    return coef, float(ym - xm @ coef)


def select_features(samples: PerturbationSet, m: int, ridge: float = DEFAULT_RIDGE) -> list[int]:
    """Indices of the ``m`` largest |coefficients| of a ridge fit on all features."""
    d = samples.interp.shape[1]
    if m > d:
        raise ValueError(f"m={m} exceeds the feature count {d}")
    coef, _ = _weighted_ridge(samples.interp, samples.target, samples.weights, ridge)
    mag = np.round(np.abs(coef), 12)
    order = np.lexsort((np.arange(d), -mag))
    return [int(i) for i in order[:m]]


def fit_surrogate(samples: PerturbationSet, selected, ridge: float = DEFAULT_RIDGE):
    """Weighted ridge surrogate on the selected interpretable columns.

    Returns ``(coefficients, intercept, fidelity_r2)``; R^2 is kernel
    weighted.
    """
    selected = list(selected)
    pos = samples.weights > 0
    if pos.sum() < len(selected) + 1:
        raise ValueError("too few positively weighted samples for the surrogate")
    X = samples.interp[pos][:, selected].astype(float)
    y = samples.target[pos]
    w = samples.weights[pos]
    if selected and np.all(np.ptp(X, axis=0) == 0):
        raise DegenerateDesign("all selected interpretable columns are constant")
    coef, intercept = _weighted_ridge(X, y, w, ridge)
    pred = X @ coef + intercept
    ym = w @ y / w.sum()
    ss_res = float(w @ (y - pred) ** 2)
    ss_tot = float(w @ (y - ym) ** 2)
    if ss_tot == 0:
        r2 = 1.0 if ss_res == 0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return coef, intercept, r2


@dataclass(frozen=True)
class ExplanationEntry:
    feature_name: str
    condition: str
    weight: float
    toward: str
    value: float


@dataclass(frozen=True)
class LocalExplanation:
    instance_id: int
    predicted: tuple[float, float]
    entries: tuple[ExplanationEntry, ...]
    intercept: float
    fidelity_r2: float
    class_scores: tuple[float, float]
    n_samples: int
    kernel_width: float
    seed: int
    ridge: float = DEFAULT_RIDGE
    model: str = field(default="")

    @property
    def predicted_class(self) -> str:
        return ATTACK if self.predicted[1] > self.predicted[0] else NORMAL

    def weights(self) -> dict[str, float]:
        return {e.feature_name: e.weight for e in self.entries}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["predicted"] = {"normal": self.predicted[0], "attack": self.predicted[1]}
        d["class_scores"] = {"normal": self.class_scores[0], "attack": self.class_scores[1]}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "LocalExplanation":
        return cls(
            d["instance_id"], (d["predicted"]["normal"], d["predicted"]["attack"]),
            tuple(ExplanationEntry(**e) for e in d["entries"]), d["intercept"], d["fidelity_r2"],
            (d["class_scores"]["normal"], d["class_scores"]["attack"]), d["n_samples"],
            d["kernel_width"], d["seed"], d.get("ridge", DEFAULT_RIDGE), d.get("model", ""),
        )

    def render_text(self, bar_width: int = 20) -> str:
        """Two-block text layout: class probabilities left, weighted conditions right."""
        left = [
            "Prediction probabilities",
            f"  NORMAL     {self.predicted[0]:.4f}",
            f"  MALICIOUS  {self.predicted[1]:.4f}",
            "",
            "Grouped weights",
            f"  Normal  {self.class_scores[0]:.4f}",
            f"  Attack  {self.class_scores[1]:.4f}",
            f"  fidelity R^2 {self.fidelity_r2:.4f}",
        ]
        scale = max((abs(e.weight) for e in self.entries), default=0.0) or 1.0
        right = [f"{'NORMAL':>{bar_width}} | {'ATTACK':<{bar_width}}"]
        for e in self.entries:
            n = int(round(bar_width * abs(e.weight) / scale))
            if e.toward == ATTACK:
                bar = f"{'':>{bar_width}} | {'#' * n:<{bar_width}}"
            else:
                bar = f"{'#' * n:>{bar_width}} | {'':<{bar_width}}"
            right.append(f"{bar}  {e.condition}  {e.weight:+.4f}  (value {e.value:.4f})")
        width = max(len(s) for s in left) + 4
        rows = max(len(left), len(right))
        left += [""] * (rows - len(left))
        right += [""] * (rows - len(right))
        head = f"instance {self.instance_id}" + (f" [{self.model}]" if self.model else "")
        return "\n".join([head] + [lft.ljust(width) + rgt for lft, rgt in zip(left, right)]).rstrip() + "\n"


def condition_string(ctx: ExplainerContext, j: int, value: float) -> str:
    s = ctx.stats[j]
    name = s.name
    if s.is_categorical:
        code = int(ctx.code_of(j, value))
        label = s.categories[code] if 0 <= code < len(s.categories) else f"{value:.2f}"
        return f"{name} = {label}"
    edges = list(s.quartiles)
    if not edges:
        return f"{name} = {value:.2f}"
    b = int(bin_index(value, edges))
    if b == 0:
        return f"{name} <= {edges[0]:.2f}"
    if b == len(edges):
        return f"{name} > {edges[-1]:.2f}"
    return f"{edges[b - 1]:.2f} < {name} <= {edges[b]:.2f}"


def explain_instance(model, instance, ctx: ExplainerContext, m: int = 10, n_samples: int = 5000,
                     seed: int = 0, instance_id: int = 0, kernel_width: float | None = None,
                     ridge: float = DEFAULT_RIDGE) -> LocalExplanation:
    """Explain one prediction of ``model`` at ``instance`` (standardized units)."""
    instance = np.asarray(instance, dtype=float)
    width = float(kernel_width or default_kernel_width(ctx.n_features))
    samples = perturb(instance, ctx, n_samples, seed, model=model, kernel_width=width,
                      instance_id=instance_id)
    selected = select_features(samples, m, ridge)
    coef, intercept, r2 = fit_surrogate(samples, selected, ridge)
    entries = []
    order = sorted(range(len(selected)), key=lambda k: (-abs(coef[k]), selected[k]))
    for j, c in ((selected[k], coef[k]) for k in order):
        c = float(c)
        entries.append(ExplanationEntry(ctx.feature_names[j], condition_string(ctx, j, instance[j]),
                                        c, ATTACK if c > 0 else NORMAL, float(instance[j])))
    normal = float(sum(abs(e.weight) for e in entries if e.toward == NORMAL))
    attack = float(sum(abs(e.weight) for e in entries if e.toward == ATTACK))
    pred = samples.proba[0]
    return LocalExplanation(
        instance_id=int(instance_id), predicted=(float(pred[0]), float(pred[1])), entries=tuple(entries),
        intercept=intercept, fidelity_r2=r2, class_scores=(normal, attack), n_samples=n_samples,
        kernel_width=width, seed=int(seed), ridge=ridge, model=getattr(model, "kind", ""),
    )
