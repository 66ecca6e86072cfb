"""Global explanations: permutation importance, weight tables and significant features."""

from __future__ import annotations

import csv
import io
import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyExplanations, FeatureSetMismatch
from .localexplain import NORMAL, LocalExplanation
from .models import predict

PERMUTATION, IMPURITY, LOCAL_AGGREGATE = "permutation", "impurity", "local-aggregate"


@dataclass(frozen=True)
class ImportanceEntry:
    feature_name: str
    mean_drop: float
    stddev_drop: float
    impurity_weight: float | None = None


def _ordered(entries) -> tuple[ImportanceEntry, ...]:
    return tuple(sorted(entries, key=lambda e: (-e.mean_drop, e.feature_name)))


@dataclass(frozen=True)
class GlobalImportance:
    entries: tuple[ImportanceEntry, ...]
    n_iter: int
    baseline_score: float
    seed: int
    feature_names: tuple[str, ...] = field(default=())
    self_scored: bool = False

    def __post_init__(self):
        object.__setattr__(self, "entries", _ordered(self.entries))
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(sorted(e.feature_name for e in self.entries)))

    def ranking(self) -> list[str]:
        return [e.feature_name for e in self.entries]

    def top(self, n: int = 10) -> list[str]:
        return self.ranking()[:n]

    def __getitem__(self, name: str) -> ImportanceEntry:
        for e in self.entries:
            if e.feature_name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "n_iter": self.n_iter, "baseline_score": self.baseline_score, "seed": self.seed,
            "self_scored": self.self_scored, "feature_names": list(self.feature_names),
            "entries": [e.__dict__.copy() for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalImportance":
        return cls(tuple(ImportanceEntry(**e) for e in d["entries"]), d["n_iter"], d["baseline_score"],
                   d["seed"], tuple(d.get("feature_names", ())), d.get("self_scored", False))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "mean", "stddev", "impurity_weight"])
        for e in self.entries:
            w.writerow([e.feature_name, repr(e.mean_drop), repr(e.stddev_drop),
                        "" if e.impurity_weight is None else repr(e.impurity_weight)])
        return buf.getvalue()


def _accuracy(model, X, y) -> float:
    return float(np.mean(predict(model, X) == y))


def permutation_importance(model, X, y, n_iter: int = 5, seed: int = 0, feature_names=None,
                           self_score: bool = False) -> GlobalImportance:
    """Mean and stddev of the accuracy drop when each column is shuffled.

    Scores against the true labels ``y``. With ``self_score`` the model's own
    predictions on the intact data serve as labels instead, so the baseline
    is 1.0 by construction. Each (feature, iteration) pair draws its
    permutation from its own seeded stream; ``X`` is never modified.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("X must be a non-empty matrix")
    if len(y) != len(X):
        raise ValueError("X and y differ in length")
    if n_iter < 1:
        raise ValueError("n_iter must be positive")
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length does not match X")
    target = predict(model, X) if self_score else y
    baseline = _accuracy(model, X, target)
    work = X.copy()
    entries = []
    for j, name in enumerate(names):
        drops = np.empty(n_iter)
        for i in range(n_iter):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), j, i]))
            work[:, j] = X[rng.permutation(len(X)), j]
            drops[i] = baseline - _accuracy(model, work, target)
        work[:, j] = X[:, j]
        entries.append(ImportanceEntry(name, float(drops.mean()), float(drops.std())))
    return GlobalImportance(tuple(entries), n_iter, baseline, int(seed), tuple(names), self_score)


def weight_table(gi: GlobalImportance, top: int = 10) -> str:
    """Descending ``feature  mean ± stddev`` rows; "+" marks a positive mean drop."""
    rows = gi.entries[:top]
    width = max([len("feature")] + [len(e.feature_name) for e in rows])
    lines = [f"  {'feature':<{width}}  weight"]
    for e in rows:
        flag = "+" if e.mean_drop > 0 else " "
        lines.append(f"{flag} {e.feature_name:<{width}}  {e.mean_drop:.4f} ± {e.stddev_drop:.4f}")
    return "\n".join(lines) + "\n"


def combine_global(gi: GlobalImportance, impurity) -> GlobalImportance:
    """Annotate entries with impurity weights.

    ``impurity`` is a name-to-weight mapping or a vector aligned with
    ``gi.feature_names``. Order stays by mean drop.
    """
    if isinstance(impurity, Mapping):
        weights = {str(k): float(v) for k, v in impurity.items()}
    else:
        vec = np.asarray(impurity, dtype=float)
        if vec.shape != (len(gi.feature_names),):
            raise FeatureSetMismatch(f"expected {len(gi.feature_names)} impurity weights, got {vec.shape}")
        weights = dict(zip(gi.feature_names, vec.tolist()))
    if set(weights) != {e.feature_name for e in gi.entries}:
        extra = sorted(set(weights) ^ {e.feature_name for e in gi.entries})
        raise FeatureSetMismatch(f"feature sets differ: {extra}")
    return replace(gi, entries=tuple(replace(e, impurity_weight=weights[e.feature_name]) for e in gi.entries))


@dataclass(frozen=True)
class SignificantFeatureSet:
    features: tuple[str, ...]
    source: str

    def __post_init__(self):
        if len(set(self.features)) != len(self.features):
            raise ValueError("significant features must be unique")
        if self.source not in (PERMUTATION, IMPURITY, LOCAL_AGGREGATE):
            raise ValueError(f"unknown source {self.source!r}")

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def to_dict(self) -> dict:
        return {"features": list(self.features), "source": self.source}


def _top_by_score(scores: Mapping[str, float], n: int) -> tuple[str, ...]:
    return tuple(sorted(scores, key=lambda k: (-scores[k], k))[:n])


def extract_significant_features(explanations: Sequence[LocalExplanation], N: int = 10,
                                 class_filter: str | None = NORMAL) -> SignificantFeatureSet:
    """Top-``N`` features by summed |weight| over local explanations.

    Only explanations whose predicted class equals ``class_filter`` count;
    pass ``None`` to use all of them.
    """
    if not explanations:
        raise EmptyExplanations("no local explanations given")
    chosen = [e for e in explanations if class_filter is None or e.predicted_class == class_filter]
    if not chosen:
        raise EmptyExplanations(f"no explanations predicted as {class_filter}")
    agg: dict[str, float] = {}
    for exp in chosen:
        for entry in exp.entries:
            agg[entry.feature_name] = agg.get(entry.feature_name, 0.0) + abs(entry.weight)
    return SignificantFeatureSet(_top_by_score(agg, N), LOCAL_AGGREGATE)


def significant_from_global(gi: GlobalImportance, N: int = 10, source: str = PERMUTATION) -> SignificantFeatureSet:
    """Top-``N`` by mean drop, or by impurity weight when ``source`` is impurity."""
    if source == IMPURITY:
        if any(e.impurity_weight is None for e in gi.entries):
            raise ValueError("impurity weights missing; call combine_global first")
        return SignificantFeatureSet(_top_by_score({e.feature_name: e.impurity_weight for e in gi.entries}, N), IMPURITY)
    return SignificantFeatureSet(tuple(gi.top(N)), PERMUTATION)


def ranking_overlap(a: Sequence[str], b: Sequence[str]) -> int:
    return len(set(a) & set(b))
