"""Column schemas for flow tables.

A schema lists every attribute column in file order plus the binary label
column. One of the categorical attributes may be flagged as the attack
category; it is carried through loading but never used as a model input.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

NUMERIC = "numeric"
CATEGORICAL = "categorical"

_NORMALIZE = re.compile(r"[\s_.]+")


def normalize_header(name: str) -> str:
    """Lowercase and drop spaces, underscores and dots ("ATTACK CAT" -> "attackcat")."""
    return _NORMALIZE.sub("", name.strip().lower())


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = NUMERIC
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise ValueError("feature name must be non-empty")
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.categories and self.kind != CATEGORICAL:
            raise ValueError(f"numeric feature {self.name!r} cannot list categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]
    label_column: str
    attack_category_column: str | None = None
    name: str = "custom"
    _by_name: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate feature names: {dup}")
        keys = [normalize_header(n) for n in names]
        if len(set(keys)) != len(keys):
            raise ValueError("feature names collide after header normalization")
        if not self.label_column or normalize_header(self.label_column) in keys:
            raise ValueError("label column must be non-empty and distinct from feature columns")
        if self.attack_category_column is not None and self.attack_category_column not in names:
            raise ValueError(f"attack category column {self.attack_category_column!r} is not a feature")
        object.__setattr__(self, "_by_name", {f.name: f for f in self.features})

    @property
    def columns(self) -> list[str]:
        """All attribute columns in order, label last."""
        return [f.name for f in self.features] + [self.label_column]

    @property
    def model_features(self) -> list[FeatureSpec]:
        return [f for f in self.features if f.name != self.attack_category_column]

    @property
    def model_feature_names(self) -> list[str]:
        return [f.name for f in self.model_features]

    def __getitem__(self, name: str) -> FeatureSpec:
        return self._by_name[name]

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            d = {"name": f.name, "kind": f.kind}
            if f.categories:
                d["categories"] = list(f.categories)
            feats.append(d)
        return {
            "name": self.name,
            "label_column": self.label_column,
            "attack_category_column": self.attack_category_column,
            "features": feats,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSchema":
        try:
            feats = tuple(
                FeatureSpec(f["name"], f.get("kind", NUMERIC), tuple(f.get("categories", ())))
                for f in doc["features"]
            )
            return cls(
                features=feats,
                label_column=doc["label_column"],
                attack_category_column=doc.get("attack_category_column"),
                name=doc.get("name", "custom"),
            )
        except KeyError as exc:
            raise ValueError(f"schema document missing key {exc}") from None


def load_schema(path: str | Path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


def unsw_nb15() -> FeatureSchema:
    """The 45-attribute UNSW-NB15 layout (43 model inputs, attack_cat, label)."""
    text = resources.files("idsxai").joinpath("data/unsw_nb15.json").read_text(encoding="utf-8")
    return FeatureSchema.from_dict(json.loads(text))


def resolve_schema(selector: str) -> FeatureSchema:
    """Accept ``builtin:unsw-nb15`` or a path to a JSON schema file."""
    if selector in ("builtin:unsw-nb15", "unsw-nb15"):
        return unsw_nb15()
    return load_schema(selector)
