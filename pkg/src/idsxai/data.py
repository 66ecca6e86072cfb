"""Loading, cleaning, encoding, splitting and class balancing of flow tables.

Raw tables keep the schema's column order. Numeric cells are float64 with
NaN as the missing mark; categorical cells are strings with ``None`` as the
missing mark. Every operation returns a new object.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    AllMissingColumn,
    BadK,
    DuplicateHeader,
    EmptyFile,
    MissingColumn,
    SchemaMismatch,
    SingletonMinority,
    TooFewRows,
    UnseenCategory,
)
from .schema import CATEGORICAL, NUMERIC, FeatureSchema, normalize_header

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "nan", "na", "n/a", "null", "none"})
NORMAL, ATTACK = 0, 1


# ---------------------------------------------------------------------------
# Raw tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawTable:
    schema: FeatureSchema
    frame: pd.DataFrame
    provenance: tuple[str, ...] = ()

    def __len__(self):
        return len(self.frame)

    def missing_mask(self) -> np.ndarray:
        return self.frame.isna().to_numpy()

    def n_missing(self) -> int:
        return int(self.missing_mask().sum())


def _empty_frame(schema: FeatureSchema) -> pd.DataFrame:
    cols = {}
    for spec in schema.features:
        cols[spec.name] = pd.Series([], dtype=object if spec.is_categorical else "float64")
    cols[schema.label_column] = pd.Series([], dtype="float64")
    return pd.DataFrame(cols)


def _parse_categorical(values: pd.Series) -> pd.Series:
    out = values.str.strip()
    miss = out.str.lower().isin(MISSING_TOKENS)
    out = out.astype(object)
    out[miss] = None
    return out


def _parse_numeric(values: pd.Series) -> pd.Series:
    out = pd.to_numeric(values.str.strip(), errors="coerce").astype("float64")
    out[~np.isfinite(out.to_numpy())] = np.nan
    return out


def load_csv(path: str | Path, schema: FeatureSchema) -> RawTable:
    """Read a comma-separated flow table and match its header to ``schema``.

    Header names are compared after :func:`normalize_header`; extra columns
    are ignored. Numeric cells that do not parse become missing.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    text = path.read_text(encoding="utf-8-sig")
    first = next(csv.reader(io.StringIO(text)), None)
    if not first or all(not h.strip() for h in first):
        raise EmptyFile(f"{path} is empty or has no header row")

    keys = [normalize_header(h) for h in first]
    seen = {}
    for pos, key in enumerate(keys):
        if key in seen:
            raise DuplicateHeader(f"{path}: headers {first[seen[key]]!r} and {first[pos]!r} collide")
        seen[key] = pos

    positions = {}
    for name in schema.columns:
        key = normalize_header(name)
        if key not in seen:
            raise MissingColumn(name, str(path))
        positions[name] = seen[key]

    try:
        body = pd.read_csv(
            io.StringIO(text), header=None, skiprows=1, dtype=str,
            keep_default_na=False, na_filter=False, usecols=sorted(positions.values()),
        )
    except pd.errors.EmptyDataError:
        body = pd.DataFrame()
    if body.empty:
        frame = _empty_frame(schema)
    else:
        cols = {}
        for spec in schema.features:
            raw = body[positions[spec.name]]
            cols[spec.name] = _parse_categorical(raw) if spec.is_categorical else _parse_numeric(raw)
        cols[schema.label_column] = _parse_numeric(body[positions[schema.label_column]])
        frame = pd.DataFrame(cols)
    return RawTable(schema, frame, (str(path),))


def merge_parts(tables: list[RawTable]) -> RawTable:
    """Concatenate part tables in the given order."""
    if not tables:
        raise ValueError("no tables to merge")
    schema = tables[0].schema
    for t in tables[1:]:
        if t.schema != schema:
            raise SchemaMismatch("all parts must share one schema")
    if len(tables) == 1:
        return tables[0]
    frame = pd.concat([t.frame for t in tables], ignore_index=True)
    prov = tuple(p for t in tables for p in t.provenance)
    return RawTable(schema, frame, prov)


def drop_high_nan_rows(table: RawTable, threshold: float = 0.30) -> RawTable:
    """Remove rows whose fraction of missing cells exceeds ``threshold``."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    frac = table.missing_mask().mean(axis=1) if len(table) else np.zeros(0)
    keep = frac <= threshold
    if keep.all():
        return table
    return replace(table, frame=table.frame.loc[keep].reset_index(drop=True))


def lower_median(values: np.ndarray) -> float:
    s = np.sort(values)
    return float(s[(len(s) - 1) // 2])


def _mode(values: pd.Series, order: tuple[str, ...]):
    counts = values.value_counts(sort=False)
    best = counts.max()
    tied = set(counts.index[counts == best])
    for cat in order:
        if cat in tied:
            return cat
    # categories outside the schema vocabulary: first appearance wins
    for v in values:
        if v in tied:
            return v


def impute_median(table: RawTable, reference: RawTable | None = None) -> RawTable:
    """Fill missing numeric cells with the column's lower median and missing
    categorical cells with the most frequent category.

    Statistics are taken over non-missing cells before any replacement, from
    ``reference`` when given (e.g. the training part for a test file). The
    label column is left as is.
    """
    frame = table.frame
    if not frame.isna().to_numpy().any():
        return table
    source = (reference if reference is not None else table).frame
    frame = frame.copy()
    for spec in table.schema.features:
        col = frame[spec.name]
        miss = col.isna()
        if not miss.any():
            continue
        present = source[spec.name].dropna()
        if present.empty:
            raise AllMissingColumn(spec.name)
        if spec.is_categorical:
            fill = _mode(present, spec.categories)
        else:
            fill = lower_median(present.to_numpy(dtype=float))
        frame.loc[miss, spec.name] = fill
    return replace(table, frame=frame)


# ---------------------------------------------------------------------------
# Encoding and scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureStats:
    """Training marginal of one model feature, taken before scaling.

    ``quartiles`` are in standardized units; ``categories``/``frequencies``
    are filled for categorical features only.
    """

    name: str
    kind: str
    mean: float
    std: float
    quartiles: tuple[float, ...] = ()
    categories: tuple[str, ...] = ()
    frequencies: tuple[float, ...] = ()

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def to_dict(self) -> dict:
        return {
            "name": self.name, "kind": self.kind, "mean": self.mean, "std": self.std,
            "quartiles": list(self.quartiles), "categories": list(self.categories),
            "frequencies": list(self.frequencies),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(d["name"], d["kind"], d["mean"], d["std"], tuple(d["quartiles"]),
                   tuple(d["categories"]), tuple(d["frequencies"]))


@dataclass(frozen=True)
class Preprocessor:
    """Frozen label encoders, standard scaler and feature marginals."""

    feature_names: tuple[str, ...]
    kinds: tuple[str, ...]
    encoders: dict
    means: np.ndarray
    stds: np.ndarray
    feature_stats: tuple[FeatureStats, ...]

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([k == CATEGORICAL for k in self.kinds])

    @property
    def scaler(self) -> dict:
        return {n: (float(m), float(s)) for n, m, s in zip(self.feature_names, self.means, self.stds)}

    def scale(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.means) / self.stds

    def unscale(self, z: np.ndarray) -> np.ndarray:
        return z * self.stds + self.means

    def encode(self, frame: pd.DataFrame, unseen: str = "error") -> np.ndarray:
        """Map a cleaned frame onto the unscaled model matrix.

        ``unseen`` controls categories absent from the fitted encoders:
        ``"error"`` raises :class:`UnseenCategory`, ``"mode"`` substitutes
        the most frequent training category.
        """
        n = len(frame)
        raw = np.empty((n, len(self.feature_names)))
        for j, (name, kind) in enumerate(zip(self.feature_names, self.kinds)):
            col = frame[name]
            if kind == NUMERIC:
                raw[:, j] = col.to_numpy(dtype=float)
                continue
            enc = self.encoders[name]
            codes = col.map(enc)
            bad = codes.isna()
            if bad.any():
                if unseen == "error":
                    raise UnseenCategory(name, col[bad].iloc[0])
                stats = self.feature_stats[j]
                fallback = enc[stats.categories[int(np.argmax(stats.frequencies))]]
                log.warning("%d unseen %s categories mapped to training mode", int(bad.sum()), name)
                codes = codes.fillna(fallback)
            raw[:, j] = codes.to_numpy(dtype=float)
        return raw

    def decode(self, raw: np.ndarray) -> pd.DataFrame:
        """Inverse of :meth:`encode` for integer codes."""
        cols = {}
        for j, (name, kind) in enumerate(zip(self.feature_names, self.kinds)):
            if kind == NUMERIC:
                cols[name] = raw[:, j]
            else:
                inv = np.array(list(self.encoders[name]), dtype=object)
                cols[name] = inv[np.rint(raw[:, j]).astype(int)]
        return pd.DataFrame(cols)

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "kinds": list(self.kinds),
            "encoders": self.encoders,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "feature_stats": [s.to_dict() for s in self.feature_stats],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(
            tuple(d["feature_names"]), tuple(d["kinds"]),
            {k: dict(v) for k, v in d["encoders"].items()},
            np.asarray(d["means"], dtype=float), np.asarray(d["stds"], dtype=float),
            tuple(FeatureStats.from_dict(s) for s in d["feature_stats"]),
        )


def fit_preprocessor(frame: pd.DataFrame, schema: FeatureSchema) -> Preprocessor:
    specs = schema.model_features
    names = tuple(s.name for s in specs)
    kinds = tuple(s.kind for s in specs)
    encoders = {}
    for s in specs:
        if s.is_categorical:
            # first appearance order
            encoders[s.name] = {str(v): i for i, v in enumerate(pd.unique(frame[s.name]))}
    partial = Preprocessor(names, kinds, encoders, np.zeros(len(names)), np.ones(len(names)), ())
    raw = partial.encode(frame)
    n = len(raw)
    if n == 0:
        raise TooFewRows("cannot fit encoders on an empty table")
    means = raw.mean(axis=0)
    stds = raw.std(axis=0)
    constant = np.ptp(raw, axis=0) == 0
    stds[constant] = 1.0
    means[constant] = raw[0, constant]
    scaled = (raw - means) / stds

    stats = []
    for j, s in enumerate(specs):
        if s.is_categorical:
            cats = tuple(encoders[s.name])
            counts = np.bincount(raw[:, j].astype(int), minlength=len(cats))
            stats.append(FeatureStats(s.name, s.kind, float(means[j]), float(stds[j]),
                                      categories=cats, frequencies=tuple((counts / n).tolist())))
        else:
            stats.append(FeatureStats(s.name, s.kind, float(means[j]), float(stds[j]),
                                      quartiles=tuple(discretize(scaled[:, j]).tolist())))
    return Preprocessor(names, kinds, encoders, means, stds, tuple(stats))


def discretize(column: np.ndarray) -> np.ndarray:
    """Quartile bin edges (linear interpolation), duplicates collapsed.

    A constant column yields no edges, i.e. a single bin.
    """
    column = np.asarray(column, dtype=float)
    if column.size == 0 or np.ptp(column) == 0:
        return np.empty(0)
    edges = np.percentile(column, [25, 50, 75])
    return np.unique(edges)


def bin_index(values, edges) -> np.ndarray:
    """Bin of each value; a value equal to an edge goes to the lower bin."""
    return np.searchsorted(np.asarray(edges, dtype=float), values, side="left")


@dataclass(frozen=True)
class EncodedDataset:
    matrix: np.ndarray
    labels: np.ndarray
    preprocessor: Preprocessor
    raw: np.ndarray
    attack_cat: np.ndarray | None = None
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", np.arange(len(self.labels)))
        if len(self.labels) != self.matrix.shape[0]:
            raise ValueError("labels length must equal row count")

    def __len__(self):
        return len(self.labels)

    @property
    def feature_names(self) -> list[str]:
        return list(self.preprocessor.feature_names)

    @property
    def encoders(self) -> dict:
        return self.preprocessor.encoders

    @property
    def scaler(self) -> dict:
        return self.preprocessor.scaler

    @property
    def feature_stats(self) -> tuple[FeatureStats, ...]:
        return self.preprocessor.feature_stats

    def subset(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx)
        return EncodedDataset(
            self.matrix[idx], self.labels[idx], self.preprocessor, self.raw[idx],
            None if self.attack_cat is None else self.attack_cat[idx], self.row_ids[idx],
        )

    def class_counts(self) -> tuple[int, int]:
        c = np.bincount(self.labels, minlength=2)
        return int(c[NORMAL]), int(c[ATTACK])


def _labels_from(table: RawTable) -> tuple[pd.DataFrame, np.ndarray]:
    frame = table.frame
    lab = frame[table.schema.label_column]
    ok = lab.notna()
    if not ok.all():
        log.warning("dropping %d rows without a label", int((~ok).sum()))
        frame = frame.loc[ok].reset_index(drop=True)
        lab = lab[ok]
    labels = lab.to_numpy(dtype=float)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("label column must hold 0 (Normal) or 1 (Attack)")
    return frame, labels.astype(np.int64)


def _assemble(frame, labels, pre, schema, unseen="error") -> EncodedDataset:
    raw = pre.encode(frame, unseen=unseen)
    cat_col = schema.attack_category_column
    attack_cat = frame[cat_col].to_numpy(dtype=object) if cat_col else None
    return EncodedDataset(pre.scale(raw), labels, pre, raw, attack_cat)


def encode_and_scale(table: RawTable, schema: FeatureSchema | None = None) -> EncodedDataset:
    """Fit label encoders and the standard scaler on ``table`` and apply them."""
    schema = schema or table.schema
    if table.frame[[f.name for f in schema.features]].isna().to_numpy().any():
        raise ValueError("encode_and_scale requires a table without missing feature cells")
    frame, labels = _labels_from(table)
    pre = fit_preprocessor(frame, schema)
    return _assemble(frame, labels, pre, schema)


def apply_preprocessor(table: RawTable, pre: Preprocessor, unseen: str = "error") -> EncodedDataset:
    """Encode and scale new data with frozen encoders and scaler."""
    frame, labels = _labels_from(table)
    return _assemble(frame, labels, pre, table.schema, unseen=unseen)


# ---------------------------------------------------------------------------
# Splitting and balancing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPair:
    train: EncodedDataset
    test: EncodedDataset
    seed: int


def _schema_for(pre: Preprocessor) -> FeatureSchema:
    from .schema import FeatureSpec

    feats = tuple(FeatureSpec(n, k) for n, k in zip(pre.feature_names, pre.kinds))
    return FeatureSchema(feats, label_column="__label__")


def split_train_test(data: EncodedDataset, ratio: float = 0.8, seed: int = 0) -> SplitPair:
    """Random train/test partition with encoders and scaler refit on train."""
    n = len(data)
    if n < 2:
        raise TooFewRows("need at least 2 rows to split")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])

    frame = data.preprocessor.decode(data.raw)
    schema = _schema_for(data.preprocessor)
    tr_frame = frame.iloc[train_idx].reset_index(drop=True)
    pre = fit_preprocessor(tr_frame, schema)

    def build(idx, fr, unseen):
        raw = pre.encode(fr, unseen=unseen)
        cats = None if data.attack_cat is None else data.attack_cat[idx]
        return EncodedDataset(pre.scale(raw), data.labels[idx], pre, raw, cats, data.row_ids[idx])

    train = build(train_idx, tr_frame, "error")
    test = build(test_idx, frame.iloc[test_idx].reset_index(drop=True), "mode")
    return SplitPair(train, test, seed)


def _append_rows(ds: EncodedDataset, matrix, label, cats) -> EncodedDataset:
    n_new = len(matrix)
    return EncodedDataset(
        np.vstack([ds.matrix, matrix]),
        np.concatenate([ds.labels, np.full(n_new, label, dtype=ds.labels.dtype)]),
        ds.preprocessor,
        np.vstack([ds.raw, ds.preprocessor.unscale(matrix)]),
        None if ds.attack_cat is None else np.concatenate([ds.attack_cat, cats]),
        np.concatenate([ds.row_ids, np.full(n_new, -1)]),
    )


def nearest_neighbors(points: np.ndarray, query_idx: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Indices of the ``k`` nearest other points (Euclidean) for each query row."""
    sq = np.einsum("ij,ij->i", points, points)
    out = np.empty((len(query_idx), k), dtype=np.int64)
    for start in range(0, len(query_idx), chunk):
        q = query_idx[start:start + chunk]
        d2 = sq[q][:, None] + sq[None, :] - 2.0 * points[q] @ points.T
        d2[np.arange(len(q)), q] = np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        order = np.argsort(np.take_along_axis(d2, part, axis=1), axis=1, kind="stable")
        out[start:start + chunk] = np.take_along_axis(part, order, axis=1)
    return out


def smote_balance(train: EncodedDataset, k: int = 5, ratio: float = 1.0, seed: int = 0) -> EncodedDataset:
    """Oversample the minority class with SMOTE interpolation.

    Synthetic rows ``x + u * (x_nn - x)`` are appended until the minority
    count reaches ``ratio`` times the majority count.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n0, n1 = train.class_counts()
    minority = NORMAL if n0 < n1 else ATTACK
    n_min, n_maj = min(n0, n1), max(n0, n1)
    n_new = int(round(ratio * n_maj)) - n_min
    if n_new <= 0:
        return train
    if n_min < 2:
        raise SingletonMinority("SMOTE needs at least 2 minority rows")
    k_eff = min(k, n_min - 1)

    rows = np.flatnonzero(train.labels == minority)
    pts = train.matrix[rows]
    rng = np.random.default_rng(seed)
    base = rng.integers(n_min, size=n_new)
    pick = rng.integers(k_eff, size=n_new)
    u = rng.random(n_new)

    uniq, inv = np.unique(base, return_inverse=True)
    nn = nearest_neighbors(pts, uniq, k_eff)
    partner = nn[inv, pick]
    synth = pts[base] + u[:, None] * (pts[partner] - pts[base])
    cats = None if train.attack_cat is None else train.attack_cat[rows[base]]
    return _append_rows(train, synth, minority, cats)


def random_undersample(train: EncodedDataset, seed: int = 0, ratio: float = 1.0) -> EncodedDataset:
    """Subsample the majority class without replacement.

    The majority keeps ``round(n_minority / ratio)`` rows; ``ratio=1`` gives
    equal class counts. Row order is preserved.
    """
    n0, n1 = train.class_counts()
    if n0 == 0 or n1 == 0:
        raise ValueError("both classes must be present")
    majority = ATTACK if n1 > n0 else NORMAL
    n_min, n_maj = min(n0, n1), max(n0, n1)
    target = min(n_maj, int(round(n_min / ratio)))
    if n0 == n1 or target >= n_maj:
        return train
    maj_rows = np.flatnonzero(train.labels == majority)
    keep_maj = np.random.default_rng(seed).choice(maj_rows, size=target, replace=False)
    keep = np.sort(np.concatenate([np.flatnonzero(train.labels != majority), keep_maj]))
    return train.subset(keep)


def kfold_indices(n: int, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold partition; fold sizes differ by at most one."""
    if k < 2 or n < k:
        raise BadK(f"need k >= 2 and n >= k (got n={n}, k={k})")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(val)))
    return out


# ---------------------------------------------------------------------------
# Reports on prepared data
# ---------------------------------------------------------------------------

def class_distribution(train: EncodedDataset, test: EncodedDataset) -> pd.DataFrame:
    """Attack/Normal counts and percentage shares for both sides of a split."""
    rows = []
    tr, te = train.class_counts(), test.class_counts()
    for name, cls in (("Attack Packets", ATTACK), ("Normal Packets", NORMAL)):
        rows.append((name, tr[cls], 100.0 * tr[cls] / max(len(train), 1),
                     te[cls], 100.0 * te[cls] / max(len(test), 1)))
    rows.append(("Overall Samples", len(train), 100.0, len(test), 100.0))
    return pd.DataFrame(rows, columns=["category", "train_size", "train_pct", "test_size", "test_pct"])


def correlation_matrix(data: EncodedDataset) -> pd.DataFrame:
    """Pearson correlations between model features (constant columns give 0)."""
    z = data.matrix
    n = max(len(z), 1)
    zc = z - z.mean(axis=0)
    sd = np.sqrt((zc ** 2).sum(axis=0) / n)
    sd[sd == 0] = np.inf
    corr = (zc.T @ zc) / n / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)
    return pd.DataFrame(corr, index=data.feature_names, columns=data.feature_names)


def save_dataset(ds: EncodedDataset, path: str | Path) -> None:
    np.savez_compressed(
        path, matrix=ds.matrix, labels=ds.labels, raw=ds.raw, row_ids=ds.row_ids,
        attack_cat=np.array([] if ds.attack_cat is None else ds.attack_cat, dtype=str),
    )


def load_dataset(path: str | Path, pre: Preprocessor) -> EncodedDataset:
    with np.load(path, allow_pickle=False) as z:
        cats = z["attack_cat"]
        labels = z["labels"]
        if z["matrix"].shape[1] != len(pre.feature_names):
            from .errors import ArtifactMismatch
            raise ArtifactMismatch(f"{path}: feature count does not match the preprocessor")
        return EncodedDataset(
            z["matrix"], labels, pre, z["raw"],
            cats.astype(object) if len(cats) == len(labels) and len(cats) else None,
            z["row_ids"],
        )


__all__ = [
    "RawTable", "FeatureStats", "Preprocessor", "EncodedDataset", "SplitPair",
    "load_csv", "merge_parts", "drop_high_nan_rows", "impute_median", "lower_median",
    "encode_and_scale", "apply_preprocessor", "fit_preprocessor", "discretize", "bin_index",
    "split_train_test", "smote_balance", "random_undersample", "kfold_indices",
    "nearest_neighbors", "class_distribution", "correlation_matrix", "save_dataset",
    "load_dataset", "NORMAL", "ATTACK",
]
