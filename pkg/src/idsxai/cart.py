"""Binary CART classifier grown greedily on Gini impurity.

Splits test ``x[f] <= threshold`` (left) against ``x[f] > threshold``
(right); thresholds are midpoints between consecutive distinct values.
Among equally good splits the lower feature index wins, then the lower
threshold.

The tree is stored as flat node arrays for vectorized prediction;
:meth:`CartTree.node` gives a nested :class:`Internal`/:class:`Leaf` view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyNode, EmptyTraining

# Scores closer than this (relative) count as ties.
TIE_RTOL = 1e-12


def gini(counts) -> float:
    """Gini impurity ``1 - p0^2 - p1^2`` of a (n_normal, n_attack) pair."""
    n0, n1 = counts
    n = n0 + n1
    if n < 1:
        raise EmptyNode("gini of an empty node")
    p0, p1 = n0 / n, n1 / n
    return 1.0 - p0 * p0 - p1 * p1


def _purity_score(n0l, n1l, n0r, n1r):
    # sum over children of (a^2 + b^2) / n_child; larger means lower weighted Gini
    nl = n0l + n1l
    nr = n0r + n1r
    return (n0l * n0l + n1l * n1l) / nl + (n0r * n0r + n1r * n1r) / nr


def _tol(score) -> float:
    return TIE_RTOL * max(1.0, abs(score))


def _midpoint(a: float, b: float) -> float:
    mid = (a + b) / 2.0
    # adjacent floats: keep b on the right
    return a if mid >= b else mid


def best_split(X: np.ndarray, y: np.ndarray, rows=None):
    """Exhaustive search for the split minimizing weighted child Gini.

    Returns ``(feature_index, threshold, weighted_child_gini)`` or ``None``
    when no candidate lowers the node's impurity.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    rows = np.arange(len(y)) if rows is None else np.asarray(rows)
    n = len(rows)
    if n < 2:
        return None
    yy = y[rows].astype(np.int64)
    tot1 = int(yy.sum())
    tot0 = n - tot1
    parent = (tot0 * tot0 + tot1 * tot1) / n
    best = None  # (score, feature, threshold)
    for f in range(X.shape[1]):
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        c1 = np.cumsum(yy[order])[:-1]
        nl = np.arange(1, n)
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        n1l = c1[valid]
        nlv = nl[valid]
        score = _purity_score(nlv - n1l, n1l, (n - nlv) - (tot1 - n1l), tot1 - n1l)
        top = score.max()
        i = int(np.flatnonzero(score >= top - _tol(top))[0])
        if best is None or top > best[0] + _tol(best[0]):
            pos = np.flatnonzero(valid)[i]
            best = (float(score[i]), f, _midpoint(xs[pos], xs[pos + 1]))
    if best is None or best[0] <= parent + _tol(parent):
        return None
    return best[1], best[2], 1.0 - best[0] / n


@dataclass(frozen=True)
class Leaf:
    class_counts: tuple[int, int]
    gini: float

    @property
    def n_samples(self) -> int:
        return sum(self.class_counts)


@dataclass(frozen=True)
class Internal:
    feature_index: int
    threshold: float
    gini: float
    n_samples: int
    left: "Internal | Leaf"
    right: "Internal | Leaf"


class CartTree:
    """A fitted tree. Node ``0`` is the root; leaves have ``feature == -1``."""

    kind = "cart"

    def __init__(self, feature, threshold, left, right, counts, max_depth, min_samples_split,
                 feature_count, training_row_count, feature_names=None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64).reshape(-1, 2)
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.feature_count = feature_count
        self.training_row_count = training_row_count
        self.feature_names = list(feature_names) if feature_names is not None else None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] < 0

    def node_gini(self) -> np.ndarray:
        n = self.counts.sum(axis=1)
        p = self.counts / n[:, None]
        return 1.0 - (p ** 2).sum(axis=1)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if not self.is_leaf(i):
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def node(self, i: int = 0, _gini=None):
        g = self.node_gini() if _gini is None else _gini
        if self.is_leaf(i):
            return Leaf((int(self.counts[i, 0]), int(self.counts[i, 1])), float(g[i]))
        return Internal(int(self.feature[i]), float(self.threshold[i]), float(g[i]), int(self.counts[i].sum()),
                        self.node(int(self.left[i]), g), self.node(int(self.right[i]), g))

    @property
    def root(self):
        return self.node(0)

    def apply(self, X: np.ndarray, depth: int | None = None) -> np.ndarray:
        """Node index reached by each row: a leaf, or the node at ``depth`` if routing stops there."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise DimensionMismatch(f"expected {self.feature_count} features, got shape {X.shape}")
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        level = 0
        while active.size and (depth is None or level < depth):
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
            level += 1
        return node

    def predict_at_depth(self, X, depth: int) -> np.ndarray:
        """Predictions of this tree cut back to ``depth``.

        Growth is greedy and level by level, so this equals refitting with
        ``max_depth=depth`` on the same data.
        """
        c = self.counts[self.apply(X, depth)]
        return (c[:, 1] > c[:, 0]).astype(np.int64)

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        counts = self.counts[self.apply(X[None, :] if single else X)].astype(float)
        proba = counts / counts.sum(axis=1, keepdims=True)
        return proba[0] if single else proba

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return (proba[..., 1] > proba[..., 0]).astype(np.int64)

    def to_dict(self) -> dict:
        gini_all = self.node_gini()

        def rec(i):
            g = float(gini_all[i])
            if self.is_leaf(i):
                return {"kind": "leaf", "gini": g, "counts": self.counts[i].tolist()}
            return {
                "kind": "internal", "feature_index": int(self.feature[i]),
                "threshold": float(self.threshold[i]), "gini": g,
                "counts": self.counts[i].tolist(),
                "left": rec(int(self.left[i])), "right": rec(int(self.right[i])),
            }

        return {
            "model": "cart", "max_depth": self.max_depth, "min_samples_split": self.min_samples_split,
            "feature_count": self.feature_count, "training_row_count": self.training_row_count,
            "feature_names": self.feature_names, "root": rec(0),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CartTree":
        feature, threshold, left, right, counts = [], [], [], [], []

        def rec(node):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            counts.append(node["counts"])
            if node["kind"] == "internal":
                feature[i] = node["feature_index"]
                threshold[i] = node["threshold"]
                left[i] = rec(node["left"])
                right[i] = rec(node["right"])
            return i

        rec(d["root"])
        return cls(feature, threshold, left, right, counts, d["max_depth"], d["min_samples_split"],
                   d["feature_count"], d["training_row_count"], d.get("feature_names"))

    def render(self, feature_names=None, precision: int = 4) -> str:
        """Indented text of the decision levels, root first."""
        names = feature_names or self.feature_names or [f"x{j}" for j in range(self.feature_count)]
        g = self.node_gini()
        lines = []

        def rec(i, depth):
            pad = "|   " * depth
            c = self.counts[i]
            if self.is_leaf(i):
                cls = "Attack" if c[1] > c[0] else "Normal"
                lines.append(f"{pad}class: {cls} (gini={g[i]:.{precision}f}, samples={c.sum()}, value={c.tolist()})")
                return
            f, t = names[self.feature[i]], self.threshold[i]
            lines.append(f"{pad}{f} <= {t:.{precision}f} (gini={g[i]:.{precision}f}, samples={c.sum()})")
            rec(int(self.left[i]), depth + 1)
            lines.append(f"{pad}{f} >  {t:.{precision}f}")
            rec(int(self.right[i]), depth + 1)

        rec(0, 0)
        return "\n".join(lines)


def fit(X, y, max_depth: int | None = None, min_samples_split: int = 2, feature_names=None) -> CartTree:
    """Grow a tree level by level.

    Each feature is sorted once; at every level the per-node sorted orders
    are refreshed with a stable in-segment partition, so one level costs
    O(n * d).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyTraining("training matrix is empty")
    if len(y) != len(X):
        raise ValueError("X and y lengths differ")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n, d = X.shape
    depth_cap = np.inf if max_depth is None else max_depth

    feature, threshold, left, right, counts = [-1], [0.0], [-1], [-1], [(int(n - y.sum()), int(y.sum()))]

    # frontier: tree node ids whose rows are still being partitioned
    frontier = np.array([0])
    seg_start = np.array([0])
    seg_len = np.array([n])
    row_seg = np.zeros(n, dtype=np.int64)
    orders = np.argsort(X, axis=0, kind="stable").T.copy()  # (d, n_active)
    depth = 0

    while frontier.size:
        c = np.array([counts[i] for i in frontier], dtype=np.int64)
        splittable = (depth < depth_cap) & (seg_len >= min_samples_split) & (c.min(axis=1) > 0)
        if not splittable.any():
            break
        if not splittable.all():
            keep_seg = np.flatnonzero(splittable)
            remap = np.full(len(frontier), -1)
            remap[keep_seg] = np.arange(len(keep_seg))
            keep_rows = splittable[row_seg[orders[0]]]
            orders = orders[:, keep_rows]
            row_seg = np.where(row_seg >= 0, remap[np.maximum(row_seg, 0)], -1)
            frontier, c, seg_len = frontier[keep_seg], c[keep_seg], seg_len[keep_seg]
            seg_start = np.concatenate([[0], np.cumsum(seg_len)[:-1]])

        n_seg = len(frontier)
        tot1 = c[:, 1]
        parent = (c[:, 0] ** 2 + c[:, 1] ** 2) / seg_len
        best_score = np.full(n_seg, -np.inf)
        best_feat = np.full(n_seg, -1)
        best_thr = np.zeros(n_seg)
        m = orders.shape[1]
        pos = np.arange(m)
        seg_of = row_seg[orders[0]]
        last = (pos - seg_start[seg_of]) == seg_len[seg_of] - 1
        nl = pos - seg_start[seg_of] + 1

        for f in range(d):
            o = orders[f]
            xs = X[o, f]
            cum = np.cumsum(y[o])
            before = np.concatenate([[0], cum])[seg_start]
            n1l = cum - before[seg_of]
            valid = ~last
            valid[:-1] &= xs[:-1] < xs[1:]
            if not valid.any():
                continue
            idx = np.flatnonzero(valid)
            s = seg_of[idx]
            a1 = n1l[idx]
            a_n = nl[idx]
            r1 = tot1[s] - a1
            r_n = seg_len[s] - a_n
            score = _purity_score(a_n - a1, a1, r_n - r1, r1)
            # s is non-decreasing: segments occupy contiguous runs
            run_start = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
            top = np.full(n_seg, -np.inf)
            top[s[run_start]] = np.maximum.reduceat(score, run_start)
            near = score >= top[s] - TIE_RTOL * np.maximum(1.0, top[s])
            cand = idx[near]
            cs = s[near]
            first_seg, first_pos = np.unique(cs, return_index=True)
            prev = best_score[first_seg]
            with np.errstate(invalid="ignore"):
                better = np.isneginf(prev) | (top[first_seg] > prev + TIE_RTOL * np.maximum(1.0, np.abs(prev)))
            upd = first_seg[better]
            at = cand[first_pos[better]]
            best_score[upd] = top[upd]
            best_feat[upd] = f
            best_thr[upd] = [_midpoint(xs[i], xs[i + 1]) for i in at]

        gain = best_score > parent + TIE_RTOL * np.maximum(1.0, parent)
        if not gain.any():
            break

        # create children for segments that split
        new_frontier, new_len = [], []
        child_of = np.full((n_seg, 2), -1)
        active_rows = orders[0]
        go_left_row = np.zeros(n, dtype=bool)
        segs = row_seg[active_rows]
        go_left_row[active_rows] = X[active_rows, best_feat[segs].clip(0)] <= best_thr[segs]
        gl = go_left_row[active_rows]
        left_n = np.bincount(segs, weights=gl, minlength=n_seg).astype(np.int64)
        left_n1 = np.bincount(segs, weights=gl & (y[active_rows] == 1), minlength=n_seg).astype(np.int64)
        for k in np.flatnonzero(gain):
            n1_left = int(left_n1[k])
            nl_k = int(left_n[k])
            nr_k = int(seg_len[k]) - nl_k
            node = frontier[k]
            feature[node] = int(best_feat[k])
            threshold[node] = float(best_thr[k])
            for side, (cnt, size) in enumerate((((nl_k - n1_left, n1_left), nl_k),
                                                ((nr_k - (int(tot1[k]) - n1_left), int(tot1[k]) - n1_left), nr_k))):
                cid = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                counts.append(cnt)
                child_of[k, side] = len(new_frontier)
                new_frontier.append(cid)
                new_len.append(size)
            left[node] = len(feature) - 2
            right[node] = len(feature) - 1

        # drop rows of segments that did not split, then partition the rest
        keep_rows = gain[row_seg[orders[0]]]
        orders = orders[:, keep_rows]
        kept = np.flatnonzero(gain)
        old_start = np.zeros(n_seg, dtype=np.int64)
        old_start[kept] = np.concatenate([[0], np.cumsum(seg_len[kept])[:-1]])
        new_row_seg = np.full(n, -1)
        ar = orders[0]
        new_row_seg[ar] = np.where(go_left_row[ar], child_of[row_seg[ar], 0], child_of[row_seg[ar], 1])
        new_len = np.asarray(new_len, dtype=np.int64)
        new_start = np.concatenate([[0], np.cumsum(new_len)[:-1]])
        pos = np.arange(orders.shape[1])
        for f in range(d):
            o = orders[f]
            start = old_start[row_seg[o]]
            is_left = go_left_row[o]
            cl = np.cumsum(is_left) - is_left
            left_rank = cl - cl[start]
            rank = np.where(is_left, left_rank, (pos - start) - left_rank)
            placed = np.empty_like(o)
            placed[new_start[new_row_seg[o]] + rank] = o
            orders[f] = placed
        row_seg = new_row_seg
        frontier = np.asarray(new_frontier)
        seg_len = new_len
        seg_start = new_start
        depth += 1

    return CartTree(feature, threshold, left, right, counts, max_depth, min_samples_split, d, n, feature_names)


def impurity_importance(tree: CartTree, normalize: bool = True) -> np.ndarray:
    """Weighted impurity decrease per feature, normalized to sum 1 if nonzero."""
    g = tree.node_gini()
    n = tree.counts.sum(axis=1).astype(float)
    total = n[0]
    imp = np.zeros(tree.feature_count)
    for i in range(tree.n_nodes):
        if tree.is_leaf(i):
            continue
        l, r = tree.left[i], tree.right[i]
        imp[tree.feature[i]] += (n[i] * g[i] - n[l] * g[l] - n[r] * g[r]) / total
    if normalize and imp.sum() > 0:
        imp = imp / imp.sum()
    return imp


def predict_proba(tree: CartTree, x) -> np.ndarray:
    return tree.predict_proba(x)


def accuracy(tree, X, y) -> float:
    return float(np.mean(tree.predict(X) == np.asarray(y)))


def select_depth(X, y, depth_grid=(4, 6, 8, 10, 12, 16, 20), k: int = 5, seed: int = 0,
                 min_samples_split: int = 2):
    """Pick ``max_depth`` by k-fold cross-validated accuracy; ties go to the shallower tree.

    Returns ``(best_depth, {depth: mean_accuracy})``.
    """
    from .data import kfold_indices

    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    grid = sorted(int(d) for d in depth_grid)
    accs = {d: [] for d in grid}
    # one deepest fit per fold, evaluated at every shallower cut
    for tr, va in kfold_indices(len(y), k, seed):
        t = fit(X[tr], y[tr], grid[-1], min_samples_split)
        for d in grid:
            accs[d].append(float(np.mean(t.predict_at_depth(X[va], d) == y[va])))
    scores = {d: float(np.mean(a)) for d, a in accs.items()}
    best = max(sorted(scores), key=lambda dep: (scores[dep], -dep))
    return best, scores
