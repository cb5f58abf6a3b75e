"""Gradient-boosted regression trees with sparsity-aware splits.

Squared-error boosting on residuals over an exact greedy split search.
Rows whose split feature is missing (NaN) are routed to a learned default
direction, chosen per split as whichever side yields the higher gain, so the
ensemble both trains on and predicts from incomplete rows.

Determinism contract: identical inputs and params produce an identical
model. Candidate splits are scanned in canonical order (feature index
ascending, threshold ascending, default-left before default-right) and gains
within a small relative tolerance of the best are treated as exact ties, so
floating-point summation order cannot flip a tie.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Relative slack under which two candidate gains count as tied. Real ties
# (identical partitions reached through different features) differ only by
# roundoff, ~1e-15 relative; materially different splits differ by far more.
GAIN_TIE_RTOL = 1e-9


@dataclass
class GbdtParams:
    n_trees: int = 100
    max_depth: int = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    min_gain: float = 0.0

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees, max_depth, min_samples_leaf must be >= 1")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.min_gain < 0.0:
            raise ValueError("min_gain must be >= 0")


@dataclass
class TreeNode:
    """Either a leaf (``feature < 0``) or an internal split with two children."""

    feature: int = -1
    threshold: float = 0.0
    default_left: bool = True
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class GbdtModel:
    """Additive ensemble: prediction = base_score + learning_rate * sum(trees)."""

    base_score: float
    learning_rate: float
    n_features: int
    trees: list[TreeNode] = field(default_factory=list)
    params: GbdtParams = field(default_factory=GbdtParams)


@dataclass(frozen=True)
class SplitChoice:
    feature: int
    threshold: float
    default_left: bool
    gain: float


def _sse(n, s1, s2):
    return s2 - (s1 * s1) / n


def find_best_split(
    X: np.ndarray, residuals: np.ndarray, params: GbdtParams
) -> Optional[SplitChoice]:
    """Best (feature, threshold, default direction) by squared-error gain.

    Thresholds are midpoints between consecutive distinct present values.
    Returns None when no candidate has gain above ``min_gain`` (in particular
    for all-missing or constant feature columns).
    """
    n, d = X.shape
    if n < 2 * params.min_samples_leaf:
        return None
    r = residuals
    tot_s1 = r.sum()
    tot_s2 = (r * r).sum()
    parent_sse = _sse(n, tot_s1, tot_s2)

    order = np.argsort(X, axis=0, kind="stable")  # NaNs sort last
    xs = np.take_along_axis(X, order, axis=0)
    rs = r[order]
    cum1 = np.cumsum(rs, axis=0)
    cum2 = np.cumsum(rs * rs, axis=0)
    n_present = (~np.isnan(X)).sum(axis=0)
    pres_s1 = np.where(n_present > 0, cum1[np.maximum(n_present - 1, 0), np.arange(d)], 0.0)
    pres_s2 = np.where(n_present > 0, cum2[np.maximum(n_present - 1, 0), np.arange(d)], 0.0)
    n_miss = n - n_present
    miss_s1 = tot_s1 - pres_s1
    miss_s2 = tot_s2 - pres_s2

    # Boundary i splits sorted present rows into [0, i) | [i, n_present).
    i = np.arange(1, n)[:, None]
    thresholds = (xs[:-1] + xs[1:]) / 2.0
    valid = (i <= n_present - 1) & (xs[1:] != xs[:-1]) & (thresholds > xs[:-1])

    left_n = np.broadcast_to(i, thresholds.shape)
    left_s1 = cum1[:-1]
    left_s2 = cum2[:-1]
    right_n = n_present - left_n
    right_s1 = pres_s1 - left_s1
    right_s2 = pres_s2 - left_s2

    def gains(extra_left: bool) -> np.ndarray:
        if extra_left:
            nl, s1l, s2l = left_n + n_miss, left_s1 + miss_s1, left_s2 + miss_s2
            nr, s1r, s2r = right_n, right_s1, right_s2
        else:
            nl, s1l, s2l = left_n, left_s1, left_s2
            nr, s1r, s2r = right_n + n_miss, right_s1 + miss_s1, right_s2 + miss_s2
        ok = valid & (nl >= params.min_samples_leaf) & (nr >= params.min_samples_leaf)
        g = np.full(thresholds.shape, -np.inf)
        safe_nl = np.maximum(nl, 1)
        safe_nr = np.maximum(nr, 1)
        g_ok = parent_sse - _sse(safe_nl, s1l, s2l) - _sse(safe_nr, s1r, s2r)
        g[ok] = g_ok[ok]
        return g

    gain_left = gains(True)
    gain_right = gains(False)

    best = max(gain_left.max(initial=-np.inf), gain_right.max(initial=-np.inf))
    if not np.isfinite(best) or best <= params.min_gain:
        return None
    cutoff = best - GAIN_TIE_RTOL * max(1.0, abs(best))
    qualifies = (gain_left >= cutoff) | (gain_right >= cutoff)
    f = int(np.argmax(qualifies.any(axis=0)))
    b = int(np.argmax(qualifies[:, f]))
    default_left = bool(gain_left[b, f] >= cutoff)
    gain = float(gain_left[b, f] if default_left else gain_right[b, f])
    return SplitChoice(f, float(thresholds[b, f]), default_left, gain)


def _route_left(x_col: np.ndarray, threshold: float, default_left: bool) -> np.ndarray:
    miss = np.isnan(x_col)
    return np.where(miss, default_left, x_col < threshold)


def _fit_node(X: np.ndarray, r: np.ndarray, rows: np.ndarray, depth: int, params: GbdtParams) -> TreeNode:
    sub = r[rows]
    if depth >= params.max_depth:
        return TreeNode(value=float(sub.mean()))
    choice = find_best_split(X[rows], sub, params)
    if choice is None:
        return TreeNode(value=float(sub.mean()))
    go_left = _route_left(X[rows, choice.feature], choice.threshold, choice.default_left)
    return TreeNode(
        feature=choice.feature,
        threshold=choice.threshold,
        default_left=choice.default_left,
        left=_fit_node(X, r, rows[go_left], depth + 1, params),
        right=_fit_node(X, r, rows[~go_left], depth + 1, params),
    )


def fit_tree(X: np.ndarray, residuals: np.ndarray, params: GbdtParams) -> TreeNode:
    """Fit a single regression tree to residuals."""
    return _fit_node(X, residuals, np.arange(len(residuals)), 0, params)


def predict_tree(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    """Evaluate one tree on every row of X (NaN entries follow defaults)."""
    out = np.empty(len(X))
    stack = [(tree, np.arange(len(X)))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if node.is_leaf:
            out[idx] = node.value
        else:
            go_left = _route_left(X[idx, node.feature], node.threshold, node.default_left)
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
    return out


def fit_gbdt(X: np.ndarray, y: np.ndarray, params: Optional[GbdtParams] = None) -> GbdtModel:
    """Boosted ensemble on squared error: base score, then trees on residuals."""
    params = params or GbdtParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-d with one row per target")
    if len(y) == 0:
        raise ValueError("zero training rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")

    model = GbdtModel(
        base_score=float(y.mean()),
        learning_rate=params.learning_rate,
        n_features=X.shape[1],
        params=params,
    )
    current = np.full(len(y), model.base_score)
    for _ in range(params.n_trees):
        tree = fit_tree(X, y - current, params)
        model.trees.append(tree)
        current += params.learning_rate * predict_tree(tree, X)
    return model


def predict_many(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} features, got shape {X.shape}"
        )
    out = np.full(len(X), model.base_score)
    for tree in model.trees:
        out += model.learning_rate * predict_tree(tree, X)
    return out


def predict_gbdt(model: GbdtModel, x: np.ndarray) -> float:
    """Predict a single row; missing entries follow stored default directions."""
    return float(predict_many(model, np.asarray(x, dtype=float)[None, :])[0])


def training_sse(model: GbdtModel, X: np.ndarray, y: np.ndarray, n_trees: Optional[int] = None) -> float:
    """Squared-error of the ensemble truncated to its first n_trees trees."""
    X = np.asarray(X, dtype=float)
    pred = np.full(len(X), model.base_score)
    for tree in model.trees[: len(model.trees) if n_trees is None else n_trees]:
        pred += model.learning_rate * predict_tree(tree, X)
    return float(((y - pred) ** 2).sum())


def tree_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"value": node.value}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "default_left": node.default_left,
        "left": tree_to_dict(node.left),
        "right": tree_to_dict(node.right),
    }


def tree_from_dict(data: dict) -> TreeNode:
    if "value" in data:
        return TreeNode(value=float(data["value"]))
    return TreeNode(
        feature=int(data["feature"]),
        threshold=float(data["threshold"]),
        default_left=bool(data["default_left"]),
        left=tree_from_dict(data["left"]),
        right=tree_from_dict(data["right"]),
    )


def model_to_dict(model: GbdtModel) -> dict:
    p = model.params
    return {
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "n_features": model.n_features,
        "params": {
            "n_trees": p.n_trees,
            "max_depth": p.max_depth,
            "learning_rate": p.learning_rate,
            "min_samples_leaf": p.min_samples_leaf,
            "min_gain": p.min_gain,
        },
        "trees": [tree_to_dict(t) for t in model.trees],
    }


def model_from_dict(data: dict) -> GbdtModel:
    return GbdtModel(
        base_score=float(data["base_score"]),
        learning_rate=float(data["learning_rate"]),
        n_features=int(data["n_features"]),
        trees=[tree_from_dict(t) for t in data["trees"]],
        params=GbdtParams(**data["params"]),
    )
