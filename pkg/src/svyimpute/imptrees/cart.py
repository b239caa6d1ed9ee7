"""Regression trees by recursive partitioning.

Splits minimize the unweighted residual sum of squares of the children;
leaf predictions are the design-weighted mean of the respondent values in
the leaf. The same grower (with optional per-node variable subsampling)
backs the random forest and the boosting weak learners.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..impcore import FittedImputer, MethodConfig, RespondentData, register_family


@dataclass
class TreeNode:
    """One node: every node carries the weighted mean of its rows, internal
    nodes additionally carry the split (rows with x[var] < threshold go
    left, x[var] >= threshold go right)."""

    value: float
    count: int
    var: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    split_gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.var is None


def _node_rss(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    return float(np.sum((y - y.mean()) ** 2))


def _scan_feature(xj: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best threshold for one feature: (threshold, child_rss) or None."""
    n = len(xj)
    order = np.argsort(xj, kind="stable")
    xs, ys = xj[order], y[order]
    lo, hi = min_leaf - 1, n - min_leaf - 1
    if hi < lo:
        return None
    pos = np.arange(lo, hi + 1)
    valid = xs[pos] < xs[pos + 1]
    if not valid.any():
        return None
    pos = pos[valid]
    cy = np.cumsum(ys)
    cy2 = np.cumsum(ys**2)
    nl = (pos + 1).astype(float)
    left_rss = cy2[pos] - cy[pos] ** 2 / nl
    tot_y, tot_y2 = cy[-1], cy2[-1]
    nr = n - nl
    right_rss = (tot_y2 - cy2[pos]) - (tot_y - cy[pos]) ** 2 / nr
    child = np.maximum(left_rss, 0.0) + np.maximum(right_rss, 0.0)
    best = int(np.argmin(child))
    threshold = 0.5 * (xs[pos[best]] + xs[pos[best] + 1])
    return float(threshold), float(child[best])


def best_split(
    x: np.ndarray,
    y: np.ndarray,
    candidate_vars: Optional[np.ndarray] = None,
    min_leaf: int = 1,
):
    """Exhaustive scan over candidate variables and value midpoints.

    Returns (variable, threshold, gain) for the split minimizing the
    children's unweighted RSS, or None when no split reduces the RSS.
    Ties resolve to the first candidate variable and lowest threshold.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        return None
    if candidate_vars is None:
        candidate_vars = np.arange(x.shape[1])
    parent = _node_rss(y)
    best = None
    for var in candidate_vars:
        found = _scan_feature(x[:, var], y, min_leaf)
        if found is None:
            continue
        threshold, child_rss = found
        if best is None or child_rss < best[2]:
            best = (int(var), threshold, child_rss)
    if best is None:
        return None
    gain = parent - best[2]
    if gain <= 1e-12 * max(1.0, parent):
        return None
    return best[0], best[1], gain


def grow_tree(
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    min_split: int = 2,
    min_leaf: int = 1,
    min_gain: float = 0.0,
    mtry: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> TreeNode:
    """Grow a tree depth-first; ``min_gain`` is an absolute RSS threshold."""
    p = x.shape[1]

    def build(idx: np.ndarray) -> TreeNode:
        node_y = y[idx]
        node_w = w[idx]
        node = TreeNode(
            value=float(np.dot(node_w, node_y) / node_w.sum()), count=len(idx)
        )
        if len(idx) < min_split:
            return node
        if mtry is not None and mtry < p:
            cand = np.sort(rng.choice(p, size=mtry, replace=False))
        else:
            cand = None
        split = best_split(x[idx], node_y, candidate_vars=cand, min_leaf=min_leaf)
        if split is None or split[2] < min_gain:
            return node
        var, threshold, gain = split
        mask = x[idx, var] < threshold
        node.var, node.threshold, node.split_gain = var, threshold, gain
        node.left = build(idx[mask])
        node.right = build(idx[~mask])
        return node

    return build(np.arange(len(y)))


def predict_tree(node: TreeNode, x_rows: np.ndarray) -> np.ndarray:
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
    out = np.empty(x_rows.shape[0])
    stack = [(node, np.arange(x_rows.shape[0]))]
    while stack:
        nd, idx = stack.pop()
        if len(idx) == 0:
            continue
        if nd.is_leaf:
            out[idx] = nd.value
        else:
            mask = x_rows[idx, nd.var] < nd.threshold
            stack.append((nd.left, idx[mask]))
            stack.append((nd.right, idx[~mask]))
    return out


def prune_tree(node: TreeNode, min_gain: float) -> TreeNode:
    """Collapse splits whose recorded gain falls below ``min_gain``."""
    if node.is_leaf:
        return node
    node.left = prune_tree(node.left, min_gain)
    node.right = prune_tree(node.right, min_gain)
    if node.left.is_leaf and node.right.is_leaf and node.split_gain < min_gain:
        node.var = node.threshold = node.left = node.right = None
    return node


def tree_to_dict(node: TreeNode) -> dict:
    """JSON-ready dump of the tree structure."""
    if node.is_leaf:
        return {"value": node.value, "count": node.count}
    return {
        "var": node.var,
        "threshold": node.threshold,
        "count": node.count,
        "left": tree_to_dict(node.left),
        "right": tree_to_dict(node.right),
    }


def leaf_weight_check(node: TreeNode, x: np.ndarray, w: np.ndarray):
    """Implied respondent weights of each training row's leaf.

    Returns, for every training row, the vector of normalized leaf weights
    (nonnegative, summing to one within the leaf). Used by tests.
    """
    x = np.atleast_2d(x)
    leaves = {}

    def collect(nd, idx):
        if nd.is_leaf:
            leaves[id(nd)] = idx
            return
        mask = x[idx, nd.var] < nd.threshold
        collect(nd.left, idx[mask])
        collect(nd.right, idx[~mask])

    collect(node, np.arange(x.shape[0]))
    return [w[idx] / w[idx].sum() for idx in leaves.values()]


def fit_cart(
    data: RespondentData,
    min_split: int = 20,
    min_leaf: int = 7,
    cp: float = 0.01,
    prune: bool = False,
) -> FittedImputer:
    """CART with the split/estimate asymmetry: unweighted RSS drives the
    splits, leaves predict the design-weighted mean.

    ``cp`` is relative to the root RSS; splits gaining less are not made.
    Optional pruning removes already-made splits below the same threshold.
    """
    root_rss = _node_rss(data.y)
    min_gain = cp * root_rss
    tree = grow_tree(
        data.x, data.y, data.weights,
        min_split=min_split, min_leaf=min_leaf, min_gain=min_gain,
    )
    if prune:
        tree = prune_tree(tree, min_gain)

    def predict(x_rows: np.ndarray) -> np.ndarray:
        return predict_tree(tree, x_rows)

    return FittedImputer(
        method_id="cart",
        predict=predict,
        n_features=data.p,
        metadata={"tree": tree, "dump": tree_to_dict(tree)},
    )


@register_family("cart")
def _fit_cart_family(config: MethodConfig, data: RespondentData, rng=None, full_x=None):
    fitted = fit_cart(
        data,
        min_split=config.params.get("min_split", 20),
        min_leaf=config.params.get("min_leaf", 7),
        cp=config.params.get("cp", 0.01),
        prune=config.params.get("prune", False),
    )
    return FittedImputer(
        method_id=config.name,
        predict=fitted.predict,
        n_features=data.p,
        metadata=fitted.metadata,
    )
