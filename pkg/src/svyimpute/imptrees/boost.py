"""Tree boosting for the quadratic loss.

Two flavours: forward-stagewise least-squares boosting (leaf constants are
weighted mean residuals) and a second-order variant whose splits maximize
the penalized objective reduction and whose leaf values have the
closed form -sum(w g) / (sum(w h) + lambda). Trees are grown best-first up
to a fixed number of terminal leaves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..impcore import FittedImputer, MethodConfig, RespondentData, register_family
from .cart import TreeNode, best_split, predict_tree


@dataclass(frozen=True)
class BoostConfig:
    n_rounds: int = 50
    max_leaves: int = 3
    learning_rate: float = 0.1
    lambda_: float = 1.0
    gamma_penalty: float = 0.0

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be nonnegative")
        if self.max_leaves < 1:
            raise ValueError("max_leaves must be at least 1")
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in [0, 1]")
        if self.lambda_ < 0 or self.gamma_penalty < 0:
            raise ValueError("penalties must be nonnegative")


def _grow_best_first(x, max_leaves, scan, leaf_value, min_leaf=1):
    """Grow a tree by repeatedly splitting the leaf with the largest gain.

    ``scan(idx)`` proposes (var, threshold, gain) or None for a leaf's row
    set; ``leaf_value(idx)`` assigns the final constants.
    """
    all_idx = np.arange(x.shape[0])
    root = TreeNode(value=0.0, count=len(all_idx))
    frontier = [(root, all_idx, scan(all_idx))]
    gains = []
    while len(frontier) < max_leaves:
        best_i, best_gain = -1, 0.0
        for i, (_, _, cand) in enumerate(frontier):
            if cand is not None and cand[2] > best_gain:
                best_i, best_gain = i, cand[2]
        if best_i < 0:
            break
        node, idx, (var, threshold, gain) = frontier.pop(best_i)
        mask = x[idx, var] < threshold
        left_idx, right_idx = idx[mask], idx[~mask]
        node.var, node.threshold, node.split_gain = var, threshold, gain
        node.left = TreeNode(value=0.0, count=len(left_idx))
        node.right = TreeNode(value=0.0, count=len(right_idx))
        gains.append(gain)
        frontier.append((node.left, left_idx, scan(left_idx)))
        frontier.append((node.right, right_idx, scan(right_idx)))
    for node, idx, _ in frontier:
        node.value = leaf_value(idx)
    return root, gains


def _weighted_rss(y, f, w):
    return float(np.dot(w, (y - f) ** 2))


def fit_ls_boost(data: RespondentData, config: BoostConfig) -> FittedImputer:
    """Forward-stagewise boosting: start at the weighted mean, then add
    shrunken trees fit to the current residuals."""
    w = data.weights
    base = float(np.dot(w, data.y) / w.sum())
    f = np.full(data.n, base)
    trees = []
    round_rss = [_weighted_rss(data.y, f, w)]
    nu = config.learning_rate
    if nu > 0:
        for _ in range(config.n_rounds):
            r = data.y - f

            def scan(idx, r=r):
                if len(idx) < 2:
                    return None
                return best_split(data.x[idx], r[idx], min_leaf=1)

            def leaf_value(idx, r=r):
                return float(np.dot(w[idx], r[idx]) / w[idx].sum())

            tree, _ = _grow_best_first(data.x, config.max_leaves, scan, leaf_value)
            trees.append(tree)
            f = f + nu * predict_tree(tree, data.x)
            round_rss.append(_weighted_rss(data.y, f, w))

    def predict(x_rows: np.ndarray) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        out = np.full(x_rows.shape[0], base)
        for tree in trees:
            out += nu * predict_tree(tree, x_rows)
        return out

    return FittedImputer(
        method_id="ls_boost",
        predict=predict,
        n_features=data.p,
        metadata={"base": base, "round_rss": round_rss, "n_trees": len(trees)},
    )


def _scan_second_order(xj, g, h, w, lam):
    """Best cut of one feature by the penalized structure-score reduction."""
    n = len(xj)
    order = np.argsort(xj, kind="stable")
    xs = xj[order]
    wg = (w * g)[order]
    wh = (w * h)[order]
    pos = np.arange(0, n - 1)
    valid = xs[pos] < xs[pos + 1]
    if not valid.any():
        return None
    pos = pos[valid]
    cg, ch = np.cumsum(wg), np.cumsum(wh)
    gl, hl = cg[pos], ch[pos]
    gt, ht = cg[-1], ch[-1]
    score = 0.5 * (
        gl**2 / (hl + lam)
        + (gt - gl) ** 2 / (ht - hl + lam)
        - gt**2 / (ht + lam)
    )
    best = int(np.argmax(score))
    threshold = 0.5 * (xs[pos[best]] + xs[pos[best] + 1])
    return float(threshold), float(score[best])


def fit_xgb(data: RespondentData, config: BoostConfig) -> FittedImputer:
    """Second-order boosting for the quadratic loss.

    Gradients g_i = 2 (f(x_i) - y_i) and h_i = 2; a split is kept only when
    its structure-score reduction exceeds the per-leaf penalty, and leaves
    take the closed-form value -sum(w g) / (sum(w h) + lambda).
    """
    w = data.weights
    lam, gamma = config.lambda_, config.gamma_penalty
    base = float(np.dot(w, data.y) / w.sum())
    f = np.full(data.n, base)
    trees = []
    all_gains = []
    round_rss = [_weighted_rss(data.y, f, w)]
    nu = config.learning_rate
    if nu > 0:
        for _ in range(config.n_rounds):
            g = 2.0 * (f - data.y)
            h = np.full(data.n, 2.0)

            def scan(idx, g=g, h=h):
                if len(idx) < 2:
                    return None
                best = None
                for var in range(data.p):
                    found = _scan_second_order(
                        data.x[idx, var], g[idx], h[idx], w[idx], lam
                    )
                    if found is None:
                        continue
                    threshold, score = found
                    if best is None or score > best[2]:
                        best = (var, threshold, score)
                if best is None:
                    return None
                gain = best[2] - gamma
                if gain <= 0:
                    return None
                return best[0], best[1], gain

            def leaf_value(idx, g=g, h=h):
                return float(-np.dot(w[idx], g[idx]) / (np.dot(w[idx], h[idx]) + lam))

            tree, gains = _grow_best_first(data.x, config.max_leaves, scan, leaf_value)
            trees.append(tree)
            all_gains.extend(gains)
            f = f + nu * predict_tree(tree, data.x)
            round_rss.append(_weighted_rss(data.y, f, w))

    def predict(x_rows: np.ndarray) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        out = np.full(x_rows.shape[0], base)
        for tree in trees:
            out += nu * predict_tree(tree, x_rows)
        return out

    return FittedImputer(
        method_id="xgb",
        predict=predict,
        n_features=data.p,
        metadata={
            "base": base,
            "round_rss": round_rss,
            "split_gains": all_gains,
            "n_trees": len(trees),
        },
    )


def _boost_config(params: dict) -> BoostConfig:
    return BoostConfig(
        n_rounds=params.get("n_rounds", 50),
        max_leaves=params.get("max_leaves", 3),
        learning_rate=params.get("learning_rate", 0.1),
        lambda_=params.get("lambda_", 1.0),
        gamma_penalty=params.get("gamma_penalty", 0.0),
    )


@register_family("ls_boost")
def _fit_ls_boost_family(config: MethodConfig, data: RespondentData, rng=None, full_x=None):
    fitted = fit_ls_boost(data, _boost_config(config.params))
    return FittedImputer(
        method_id=config.name, predict=fitted.predict,
        n_features=data.p, metadata=fitted.metadata,
    )


@register_family("xgb")
def _fit_xgb_family(config: MethodConfig, data: RespondentData, rng=None, full_x=None):
    fitted = fit_xgb(data, _boost_config(config.params))
    return FittedImputer(
        method_id=config.name, predict=fitted.predict,
        n_features=data.p, metadata=fitted.metadata,
    )
