"""Sum-of-trees regression with Gaussian errors, sampled by Bayesian
backfitting.

Tree structures follow the branching-process prior in which a node at
depth d splits with probability alpha * (1 + d)^(-beta); splitting
variables and cut values are uniform over the available choices. Leaf
values are conjugate normal, the error variance is scaled
inverse-chi-square, and design weights enter the likelihood as
per-observation precision multipliers normalized to mean one. Each tree is
updated by a grow / prune / change Metropolis-Hastings proposal with leaf
values integrated out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import chi2

from ..impcore import FittedImputer, MethodConfig, RespondentData, register_family

_SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class BartConfig:
    n_trees: int = 50
    alpha: float = 0.95
    beta: float = 2.0
    k_sigma_gamma: float = 2.0
    nu_sigma: float = 3.0
    q_sigma: float = 0.9
    burn_in: int = 200
    n_draws: int = 800
    proposal_probs: tuple = (0.4, 0.4, 0.2)  # grow, prune, change
    fixed_sigma2: Optional[float] = None  # diagnostic hook: no sigma resampling

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")


def leaf_count_prior_probs(
    alpha: float, beta: float, max_count: int = 5, max_depth: int = 16
) -> np.ndarray:
    """Exact prior probabilities of trees having 1..max_count leaves.

    Enumerates the branching process where a node at depth d becomes
    internal with probability alpha * (1 + d)^(-beta); subtrees deeper
    than ``max_depth`` are forced terminal, and trees larger than
    ``max_count`` collect in a discarded overflow bucket.
    """
    cap = max_count + 1
    memo = {}

    def subtree(depth: int) -> np.ndarray:
        if depth in memo:
            return memo[depth]
        probs = np.zeros(cap + 1)
        p_split = alpha * (1.0 + depth) ** (-beta) if depth < max_depth else 0.0
        probs[1] = 1.0 - p_split
        if p_split > 0.0:
            child = subtree(depth + 1)
            for a in range(1, cap + 1):
                if child[a] == 0.0:
                    continue
                for b in range(1, cap + 1):
                    c = min(a + b, cap)
                    probs[c] += p_split * child[a] * child[b]
        memo[depth] = probs
        return probs

    return subtree(0)[1 : max_count + 1]


class _Node:
    __slots__ = ("var", "cut", "left", "right", "mu", "depth")

    def __init__(self, depth: int):
        self.var = None
        self.cut = None
        self.left = None
        self.right = None
        self.mu = 0.0
        self.depth = depth

    @property
    def is_leaf(self) -> bool:
        return self.var is None


def _leaves_with_rows(root: _Node, x: np.ndarray):
    out = []
    stack = [(root, np.arange(x.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if node.is_leaf:
            out.append((node, idx))
        else:
            mask = x[idx, node.var] < node.cut
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
    return out


def _nog_nodes(root: _Node):
    """Internal nodes whose children are both leaves."""
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            continue
        if node.left.is_leaf and node.right.is_leaf:
            out.append(node)
        stack.extend([node.left, node.right])
    return out


def _n_leaves(root: _Node) -> int:
    stack, n = [root], 0
    while stack:
        node = stack.pop()
        if node.is_leaf:
            n += 1
        else:
            stack.extend([node.left, node.right])
    return n


def _predict_node(root: _Node, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0])
    for node, idx in _leaves_with_rows(root, x):
        out[idx] = node.mu
    return out


def _snapshot(node: _Node):
    if node.is_leaf:
        return node.mu
    return (node.var, node.cut, _snapshot(node.left), _snapshot(node.right))


def _predict_snapshot(snap, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0])
    stack = [(snap, np.arange(x.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if not isinstance(node, tuple):
            out[idx] = node
        else:
            var, cut, left, right = node
            mask = x[idx, var] < cut
            stack.append((left, idx[mask]))
            stack.append((right, idx[~mask]))
    return out


class _Sampler:
    def __init__(self, data: RespondentData, config: BartConfig, rng: np.random.Generator):
        self.x = data.x
        self.rng = rng
        self.cfg = config
        y = data.y
        self.y_min = float(y.min())
        self.scale = max(float(y.max() - y.min()), 1e-12)
        self.ys = (y - self.y_min) / self.scale - 0.5
        self.n = len(y)
        self.wt = data.weights / data.weights.sum() * self.n  # mean-one precisions
        sigma_mu = 0.5 / (config.k_sigma_gamma * math.sqrt(config.n_trees))
        self.tau0 = 1.0 / sigma_mu**2
        s2_hat = max(float(np.var(self.ys, ddof=1)) if self.n > 1 else 1.0, _SIGMA2_FLOOR)
        self.lam = s2_hat * chi2.ppf(1.0 - config.q_sigma, config.nu_sigma) / config.nu_sigma
        self.sigma2 = config.fixed_sigma2 if config.fixed_sigma2 is not None else s2_hat
        self.trees = [_Node(0) for _ in range(config.n_trees)]
        self.tree_fits = [np.zeros(self.n) for _ in range(config.n_trees)]
        self.total = np.zeros(self.n)
        self.accepted = 0
        self.proposed = 0

    def _p_split(self, depth: int) -> float:
        return self.cfg.alpha * (1.0 + depth) ** (-self.cfg.beta)

    def _leaf_lml(self, idx: np.ndarray, resid: np.ndarray) -> float:
        a = float(self.wt[idx].sum()) / self.sigma2
        m1 = float(np.dot(self.wt[idx], resid[idx])) / self.sigma2
        t = self.tau0 + a
        return 0.5 * (math.log(self.tau0 / t) + m1 * m1 / t)

    def _draw_mu(self, idx: np.ndarray, resid: np.ndarray) -> float:
        a = float(self.wt[idx].sum()) / self.sigma2
        m1 = float(np.dot(self.wt[idx], resid[idx])) / self.sigma2
        t = self.tau0 + a
        return m1 / t + self.rng.standard_normal() / math.sqrt(t)

    def _grow_cutpoints(self, idx: np.ndarray, var: int) -> np.ndarray:
        vals = np.unique(self.x[idx, var])
        return vals[1:]  # splitting below the minimum would empty a child

    def _update_tree(self, j: int):
        root = self.trees[j]
        resid = self.ys - (self.total - self.tree_fits[j])
        p_grow, p_prune, _ = self.cfg.proposal_probs
        u = self.rng.random()
        leaves = _leaves_with_rows(root, self.x)
        leaf_idx = {id(node): idx for node, idx in leaves}
        if u < p_grow:
            self._try_grow(root, leaves, resid)
        elif u < p_grow + p_prune:
            self._try_prune(root, leaf_idx, resid)
        else:
            self._try_change(root, leaf_idx, resid)
        # conjugate leaf draws, then refresh this tree's fit
        for node, idx in _leaves_with_rows(root, self.x):
            node.mu = self._draw_mu(idx, resid) if len(idx) else 0.0
        new_fit = _predict_node(root, self.x)
        self.total += new_fit - self.tree_fits[j]
        self.tree_fits[j] = new_fit

    def _try_grow(self, root, leaves, resid):
        self.proposed += 1
        node, idx = leaves[self.rng.integers(len(leaves))]
        if len(idx) < 2:
            return
        var = int(self.rng.integers(self.x.shape[1]))
        cuts = self._grow_cutpoints(idx, var)
        if len(cuts) == 0:
            return
        cut = float(cuts[self.rng.integers(len(cuts))])
        mask = self.x[idx, var] < cut
        left_idx, right_idx = idx[mask], idx[~mask]
        d = node.depth
        pd, pd1 = self._p_split(d), self._p_split(d + 1)
        log_prior = math.log(pd) + 2.0 * math.log(1.0 - pd1) - math.log(1.0 - pd)
        log_lik = (
            self._leaf_lml(left_idx, resid)
            + self._leaf_lml(right_idx, resid)
            - self._leaf_lml(idx, resid)
        )
        node.var, node.cut = var, cut
        node.left, node.right = _Node(d + 1), _Node(d + 1)
        n_nog_new = len(_nog_nodes(root))
        p_grow, p_prune, _ = self.cfg.proposal_probs
        log_prop = math.log(p_prune / n_nog_new) - math.log(p_grow / len(leaves))
        if math.log(self.rng.random() + 1e-300) < log_prior + log_lik + log_prop:
            self.accepted += 1
        else:
            node.var = node.cut = node.left = node.right = None

    def _try_prune(self, root, leaf_idx, resid):
        self.proposed += 1
        nog = _nog_nodes(root)
        if not nog:
            return
        node = nog[self.rng.integers(len(nog))]
        idx = np.concatenate([leaf_idx[id(node.left)], leaf_idx[id(node.right)]])
        d = node.depth
        pd, pd1 = self._p_split(d), self._p_split(d + 1)
        log_prior = -(math.log(pd) + 2.0 * math.log(1.0 - pd1) - math.log(1.0 - pd))
        log_lik = (
            self._leaf_lml(idx, resid)
            - self._leaf_lml(leaf_idx[id(node.left)], resid)
            - self._leaf_lml(leaf_idx[id(node.right)], resid)
        )
        old = (node.var, node.cut, node.left, node.right)
        node.var = node.cut = node.left = node.right = None
        n_leaves_new = _n_leaves(root)
        p_grow, p_prune, _ = self.cfg.proposal_probs
        log_prop = math.log(p_grow / n_leaves_new) - math.log(p_prune / len(nog))
        if math.log(self.rng.random() + 1e-300) < log_prior + log_lik + log_prop:
            self.accepted += 1
        else:
            node.var, node.cut, node.left, node.right = old

    def _try_change(self, root, leaf_idx, resid):
        self.proposed += 1
        nog = _nog_nodes(root)
        if not nog:
            return
        node = nog[self.rng.integers(len(nog))]
        idx = np.concatenate([leaf_idx[id(node.left)], leaf_idx[id(node.right)]])
        var = int(self.rng.integers(self.x.shape[1]))
        cuts = self._grow_cutpoints(idx, var)
        if len(cuts) == 0:
            return
        cut = float(cuts[self.rng.integers(len(cuts))])
        mask = self.x[idx, var] < cut
        new_left, new_right = idx[mask], idx[~mask]
        log_lik = (
            self._leaf_lml(new_left, resid)
            + self._leaf_lml(new_right, resid)
            - self._leaf_lml(leaf_idx[id(node.left)], resid)
            - self._leaf_lml(leaf_idx[id(node.right)], resid)
        )
        if math.log(self.rng.random() + 1e-300) < log_lik:
            node.var, node.cut = var, cut
            self.accepted += 1

    def _draw_sigma2(self):
        if self.cfg.fixed_sigma2 is not None:
            return
        resid = self.ys - self.total
        shape_df = self.cfg.nu_sigma + self.n
        scale = self.cfg.nu_sigma * self.lam + float(np.dot(self.wt, resid**2))
        self.sigma2 = max(scale / self.rng.chisquare(shape_df), _SIGMA2_FLOOR)

    def run(self):
        cfg = self.cfg
        kept = []
        train_sum = np.zeros(self.n)
        train_sq = np.zeros(self.n)
        for it in range(cfg.burn_in + cfg.n_draws):
            for j in range(cfg.n_trees):
                self._update_tree(j)
            self._draw_sigma2()
            if it >= cfg.burn_in:
                kept.append([_snapshot(t) for t in self.trees])
                train_sum += self.total
                train_sq += self.total**2
        n_kept = len(kept)
        train_mean = train_sum / n_kept
        train_var = np.maximum(train_sq / n_kept - train_mean**2, 0.0)
        return kept, train_mean, np.sqrt(train_var)


def fit_bart(
    data: RespondentData, config: BartConfig, rng: np.random.Generator
) -> FittedImputer:
    """Posterior-mean prediction from the sum-of-trees sampler.

    The response is shifted/scaled to [-0.5, 0.5] for sampling and
    predictions are mapped back to the original scale.
    """
    if data.n < 2:
        raise ValueError("the sampler needs at least two respondents")
    sampler = _Sampler(data, config, rng)
    kept, train_mean, train_sd = sampler.run()
    y_min, scale = sampler.y_min, sampler.scale

    def predict(x_rows: np.ndarray) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        acc = np.zeros(x_rows.shape[0])
        for draw in kept:
            for snap in draw:
                acc += _predict_snapshot(snap, x_rows)
        return (acc / len(kept) + 0.5) * scale + y_min

    accept_rate = sampler.accepted / max(sampler.proposed, 1)
    return FittedImputer(
        method_id="bart",
        predict=predict,
        n_features=data.p,
        metadata={
            "n_trees": config.n_trees,
            "n_draws": len(kept),
            "accept_rate": accept_rate,
            "train_mean": (train_mean + 0.5) * scale + y_min,
            "train_sd": train_sd * scale,
            "sigma2_last": sampler.sigma2,
        },
    )


@register_family("bart")
def _fit_bart_family(config: MethodConfig, data: RespondentData, rng=None, full_x=None):
    if rng is None:
        raise ValueError("the sampler requires a random stream")
    bc = BartConfig(
        n_trees=config.params.get("n_trees", 50),
        alpha=config.params.get("alpha", 0.95),
        beta=config.params.get("beta", 2.0),
        k_sigma_gamma=config.params.get("k_sigma_gamma", 2.0),
        nu_sigma=config.params.get("nu_sigma", 3.0),
        q_sigma=config.params.get("q_sigma", 0.9),
        burn_in=config.params.get("burn_in", 200),
        n_draws=config.params.get("n_draws", 800),
    )
    fitted = fit_bart(data, bc, rng)
    return FittedImputer(
        method_id=config.name,
        predict=fitted.predict,
        n_features=data.p,
        metadata=fitted.metadata,
    )
