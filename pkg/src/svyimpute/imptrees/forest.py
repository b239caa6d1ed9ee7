"""Random forest regression on respondent data.

Trees are grown on with-replacement resamples of the (y, x, w) triples
with per-node variable subsampling; the forest prediction is the plain
average of the tree predictions, while each tree's leaves keep predicting
design-weighted means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..impcore import FittedImputer, MethodConfig, RespondentData, register_family
from .cart import grow_tree, predict_tree


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    mtry: int = 2
    min_node_size: int = 1
    bootstrap: bool = True
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.mtry < 1:
            raise ValueError("mtry must be at least 1")


def forest_predictor(trees: list) -> callable:
    def predict(x_rows: np.ndarray) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        acc = np.zeros(x_rows.shape[0])
        for tree in trees:
            acc += predict_tree(tree, x_rows)
        return acc / len(trees)

    return predict


def fit_random_forest(
    data: RespondentData,
    config: ForestConfig,
    rng: Optional[np.random.Generator] = None,
) -> FittedImputer:
    """Fit ``n_trees`` trees on bootstrap resamples; predictions average.

    ``min_node_size`` bounds the terminal node size from below (a node is
    only split when both children can hold that many rows). Results are
    deterministic given the stream: each tree consumes its own substream
    spawned from the master generator.
    """
    if config.mtry > data.p:
        raise ValueError(f"mtry {config.mtry} exceeds {data.p} predictors")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    tree_rngs = rng.spawn(config.n_trees)
    trees = []
    for trng in tree_rngs:
        if config.bootstrap:
            idx = trng.integers(0, data.n, size=data.n)
        else:
            idx = np.arange(data.n)
        trees.append(
            grow_tree(
                data.x[idx],
                data.y[idx],
                data.weights[idx],
                min_split=max(2, 2 * config.min_node_size),
                min_leaf=config.min_node_size,
                mtry=config.mtry,
                rng=trng,
            )
        )

    return FittedImputer(
        method_id="random_forest",
        predict=forest_predictor(trees),
        n_features=data.p,
        metadata={
            "n_trees": config.n_trees,
            "mtry": config.mtry,
            "min_node_size": config.min_node_size,
            "bootstrap": config.bootstrap,
            "trees": trees,
        },
    )


def _resolve_mtry(value, p: int) -> int:
    if value == "sqrt":
        return max(1, round(p**0.5))
    return int(value)


@register_family("random_forest")
def _fit_forest_family(config: MethodConfig, data: RespondentData, rng=None, full_x=None):
    if rng is None:
        raise ValueError("random forest fitting requires a random stream")
    fc = ForestConfig(
        n_trees=config.params.get("n_trees", 100),
        mtry=_resolve_mtry(config.params.get("mtry", "sqrt"), data.p),
        min_node_size=config.params.get("min_node_size", 1),
        bootstrap=config.params.get("bootstrap", True),
    )
    fitted = fit_random_forest(data, fc, rng)
    return FittedImputer(
        method_id=config.name,
        predict=fitted.predict,
        n_features=data.p,
        metadata=fitted.metadata,
    )
