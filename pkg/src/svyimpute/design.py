"""Sampling designs and design-weighted estimation.

Provides simple random sampling without replacement, Poisson sampling with
probability proportional to size, the design-weighted (Horvitz-Thompson)
total, and the weighted empirical distribution function / quantile used as
the complete-data estimators throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Sample:
    """A drawn sample: unit indices, inclusion probabilities and weights.

    ``weights[i] == 1 / pi[i]`` exactly; both designs in this module are
    without replacement per draw, so ``unit_ids`` never contains duplicates.
    """

    unit_ids: np.ndarray
    pi: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if not (len(self.unit_ids) == len(self.pi) == len(self.weights)):
            raise ValueError("unit_ids, pi and weights must have equal length")
        if len(self.pi) and (np.any(self.pi <= 0) or np.any(self.pi > 1)):
            raise ValueError("inclusion probabilities must lie in (0, 1]")
        if len(set(self.unit_ids.tolist())) != len(self.unit_ids):
            raise ValueError("duplicate unit ids in sample")

    @property
    def size(self) -> int:
        return len(self.unit_ids)


def draw_srswor(population_size: int, sample_size: int, rng: np.random.Generator) -> Sample:
    """Simple random sample without replacement; every pi equals n/N."""
    if sample_size < 0 or population_size < 0:
        raise ValueError("sizes must be nonnegative")
    if sample_size > population_size:
        raise ValueError(
            f"sample_size {sample_size} exceeds population_size {population_size}"
        )
    ids = rng.choice(population_size, size=sample_size, replace=False)
    ids = np.sort(ids)
    if sample_size == 0:
        pi = np.empty(0)
    else:
        pi = np.full(sample_size, sample_size / population_size)
    return Sample(unit_ids=ids, pi=pi, weights=1.0 / pi if sample_size else np.empty(0))


def draw_poisson_pps(
    size_values: np.ndarray, expected_n: int, rng: np.random.Generator
) -> Sample:
    """Poisson sampling with inclusion probability proportional to size.

    Each unit is included independently with pi_i = expected_n * x_i / sum(x),
    capped at 1 (the proportional formula can exceed 1 for large sizes).
    """
    size_values = np.asarray(size_values, dtype=float)
    if np.any(size_values <= 0):
        raise ValueError("all size values must be strictly positive")
    pi_all = np.minimum(1.0, expected_n * size_values / size_values.sum())
    take = rng.random(len(size_values)) < pi_all
    ids = np.nonzero(take)[0]
    pi = pi_all[ids]
    return Sample(unit_ids=ids, pi=pi, weights=1.0 / pi)


def ht_total(values: np.ndarray, weights: np.ndarray) -> float:
    """Design-weighted total: sum of w_i * y_i."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise ValueError("values and weights must have the same length")
    return float(np.dot(weights, values))


def weighted_ecdf(values: np.ndarray, weights: np.ndarray, t: float) -> float:
    """Weighted empirical distribution function at t, normalized by sum(w)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    return float(weights[values <= t].sum() / weights.sum())


def weighted_quantile(values: np.ndarray, weights: np.ndarray, gamma: float) -> float:
    """Left-continuous weighted quantile: inf{t : F_hat(t) >= gamma}.

    F_hat is the step function with jumps w_i / sum(w) at the observed
    values, so the result is always one of the inputs; ties resolve to the
    smallest qualifying observation.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if len(values) == 0:
        raise ValueError("cannot take the quantile of an empty vector")
    if values.shape != weights.shape:
        raise ValueError("values and weights must have the same length")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if np.any(weights <= 0):
        raise ValueError("weights must be strictly positive")
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    cum = np.cumsum(weights[order])
    cum /= cum[-1]
    # first index where the normalized cumulative weight reaches gamma
    idx = int(np.searchsorted(cum, gamma - 1e-12, side="left"))
    idx = min(idx, len(sorted_vals) - 1)
    return float(sorted_vals[idx])


def quantile_inf(values: np.ndarray, gamma: float) -> float:
    """Unweighted quantile with the same inf{t : F(t) >= gamma} convention."""
    values = np.asarray(values, dtype=float)
    return weighted_quantile(values, np.ones(len(values)), gamma)
