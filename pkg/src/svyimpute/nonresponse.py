"""Missing-at-random response mechanisms.

Each mechanism maps predictor values to a response probability; the
probability depends on the predictors only, never on the survey variable.
Raw formula values are clamped to [0, 1] (the reciprocal-exponential term
of NR1 is unbounded above and NR4 can go negative in the tails).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .popgen import PredictorTable, inverse_exp_score

MECHANISMS = ("NR1", "NR2", "NR3", "NR4", "HD_SIGMOID", "FULL_RESPONSE")


@dataclass(frozen=True)
class ResponseSet:
    """Realized response indicators for a drawn sample."""

    indicators: np.ndarray
    realized_rate: float


def _lowdim_columns(predictors: PredictorTable):
    try:
        return tuple(predictors.column(c) for c in ("x1", "x2", "x3", "x4", "x5"))
    except KeyError as exc:
        raise KeyError(f"mechanism requires predictor {exc.args[0]}") from None


def response_probs(mechanism: str, predictors: PredictorTable) -> np.ndarray:
    """Response probability for every row of a predictor table."""
    n = predictors.n_units
    if mechanism == "NR2":
        return np.full(n, 0.5)
    if mechanism == "FULL_RESPONSE":
        return np.ones(n)
    if mechanism == "HD_SIGMOID":
        for c in ("x1", "x2", "x3"):
            if c not in predictors.column_names:
                raise KeyError(f"mechanism requires predictor {c}")
        x1 = predictors.column("x1")
        x2 = predictors.column("x2")
        x3 = predictors.column("x3")
        z = -0.83 + 0.001 * (2.0 * x1 + 2.0 * x2 - 2.5 * x3)
        raw = 0.1 + 0.89 / (1.0 + np.exp(-z))
        return np.clip(raw, 0.0, 1.0)
    x1, x2, x3, x4, x5 = _lowdim_columns(predictors)
    if mechanism == "NR1":
        raw = 0.1 + 0.79 * inverse_exp_score(x1, x2, x3, x4, x5, 0.75, 0.5)
    elif mechanism == "NR3":
        q = inverse_exp_score(x1, x2, x3, x4, x5, 6.5, 0.4)
        raw = 0.55 * q + 0.02 - 0.01 * x2**3
    elif mechanism == "NR4":
        q = inverse_exp_score(x1, x2, x3, x4, x5, 6.5, 0.4)
        raw = 0.5 * q + 0.13 - 0.1 * (np.sin(x1) + np.cos(x2))
    else:
        raise ValueError(f"unknown response mechanism {mechanism!r}")
    return np.clip(raw, 0.0, 1.0)


def response_prob(mechanism: str, x_row) -> float:
    """Scalar convenience wrapper around :func:`response_probs`."""
    x_row = np.asarray(x_row, dtype=float)
    names = tuple(f"x{j + 1}" for j in range(len(x_row)))
    kinds = tuple(
        "categorical" if n == "x5" else ("binary" if n == "x4" else "continuous")
        for n in names
    )
    table = PredictorTable(
        values=x_row.reshape(1, -1), column_kinds=kinds, column_names=names
    )
    return float(response_probs(mechanism, table)[0])


def generate_response(probabilities: np.ndarray, rng: np.random.Generator) -> ResponseSet:
    """Independent Bernoulli response draws with the given probabilities."""
    probabilities = np.asarray(probabilities, dtype=float)
    if np.any(probabilities < 0) or np.any(probabilities > 1):
        raise ValueError("response probabilities must lie in [0, 1]")
    indicators = (rng.random(len(probabilities)) < probabilities).astype(np.int8)
    rate = float(indicators.mean()) if len(indicators) else 0.0
    return ResponseSet(indicators=indicators, realized_rate=rate)
