"""Shared imputer contract.

Every imputation method fits on respondent data (with design weights),
exposes a pure point-prediction function over predictor rows, and can be
wrapped with random-residual imputation or the Bernoulli treatment of
binary variables. Fitting consumes an explicit random stream for the
stochastic methods; fitted objects are immutable and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

_VARIANCE_FLOOR_REL = 1e-6
_VARIANCE_FLOOR_ABS = 1e-12


@dataclass(frozen=True)
class RespondentData:
    """Respondent rows available to an imputer: predictors, y and weights."""

    x: np.ndarray  # (n_r, p)
    y: np.ndarray  # (n_r,)
    weights: np.ndarray  # (n_r,)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if len(self.y) != x.shape[0] or len(self.weights) != x.shape[0]:
            raise ValueError("x, y and weights must have matching lengths")
        if x.shape[0] < 1:
            raise ValueError("at least one respondent is required")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class FittedImputer:
    """A fitted imputation model.

    ``predict`` is deterministic given the fitted state; all fit-time
    randomness has already been consumed. Donor methods additionally mark
    ``is_donor`` (their imputed values are actual respondent y-values) and
    hot-deck carries ``donor_draw`` for its imputation-time donor selection.
    """

    method_id: str
    predict: Callable[[np.ndarray], np.ndarray]
    n_features: int
    metadata: dict = field(default_factory=dict)
    is_donor: bool = False
    donor_draw: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None

    def summary(self) -> dict:
        """JSON-serializable fit summary for debugging."""
        meta = {
            k: v
            for k, v in self.metadata.items()
            if isinstance(v, (int, float, str, bool, list, tuple, type(None)))
        }
        return {"method": self.method_id, "n_features": self.n_features, **meta}


@dataclass(frozen=True)
class ResidualPool:
    """Standardized respondent residuals for random imputation."""

    standardized_residuals: np.ndarray
    donor_weights: np.ndarray
    sigma_hat: np.ndarray
    sigma_predict: Callable[[np.ndarray], np.ndarray]

    def __len__(self) -> int:
        return len(self.standardized_residuals)


@dataclass(frozen=True)
class MethodConfig:
    """Configuration of one imputation method run.

    ``family`` selects the fitting routine; ``params`` are family-specific.
    ``use_design_weights`` switches between w_i = 1/pi_i (default) and unit
    weights. ``variant`` is consumed by the harness when it builds imputed
    values (deterministic prediction vs added random residuals).
    """

    name: str
    family: str
    params: dict = field(default_factory=dict)
    use_design_weights: bool = True
    variant: str = "deterministic"


_REGISTRY: dict = {}


def register_family(family: str):
    """Class decorator registering a fit function under a family name."""

    def wrap(fn):
        _REGISTRY[family] = fn
        return fn

    return wrap


def _ensure_families_loaded():
    if "linear" not in _REGISTRY:
        from . import impclassical, impsvr  # noqa: F401
        from . import imptrees  # noqa: F401


def method_families() -> tuple:
    _ensure_families_loaded()
    return tuple(sorted(_REGISTRY))


def fit(
    config: MethodConfig,
    data: RespondentData,
    rng: Optional[np.random.Generator] = None,
    full_x: Optional[np.ndarray] = None,
) -> FittedImputer:
    """Fit the configured method on respondent data.

    ``full_x`` carries the predictor rows of the whole sample (respondents
    and nonrespondents); the score method needs it to place its class
    boundaries. Stochastic families (forests, boosting-with-resampling,
    BART) require ``rng``.
    """
    _ensure_families_loaded()
    if config.family not in _REGISTRY:
        raise ValueError(f"unknown method family {config.family!r}")
    if not config.use_design_weights:
        data = replace(data, weights=np.ones(data.n))
    return _REGISTRY[config.family](config, data, rng=rng, full_x=full_x)


def impute_deterministic(fitted: FittedImputer, x_rows: np.ndarray) -> np.ndarray:
    """Point predictions for each row; empty input yields an empty vector."""
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
    if x_rows.shape[0] == 0:
        return np.empty(0)
    if x_rows.shape[1] != fitted.n_features:
        raise ValueError(
            f"rows have {x_rows.shape[1]} features, model expects {fitted.n_features}"
        )
    return np.asarray(fitted.predict(x_rows), dtype=float)


def build_residual_pool(
    fitted: FittedImputer,
    data: RespondentData,
    variance_model: str = "homoscedastic",
) -> ResidualPool:
    """Standardized respondent residuals with weight-proportional donor mass.

    Residuals are scaled by sigma_hat (identically 1 under the
    homoscedastic model; under ``fitted``, the square root of a
    regression-tree fit of the squared residuals on x, floored away from
    zero) and recentered so their weighted mean is zero.
    """
    if data.n < 2:
        raise ValueError("residual pool needs at least two respondents")
    raw = data.y - impute_deterministic(fitted, data.x)
    if variance_model == "homoscedastic":
        sigma_hat = np.ones(data.n)

        def sigma_predict(x_rows: np.ndarray) -> np.ndarray:
            return np.ones(np.atleast_2d(x_rows).shape[0])

    elif variance_model == "fitted":
        from .imptrees.cart import fit_cart

        sq = RespondentData(x=data.x, y=raw**2, weights=data.weights)
        var_tree = fit_cart(sq)
        floor = max(_VARIANCE_FLOOR_ABS, _VARIANCE_FLOOR_REL * float(np.mean(raw**2)))

        def sigma_predict(x_rows: np.ndarray) -> np.ndarray:
            v = impute_deterministic(var_tree, x_rows)
            return np.sqrt(np.maximum(v, floor))

        sigma_hat = sigma_predict(data.x)
    else:
        raise ValueError(f"unknown variance model {variance_model!r}")

    e = raw / sigma_hat
    donor_weights = data.weights / data.weights.sum()
    e_tilde = e - float(np.dot(donor_weights, e))
    return ResidualPool(
        standardized_residuals=e_tilde,
        donor_weights=donor_weights,
        sigma_hat=sigma_hat,
        sigma_predict=sigma_predict,
    )


def impute_random(
    fitted: FittedImputer,
    pool: ResidualPool,
    x_rows: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Prediction plus a randomly drawn standardized respondent residual."""
    if len(pool) == 0:
        raise ValueError("empty residual pool")
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
    preds = impute_deterministic(fitted, x_rows)
    if len(preds) == 0:
        return preds
    idx = rng.choice(len(pool), size=len(preds), p=pool.donor_weights)
    return preds + pool.sigma_predict(x_rows) * pool.standardized_residuals[idx]


def impute_binary(
    fitted: FittedImputer, x_rows: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Impute a 0/1 variable: Bernoulli draws with the clamped prediction.

    Donor methods bypass the Bernoulli step and return the donor's observed
    value directly.
    """
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
    if x_rows.shape[0] == 0:
        return np.empty(0)
    if fitted.donor_draw is not None:
        return np.asarray(fitted.donor_draw(x_rows, rng), dtype=float)
    if fitted.is_donor:
        return impute_deterministic(fitted, x_rows)
    p = np.clip(impute_deterministic(fitted, x_rows), 0.0, 1.0)
    return (rng.random(len(p)) < p).astype(float)
