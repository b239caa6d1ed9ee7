"""Finite population generators.

Builds the low-dimensional benchmark populations (five predictors plus the
survey variables y1..y10) and a synthetic smart-meter-style surrogate with
hundreds of strongly correlated consumption curves for the high-dimensional
study. Everything is a pure function of (config, rng), so callers can run
many generations in parallel with independent random streams.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .design import quantile_inf

LOWDIM_COLUMNS = ("x1", "x2", "x3", "x4", "x5")
LOWDIM_KINDS = ("continuous", "continuous", "continuous", "binary", "categorical")

SURVEY_VARIABLES = (
    "y1", "y2", "y3", "y4", "y5", "y6", "y7", "y8", "y9", "y10",
)


@dataclass(frozen=True)
class PredictorTable:
    """Population predictor matrix with per-column kind tags."""

    values: np.ndarray  # (N, p)
    column_kinds: tuple
    column_names: tuple

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise ValueError("values must be an (N, p) matrix matching column_names")
        if len(self.column_kinds) != len(self.column_names):
            raise ValueError("column_kinds and column_names must align")

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.column_names.index(name)
        except ValueError:
            raise KeyError(f"no predictor column named {name!r}") from None
        return self.values[:, j]


@dataclass
class Population:
    """A generated finite population with cached true parameter values."""

    predictors: PredictorTable
    survey_vars: dict
    true_total: dict = field(default_factory=dict)
    true_quantiles: dict = field(default_factory=dict)
    binary_vars: frozenset = frozenset()

    def __post_init__(self):
        for name, vec in self.survey_vars.items():
            self.true_total.setdefault(name, float(np.sum(vec)))
        self.binary_vars = frozenset(
            name
            for name, vec in self.survey_vars.items()
            if np.all((vec == 0) | (vec == 1))
        )

    @property
    def size(self) -> int:
        return self.predictors.n_units

    def quantile(self, name: str, gamma: float) -> float:
        """Finite population quantile inf{t : F_N(t) >= gamma}, cached."""
        key = (name, gamma)
        if key not in self.true_quantiles:
            self.true_quantiles[key] = quantile_inf(self.survey_vars[name], gamma)
        return self.true_quantiles[key]


def _standardize(v: np.ndarray) -> np.ndarray:
    """Center and scale to sample mean 0, sample variance 1 (ddof=1)."""
    if len(v) < 2:
        return v - (v.mean() if len(v) else 0.0)
    return (v - v.mean()) / v.std(ddof=1)


def generate_predictors(n_units: int, rng: np.random.Generator) -> PredictorTable:
    """Generate the five benchmark predictors.

    x1 ~ Normal(0,1), x2 ~ Beta(3,1), x3 ~ 2*Gamma(3,2), x4 ~ Bernoulli(0.7)
    and x5 multinomial over {1,2,3} with probabilities (0.4, 0.3, 0.3).
    The continuous columns x1..x3 are standardized over the generated
    population. x5 is coded {1,2,3} so that size-proportional inclusion
    probabilities stay strictly positive.
    """
    if n_units < 0:
        raise ValueError("n_units must be nonnegative")
    x1 = _standardize(rng.standard_normal(n_units))
    x2 = _standardize(rng.beta(3.0, 1.0, n_units))
    x3 = _standardize(2.0 * rng.gamma(3.0, 2.0, n_units))
    x4 = (rng.random(n_units) < 0.7).astype(float)
    x5 = rng.choice(np.array([1.0, 2.0, 3.0]), size=n_units, p=[0.4, 0.3, 0.3])
    values = np.column_stack([x1, x2, x3, x4, x5]) if n_units else np.empty((0, 5))
    return PredictorTable(values=values, column_kinds=LOWDIM_KINDS, column_names=LOWDIM_COLUMNS)


def _linear_index(x1, x2, x3, x4, x5):
    """Shared predictor combination used by y9/y10 and the response models."""
    return (
        2.0 * x1 + 2.0 * x2 + 2.0 * x3 - x4 - x3 * x4
        + 1.5 * (x5 == 1.0) - 2.0 * (x5 == 2.0)
    )


def inverse_exp_score(x1, x2, x3, x4, x5, offset: float, scale: float):
    """Evaluate exp{1 + scale * (offset + linear index)}^{-1}."""
    return np.exp(-(1.0 + scale * (offset + _linear_index(x1, x2, x3, x4, x5))))


def regression_surface(name: str, predictors: PredictorTable) -> np.ndarray:
    """Noiseless conditional mean of a survey variable given the predictors.

    For the binary variables y9/y10 this returns the underlying score whose
    comparison against 1/2 defines the variable (they carry no noise term).
    """
    x1 = predictors.column("x1")
    x2 = predictors.column("x2")
    x3 = predictors.column("x3")
    x4 = predictors.column("x4")
    x5 = predictors.column("x5")
    i1 = (x5 == 1.0).astype(float)
    i2 = (x5 == 2.0).astype(float)
    if name == "y1" or name == "y2":
        return 2.0 + 2.0 * x1 + x2 + 2.0 * x3
    if name == "y3":
        return 2.0 + x1 + x2**2 + x3
    if name == "y4":
        return 2.0 + 2.0 * x1 + x2 + 3.0 * x3 * x4 + 1.5 * i1 - 2.0 * i2
    if name == "y5":
        return 2.0 + 5.0 * x1**3 + 4.0 * x2**2 + x3 * x4 + 1.5 * i1 - 2.0 * i2
    if name == "y6":
        return 2.0 + (2.0 * x1 + x2 + 2.0 * x3) ** 2
    if name == "y7":
        return 2.0 + (2.0 * x1 + x2 + 3.0 * x3 * x4 + 1.5 * i1 - 2.0 * i2) ** 2
    if name == "y8":
        return 4.0 * np.cos(x1)
    if name == "y9":
        return 0.1 + 0.79 * inverse_exp_score(x1, x2, x3, x4, x5, 0.75, 0.5)
    if name == "y10":
        q = inverse_exp_score(x1, x2, x3, x4, x5, 6.5, 0.4)
        return 0.55 * q + 0.02 - 0.01 * x2**3
    raise KeyError(f"unknown survey variable {name!r}")


# Pareto(1, 4) has mean 4/3; the draw is recentered so the y2 errors have
# zero mean, matching the convention stated for the other non-normal errors.
_PARETO_SHAPE = 4.0
_PARETO_MEAN = _PARETO_SHAPE / (_PARETO_SHAPE - 1.0)


def generate_survey_variables(
    predictors: PredictorTable, rng: np.random.Generator
) -> dict:
    """Generate y1..y10 from the predictor table.

    Continuous variables add the stated noise to their regression surface;
    y9/y10 are indicators of their scores exceeding 1/2 and carry no noise.
    """
    n = predictors.n_units
    out = {}

    def normal():
        return rng.standard_normal(n)

    out["y1"] = regression_surface("y1", predictors) + normal()
    pareto = (1.0 + rng.pareto(_PARETO_SHAPE, n)) - _PARETO_MEAN
    out["y2"] = regression_surface("y2", predictors) + pareto
    out["y3"] = regression_surface("y3", predictors) + normal()
    out["y4"] = regression_surface("y4", predictors) + normal()
    out["y5"] = regression_surface("y5", predictors) + normal()
    out["y6"] = regression_surface("y6", predictors) + normal() + rng.beta(3.0, 1.0, n)
    out["y7"] = regression_surface("y7", predictors) + normal()
    out["y8"] = regression_surface("y8", predictors) + normal()
    out["y9"] = (regression_surface("y9", predictors) > 0.5).astype(float)
    out["y10"] = (regression_surface("y10", predictors) > 0.5).astype(float)
    return out


def generate_population(n_units: int, rng: np.random.Generator) -> Population:
    """Generate the full low-dimensional population with all survey variables."""
    predictors = generate_predictors(n_units, rng)
    survey_vars = generate_survey_variables(predictors, rng)
    return Population(predictors=predictors, survey_vars=survey_vars)


# ---------------------------------------------------------------------------
# High-dimensional surrogate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HighDimConfig:
    """Parameters of the synthetic consumption-curve population.

    ``thresholds`` feeds the indicator cutoffs of the y3 surface; defaults
    are tuned to the surrogate's own scale.
    """

    n_units: int = 2000
    n_predictors: int = 672
    base_curve_roughness: float = 3.0
    unit_scale_sd: float = 0.4
    noise_sd: float = 12.0
    thresholds: dict = field(
        default_factory=lambda: {"x5_mid": 156.0, "x2": 190.0, "x5_high": 200.0}
    )

    def __post_init__(self):
        if self.n_predictors < 5:
            raise ValueError("n_predictors must be at least 5")
        if self.unit_scale_sd <= 0 or self.noise_sd <= 0:
            raise ValueError("sd parameters must be positive")


def base_consumption_curve(n_points: int, roughness: float) -> np.ndarray:
    """Smooth daily-cycle-style curve on [0, 1], on a ~150-unit scale."""
    t = np.linspace(0.0, 1.0, n_points, endpoint=False)
    return 150.0 * (
        1.0
        + 0.5 * np.sin(2.0 * np.pi * t)
        + 0.3 * np.sin(2.0 * np.pi * roughness * t + 0.7)
    )


def consumption_rows(
    a: np.ndarray, b: np.ndarray, eps: np.ndarray, curve: np.ndarray
) -> np.ndarray:
    """Unit rows a_i * s(t_j) + b_i + eps_ij."""
    return np.outer(a, curve) + b[:, None] + eps


# AR(1) coefficient of the measurement noise along the curve axis: keeps
# neighbouring instants strongly correlated without washing out the unit
# effects that drive the between-column correlation.
_NOISE_AR = 0.8
_EXP_RATE = 2.0


def generate_highdim_population(
    config: HighDimConfig, rng: np.random.Generator
) -> Population:
    """Generate the high-dimensional surrogate population.

    Columns are x_ij = a_i * s(t_j) + b_i + AR(1) noise with unit effects
    a_i ~ N(1, unit_scale_sd) and b_i ~ N(0, unit_scale_sd * mean(s)), which
    makes the columns strongly mutually correlated. Survey variables:

        y1 = 400 + 2 x1 + x2 + 2 x3 + N(0, 1500)
        y2 = 400 + x1 x2 + 2 x3 + N(0, 1500)
        y3 = 500 + 2 x4 + 400 sign(x5 - t_mid) + 1000 1(x2 > t_x2)
             + 300 1(x5 > t_high) + N(0, 1500)
        y4 = 1 + cos(2 x1 + x2 + 2 x3)^2 + centered Exponential(2)

    N(0, 1500) is read as variance 1500; the exponential has rate 2 and is
    shifted by its mean so the errors are centered.
    """
    n, p = config.n_units, config.n_predictors
    curve = base_consumption_curve(p, config.base_curve_roughness)
    a = 1.0 + config.unit_scale_sd * rng.standard_normal(n)
    b = config.unit_scale_sd * float(np.mean(curve)) * rng.standard_normal(n)
    innov = rng.standard_normal((n, p)) * config.noise_sd
    eps = np.empty_like(innov)
    if p:
        eps[:, 0] = innov[:, 0]
        for j in range(1, p):
            eps[:, j] = _NOISE_AR * eps[:, j - 1] + innov[:, j]
    values = consumption_rows(a, b, eps, curve)
    names = tuple(f"x{j + 1}" for j in range(p))
    predictors = PredictorTable(
        values=values, column_kinds=("continuous",) * p, column_names=names
    )

    x1, x2, x3, x4, x5 = (values[:, j] for j in range(5))
    thr = config.thresholds
    noise_sd = np.sqrt(1500.0)
    survey_vars = {
        "y1": 400.0 + 2.0 * x1 + x2 + 2.0 * x3 + noise_sd * rng.standard_normal(n),
        "y2": 400.0 + x1 * x2 + 2.0 * x3 + noise_sd * rng.standard_normal(n),
        "y3": (
            500.0
            + 2.0 * x4
            + 400.0 * (x5 > thr["x5_mid"])
            - 400.0 * (x5 <= thr["x5_mid"])
            + 1000.0 * (x2 > thr["x2"])
            + 300.0 * (x5 > thr["x5_high"])
            + noise_sd * rng.standard_normal(n)
        ),
        "y4": (
            1.0
            + np.cos(2.0 * x1 + x2 + 2.0 * x3) ** 2
            + (rng.exponential(1.0 / _EXP_RATE, n) - 1.0 / _EXP_RATE)
        ),
    }
    return Population(predictors=predictors, survey_vars=survey_vars)


# ---------------------------------------------------------------------------
# Model matrix and serialization
# ---------------------------------------------------------------------------

def model_matrix(predictors: PredictorTable, columns=None) -> np.ndarray:
    """Imputation-model design columns for the selected predictors.

    Continuous and binary columns enter as-is; a categorical column with
    categories {c_1 < ... < c_K} enters as the K-1 indicators of the first
    K-1 categories (x5 over {1,2,3} becomes 1(x5=1), 1(x5=2)).
    """
    if columns is None:
        columns = predictors.column_names
    blocks = []
    for name in columns:
        j = predictors.column_names.index(name)
        col = predictors.values[:, j]
        if predictors.column_kinds[j] == "categorical":
            cats = np.unique(col)
            for c in cats[:-1]:
                blocks.append((col == c).astype(float))
        else:
            blocks.append(col)
    if not blocks:
        return np.empty((predictors.n_units, 0))
    return np.column_stack(blocks)


def population_to_csv(population: Population, path) -> None:
    """Dump a population as CSV: predictor columns then survey variables."""
    pred = population.predictors
    var_names = sorted(population.survey_vars)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(pred.column_names) + var_names)
        for i in range(population.size):
            row = [repr(v) for v in pred.values[i]]
            row += [repr(float(population.survey_vars[v][i])) for v in var_names]
            writer.writerow(row)
