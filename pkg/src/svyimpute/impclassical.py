"""Regression-style imputers: linear, logistic, score classes, KNN,
B-spline additive models and principal-components regression."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .design import quantile_inf
from .impcore import (
    FittedImputer,
    MethodConfig,
    RespondentData,
    register_family,
)

_LOGISTIC_CAP = 30.0


# ---------------------------------------------------------------------------
# Weighted linear regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearFit:
    """Solution of the weighted normal equations, intercept first."""

    beta: np.ndarray
    xtx_rank: int
    weight_mode: str = "design"


def _with_intercept(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.column_stack([np.ones(x.shape[0]), x])


def fit_weighted_linear(data: RespondentData, weight_mode: str = "design") -> LinearFit:
    """Weighted least squares with an intercept column prepended.

    Rank-deficient systems fall back to the minimum-norm solution; the rank
    is recorded on the fit.
    """
    z = _with_intercept(data.x)
    sw = np.sqrt(data.weights)
    beta, _, rank, _ = np.linalg.lstsq(z * sw[:, None], data.y * sw, rcond=None)
    return LinearFit(beta=beta, xtx_rank=int(rank), weight_mode=weight_mode)


def predict_linear(fit: LinearFit, x_rows: np.ndarray) -> np.ndarray:
    return _with_intercept(x_rows) @ fit.beta


@register_family("linear")
def _fit_linear_family(config: MethodConfig, data: RespondentData, rng=None, full_x=None):
    mode = "design" if config.use_design_weights else "unit"
    fit = fit_weighted_linear(data, weight_mode=mode)
    return FittedImputer(
        method_id=config.name,
        predict=lambda x: predict_linear(fit, x),
        n_features=data.p,
        metadata={"rank": fit.xtx_rank, "beta": fit.beta.tolist()},
    )


# ---------------------------------------------------------------------------
# Weighted logistic regression
# ---------------------------------------------------------------------------

def fit_weighted_logistic(
    data: RespondentData, max_iter: int = 50, tol: float = 1e-10
) -> FittedImputer:
    """Newton-Raphson on the weighted logistic score equations.

    Coefficients are capped at +-30 to keep separated data from diverging;
    when the cap binds a ``separation`` flag is raised in the metadata.
    """
    if np.any((data.y != 0.0) & (data.y != 1.0)):
        raise ValueError("logistic regression requires a 0/1 response")
    z = _with_intercept(data.x)
    w = data.weights
    beta = np.zeros(z.shape[1])
    converged = False
    for _ in range(max_iter):
        eta = np.clip(z @ beta, -700, 700)
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = z.T @ (w * (data.y - p))
        v = np.maximum(p * (1.0 - p), 1e-12)
        hess = (z * (w * v)[:, None]).T @ z
        hess[np.diag_indices_from(hess)] += 1e-10
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        beta = np.clip(beta + step, -_LOGISTIC_CAP, _LOGISTIC_CAP)
        if np.max(np.abs(step)) < tol or np.all(np.abs(beta) >= _LOGISTIC_CAP):
            converged = True
            break
    separation = bool(np.any(np.abs(beta) >= _LOGISTIC_CAP))

    def predict(x_rows: np.ndarray) -> np.ndarray:
        eta = np.clip(_with_intercept(x_rows) @ beta, -700, 700)
        return 1.0 / (1.0 + np.exp(-eta))

    return FittedImputer(
        method_id="logistic",
        predict=predict,
        n_features=data.p,
        metadata={
            "beta": beta.tolist(),
            "converged": converged,
            "separation": separation,
        },
    )


@register_family("logistic")
def _fit_logistic_family(config: MethodConfig, data: RespondentData, rng=None, full_x=None):
    fitted = fit_weighted_logistic(
        data,
        max_iter=config.params.get("max_iter", 50),
        tol=config.params.get("tol", 1e-10),
    )
    return FittedImputer(
        method_id=config.name,
        predict=fitted.predict,
        n_features=data.p,
        metadata=fitted.metadata,
    )


# ---------------------------------------------------------------------------
# Imputation classes (score method)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreClasses:
    """Sample partition by quantiles of a preliminary linear score.

    ``class_map`` redirects classes that contain no respondents to their
    nearest donor-bearing class, so every lookup resolves to a class with
    at least one respondent.
    """

    boundaries: np.ndarray  # H-1 score quantiles
    n_classes: int
    class_means: np.ndarray  # per (remapped) class weighted respondent mean
    donor_y: tuple  # per class: respondent y values
    donor_w: tuple  # per class: respondent weights
    class_map: np.ndarray  # raw class id -> donor-bearing class id
    sample_class_ids: np.ndarray
    respondent_mask: Optional[np.ndarray] = None
    fallback_merges: int = 0

    def assign(self, scores: np.ndarray) -> np.ndarray:
        raw = np.searchsorted(self.boundaries, np.asarray(scores, dtype=float), side="right")
        return self.class_map[raw]


def build_score_classes(
    full_x: np.ndarray,
    linear: LinearFit,
    class_size: int,
    respondents: RespondentData,
    respondent_mask: Optional[np.ndarray] = None,
) -> ScoreClasses:
    """Partition the sample into ~n/class_size classes of the linear score.

    Scores are computed for every sampled unit (respondents and
    nonrespondents) from the respondent-fitted coefficients; boundaries sit
    at the empirical score quantiles of orders 1/H .. (H-1)/H with the
    half-open convention [q_{h-1}, q_h).
    """
    full_x = np.atleast_2d(np.asarray(full_x, dtype=float))
    n = full_x.shape[0]
    if class_size < 2:
        raise ValueError("class_size must be at least 2")
    if class_size > n:
        raise ValueError(f"class_size {class_size} exceeds sample size {n}")
    scores = predict_linear(linear, full_x)
    h = max(1, round(n / class_size))
    boundaries = np.array([quantile_inf(scores, k / h) for k in range(1, h)])
    raw_ids = np.searchsorted(boundaries, scores, side="right")
    resp_ids = np.searchsorted(
        boundaries, predict_linear(linear, respondents.x), side="right"
    )
    if respondent_mask is not None:
        respondent_mask = np.asarray(respondent_mask, dtype=bool)

    donor_y, donor_w = [], []
    for c in range(h):
        in_c = resp_ids == c
        donor_y.append(respondents.y[in_c])
        donor_w.append(respondents.weights[in_c])

    # classes without respondents redirect to the nearest donor-bearing class
    has_donors = np.array([len(y) > 0 for y in donor_y])
    if not has_donors.any():
        raise ValueError("no respondents in any class")
    donor_classes = np.nonzero(has_donors)[0]
    class_map = np.empty(h, dtype=int)
    merges = 0
    for c in range(h):
        if has_donors[c]:
            class_map[c] = c
        else:
            nearest = donor_classes[np.argmin(np.abs(donor_classes - c))]
            class_map[c] = int(nearest)
            merges += 1

    class_means = np.full(h, np.nan)
    for c in donor_classes:
        class_means[c] = float(np.dot(donor_w[c], donor_y[c]) / donor_w[c].sum())

    return ScoreClasses(
        boundaries=boundaries,
        n_classes=h,
        class_means=class_means,
        donor_y=tuple(np.asarray(v) for v in donor_y),
        donor_w=tuple(np.asarray(v) for v in donor_w),
        class_map=class_map,
        sample_class_ids=raw_ids,
        respondent_mask=respondent_mask,
        fallback_merges=merges,
    )


def impute_score(
    classes: ScoreClasses, mode: str, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Imputed values for the sample's nonrespondents, in sample order."""
    if classes.respondent_mask is None:
        raise ValueError("classes were built without a respondent mask")
    target_ids = classes.class_map[classes.sample_class_ids[~classes.respondent_mask]]
    if mode == "mean":
        return classes.class_means[target_ids]
    if mode == "hotdeck":
        if rng is None:
            raise ValueError("hot-deck imputation requires a random stream")
        out = np.empty(len(target_ids))
        for i, c in enumerate(target_ids):
            w = classes.donor_w[c]
            out[i] = rng.choice(classes.donor_y[c], p=w / w.sum())
        return out
    raise ValueError(f"unknown score imputation mode {mode!r}")


def _score_family(config, data, rng, full_x, hotdeck: bool):
    if full_x is None:
        raise ValueError("score method needs predictor rows for the full sample")
    full_x = np.atleast_2d(np.asarray(full_x, dtype=float))
    linear = fit_weighted_linear(data)
    classes = build_score_classes(full_x, linear, config.params["class_size"], data)

    def predict(x_rows: np.ndarray) -> np.ndarray:
        ids = classes.assign(predict_linear(linear, x_rows))
        return classes.class_means[ids]

    donor_draw = None
    if hotdeck:

        def donor_draw(x_rows: np.ndarray, draw_rng: np.random.Generator) -> np.ndarray:
            ids = classes.assign(predict_linear(linear, np.atleast_2d(x_rows)))
            out = np.empty(len(ids))
            for i, c in enumerate(ids):
                w = classes.donor_w[c]
                out[i] = draw_rng.choice(classes.donor_y[c], p=w / w.sum())
            return out

    return FittedImputer(
        method_id=config.name,
        predict=predict,
        n_features=data.p,
        metadata={
            "n_classes": classes.n_classes,
            "fallback_merges": classes.fallback_merges,
        },
        is_donor=hotdeck,
        donor_draw=donor_draw,
    )


@register_family("score_mean")
def _fit_score_mean(config, data, rng=None, full_x=None):
    return _score_family(config, data, rng, full_x, hotdeck=False)


@register_family("score_hotdeck")
def _fit_score_hotdeck(config, data, rng=None, full_x=None):
    return _score_family(config, data, rng, full_x, hotdeck=True)


# ---------------------------------------------------------------------------
# K nearest neighbours
# ---------------------------------------------------------------------------

def fit_knn(data: RespondentData, k: int) -> FittedImputer:
    """Weighted average of the k closest respondents (Euclidean distance).

    Distance ties break on the smaller respondent index. k=1 is donor
    imputation: the recipient receives the nearest respondent's value.
    """
    if not 1 <= k <= data.n:
        raise ValueError(f"k must lie in [1, {data.n}], got {k}")
    xr, yr, wr = data.x, data.y, data.weights

    def predict(x_rows: np.ndarray) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        d2 = ((x_rows[:, None, :] - xr[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        wk = wr[order]
        return (wk * yr[order]).sum(axis=1) / wk.sum(axis=1)

    return FittedImputer(
        method_id=f"knn{k}",
        predict=predict,
        n_features=data.p,
        metadata={"k": k, "n_respondents": data.n},
        is_donor=(k == 1),
    )


@register_family("knn")
def _fit_knn_family(config, data, rng=None, full_x=None):
    fitted = fit_knn(data, config.params["k"])
    return FittedImputer(
        method_id=config.name,
        predict=fitted.predict,
        n_features=data.p,
        metadata=fitted.metadata,
        is_donor=fitted.is_donor,
    )


# ---------------------------------------------------------------------------
# B-splines and additive models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis of the given order with interior knots."""

    order: int
    interior_knots: np.ndarray
    boundary: tuple

    def __post_init__(self):
        lo, hi = self.boundary
        knots = np.asarray(self.interior_knots, dtype=float)
        if np.any(np.diff(knots) < 0):
            raise ValueError("interior knots must be sorted")
        if len(knots) and (knots[0] <= lo or knots[-1] >= hi):
            raise ValueError("interior knots must lie strictly inside the boundary")
        object.__setattr__(self, "interior_knots", knots)

    @property
    def dimension(self) -> int:
        return self.order + len(self.interior_knots)

    @property
    def knot_vector(self) -> np.ndarray:
        lo, hi = self.boundary
        return np.concatenate(
            [np.full(self.order, lo), self.interior_knots, np.full(self.order, hi)]
        )


def bspline_basis(x: float, basis: SplineBasis) -> np.ndarray:
    """All basis function values at x (clamped to the boundary).

    The values are nonnegative, at most ``order`` of them are nonzero and
    they sum to one.
    """
    return bspline_design(np.array([x]), basis)[0]


def bspline_design(xs: np.ndarray, basis: SplineBasis) -> np.ndarray:
    """Design matrix of the basis at the given points."""
    t = basis.knot_vector
    v = basis.order
    q = basis.dimension
    lo, hi = basis.boundary
    xs = np.clip(np.asarray(xs, dtype=float), lo, hi)
    out = np.zeros((len(xs), q))
    for row, x in enumerate(xs):
        # index of the knot span containing x; spans with positive length
        # are v-1 .. q-1, the right boundary belongs to the last span
        j = int(np.searchsorted(t, x, side="right")) - 1
        j = min(max(j, v - 1), q - 1)
        b = np.zeros(v)
        b[0] = 1.0
        for deg in range(1, v):
            saved = 0.0
            for r in range(deg):
                left = t[j + r + 1] - x
                right = x - t[j + r + 1 - deg]
                denom = t[j + r + 1] - t[j + r + 1 - deg]
                term = b[r] / denom if denom > 0 else 0.0
                b[r] = saved + left * term
                saved = right * term
            b[deg] = saved
        out[row, j - v + 1 : j + 1] = b
    return out


def quantile_interior_knots(x: np.ndarray, n_knots: int) -> np.ndarray:
    """Interior knots at the empirical quantiles of orders k/(kappa+1)."""
    lo, hi = float(np.min(x)), float(np.max(x))
    knots = [quantile_inf(x, k / (n_knots + 1)) for k in range(1, n_knots + 1)]
    knots = sorted(set(k for k in knots if lo < k < hi))
    return np.asarray(knots, dtype=float)


@dataclass
class AdditiveFit:
    """Additive model over per-predictor centered spline bases.

    Each component's basis columns are centered over the respondents, so
    every fitted component sums to zero on the training units and the
    intercept is identified.
    """

    alpha: float
    terms: list  # per predictor: dict(kind, basis, coefs, offsets)
    n_features: int
    fallbacks: list = field(default_factory=list)

    def _blocks(self, x_rows: np.ndarray):
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        for j, term in enumerate(self.terms):
            col = x_rows[:, j]
            if term["kind"] == "spline":
                yield (bspline_design(col, term["basis"]) - term["offsets"]) @ term["coefs"]
            else:
                yield (col[:, None] - term["offsets"]) @ term["coefs"]

    def component_values(self, j: int, x_rows: np.ndarray) -> np.ndarray:
        return list(self._blocks(x_rows))[j]

    def predict(self, x_rows: np.ndarray) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        out = np.full(x_rows.shape[0], self.alpha)
        for comp in self._blocks(x_rows):
            out += comp
        return out


def fit_additive_splines(
    data: RespondentData, knots_per_var: int = 5, order: int = 4
) -> AdditiveFit:
    """Joint weighted least squares over centered per-predictor bases.

    Continuous predictors get a cubic B-spline basis with interior knots at
    their respondent quantiles; predictors with too few distinct values
    (indicators, or fewer distinct values than knots require) fall back to
    a centered linear term, which is recorded. ``knots_per_var=0`` reduces
    every term to its linear fallback, i.e. the plain weighted linear fit.
    """
    blocks, terms, fallbacks = [], [], []
    for j in range(data.p):
        col = data.x[:, j]
        distinct = np.unique(col)
        use_spline = (
            knots_per_var > 0
            and len(distinct) > max(2, knots_per_var + 1)
        )
        if use_spline:
            knots = quantile_interior_knots(col, knots_per_var)
            if len(knots) < 1:
                use_spline = False
        if use_spline:
            basis = SplineBasis(
                order=order,
                interior_knots=knots,
                boundary=(float(distinct[0]), float(distinct[-1])),
            )
            design = bspline_design(col, basis)
            offsets = design.mean(axis=0)
            blocks.append(design - offsets)
            terms.append({"kind": "spline", "basis": basis, "offsets": offsets})
        else:
            offsets = np.array([col.mean()])
            blocks.append(col[:, None] - offsets)
            terms.append({"kind": "linear", "basis": None, "offsets": offsets})
            if knots_per_var > 0:
                fallbacks.append(j)
    design = np.column_stack([np.ones(data.n)] + blocks)
    sw = np.sqrt(data.weights)
    coefs, _, _, _ = np.linalg.lstsq(design * sw[:, None], data.y * sw, rcond=None)
    alpha = float(coefs[0])
    pos = 1
    for term in terms:
        width = term["basis"].dimension if term["kind"] == "spline" else 1
        term["coefs"] = coefs[pos : pos + width]
        pos += width
    return AdditiveFit(alpha=alpha, terms=terms, n_features=data.p, fallbacks=fallbacks)


@register_family("additive_splines")
def _fit_ams_family(config, data, rng=None, full_x=None):
    fit = fit_additive_splines(data, knots_per_var=config.params.get("knots", 5))
    return FittedImputer(
        method_id=config.name,
        predict=fit.predict,
        n_features=data.p,
        metadata={"knots": config.params.get("knots", 5), "fallbacks": fit.fallbacks},
    )


# ---------------------------------------------------------------------------
# Principal components regression
# ---------------------------------------------------------------------------

def fit_pcr(data: RespondentData, n_components: int) -> FittedImputer:
    """Weighted linear fit on the top principal components.

    Components come from the weighted covariance of the centered
    predictors; requesting more components than the matrix rank reduces
    the count with a warning.
    """
    if n_components < 1:
        raise ValueError("n_components must be positive")
    wt = data.weights / data.weights.sum()
    center = wt @ data.x
    xc = data.x - center
    cov = (xc * wt[:, None]).T @ xc
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    rank = int(np.sum(eigval > max(1e-12, 1e-10 * max(eigval.max(), 0.0))))
    k = min(n_components, max(rank, 1))
    if k < n_components:
        warnings.warn(
            f"reducing n_components from {n_components} to rank {k}", stacklevel=2
        )
    rotation = eigvec[:, :k]
    scores = xc @ rotation
    lin = fit_weighted_linear(RespondentData(x=scores, y=data.y, weights=data.weights))

    def predict(x_rows: np.ndarray) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        return predict_linear(lin, (x_rows - center) @ rotation)

    return FittedImputer(
        method_id=f"pcr{k}",
        predict=predict,
        n_features=data.p,
        metadata={"n_components": k, "requested": n_components, "rank": rank},
    )


@register_family("pcr")
def _fit_pcr_family(config, data, rng=None, full_x=None):
    fitted = fit_pcr(data, config.params["n_components"])
    return FittedImputer(
        method_id=config.name,
        predict=fitted.predict,
        n_features=data.p,
        metadata=fitted.metadata,
    )
