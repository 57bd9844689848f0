"""Weighted logistic causal equation over segment indicator variables.

Fits a fractional-response binomial model by iteratively reweighted
least squares, selects predictors greedily by AIC, and reads causal
structure off the fitted coefficients: which single segments force the
positive class past a sufficiency threshold (overdetermination when two
or more do) and which are necessary but individually insufficient.
"""

import math
from dataclasses import dataclass

import numpy as np

from .classifiers import sigmoid
from .errors import InputError, LengthMismatch, UnknownSegmentId

SUFFICIENCY_THRESHOLD = 0.99
MAX_PREDICTORS = 6
RESPONSE_CLAMP = 1e-6
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
RIDGE_LAMBDA = 1e-6

# likelihood evaluation only, tighter than the response clamp
_MU_FLOOR = 1e-12


def logit(p: float) -> float:
    """Inverse logistic function; p must lie strictly between 0 and 1."""
    if not 0.0 < p < 1.0:
        raise InputError(f"logit requires p in (0, 1), got {p}")
    return math.log(p / (1.0 - p))


def clamp_response(y) -> np.ndarray:
    """Pull responses into (0, 1) so every row has a finite logit."""
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise InputError("response contains non-finite values")
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise InputError("response values must lie in [0, 1]")
    return np.clip(y, RESPONSE_CLAMP, 1.0 - RESPONSE_CLAMP)


@dataclass(frozen=True)
class RegressionModel:
    """Fitted logistic equation p = sigmoid(intercept + sum w_i b_i).

    ``coefficients`` holds the selected segments only; a segment absent
    from the map was not selected, which is different from a selected
    segment with a small coefficient. ``weights`` echoes the per-row
    fitting weights. ``ridged`` marks a ridge (1e-6) fallback engaged on
    a singular or separable fit.
    """

    intercept: float
    coefficients: dict[int, float]
    weights: tuple[float, ...]
    aic: float
    log_likelihood: float
    n_iterations: int
    converged: bool
    ridged: bool = False

    @property
    def segment_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.coefficients))

    def linear_score(self, bits) -> float:
        """intercept + sum of coefficients over segments present in `bits`."""
        z = self.intercept
        for segment_id, weight in self.coefficients.items():
            if segment_id > len(bits):
                raise LengthMismatch(
                    f"bit vector of length {len(bits)} lacks segment {segment_id}")
            z += weight * bits[segment_id - 1]
        return z

    def predict(self, bits) -> float:
        return float(sigmoid(self.linear_score(bits)))


@dataclass(frozen=True)
class Overdetermination:
    """Segments that are each singly sufficient for the positive class.

    A segment is sufficient when intercept + w_i > logit(threshold):
    infilling it alone from the all-contrast baseline already forces the
    predicted probability past the threshold. Two or more sufficient
    segments overdetermine the prediction.
    """

    segment_ids: tuple[int, ...]
    threshold: float = SUFFICIENCY_THRESHOLD

    @property
    def overdetermined(self) -> bool:
        return len(self.segment_ids) >= 2


def _prepare_rows(bits_rows, response, weights):
    bits = np.asarray(bits_rows, dtype=np.float64)
    if bits.ndim != 2:
        raise InputError("perturbation rows must form a 2-D matrix")
    if bits.shape[0] < 2:
        raise InputError("need at least 2 rows to fit")
    y = clamp_response(response)
    if y.shape != (bits.shape[0],):
        raise LengthMismatch(
            f"{bits.shape[0]} rows but {y.shape} response values")
    if weights is None:
        w = np.ones(bits.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (bits.shape[0],):
            raise LengthMismatch(
                f"{bits.shape[0]} rows but {w.shape} weights")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise InputError("fitting weights must be positive and finite")
    return bits, y, w


def _weighted_log_likelihood(y, mu, w) -> float:
    mu = np.clip(mu, _MU_FLOOR, 1.0 - _MU_FLOOR)
    return float(np.sum(w * (y * np.log(mu) + (1.0 - y) * np.log1p(-mu))))


def _irls(X, y, w, lam):
    """Newton-Raphson on the weighted fractional-binomial likelihood.

    Returns (beta, n_iterations, converged, failed) where failed marks a
    singular or non-finite solve that the caller should retry with ridge.
    """
    m, k = X.shape[0], X.shape[1] + 1
    design = np.column_stack([np.ones(m), X])
    beta = np.zeros(k)
    for iteration in range(1, IRLS_MAX_ITER + 1):
        mu = sigmoid(design @ beta)
        s = w * mu * (1.0 - mu)
        hessian = design.T @ (design * s[:, None])
        if lam > 0.0:
            hessian = hessian + lam * np.eye(k)
        gradient = design.T @ (w * (y - mu))
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError:
            return beta, iteration, False, True
        if not np.all(np.isfinite(step)):
            return beta, iteration, False, True
        beta = beta + step
        if np.max(np.abs(step)) < IRLS_TOL:
            return beta, iteration, True, False
    return beta, IRLS_MAX_ITER, False, False


def fit_weighted_logistic(bits_rows, response, weights=None, selected=None,
                          center: bool = True,
                          ridge: float = 0.0) -> RegressionModel:
    """Fit the logistic equation on the chosen segment columns.

    `selected` lists 1-based segment ids to use as predictors (None
    means all columns). Responses are clamped into (0, 1) and treated as
    fractional binomial observations; row log-likelihoods are multiplied
    by `weights`. Convergence is a maximum coefficient change below 1e-8
    within 100 iterations; a failed fit is still returned, flagged
    through ``converged`` and ``ridged``.
    """
    bits, y, w = _prepare_rows(bits_rows, response, weights)
    n_segments = bits.shape[1]
    if selected is None:
        ids = tuple(range(1, n_segments + 1))
    else:
        ids = tuple(sorted(selected))
        if len(set(ids)) != len(ids):
            raise InputError(f"duplicate segment ids in selection {ids}")
        for segment_id in ids:
            if not 1 <= segment_id <= n_segments:
                raise UnknownSegmentId(
                    f"segment {segment_id} outside 1..{n_segments}")
    X = bits[:, [segment_id - 1 for segment_id in ids]]
    column_means = X.mean(axis=0) if center and ids else np.zeros(len(ids))
    Xc = X - column_means

    ridged = ridge > 0.0
    beta, iterations, converged, failed = _irls(Xc, y, w, ridge)
    if failed:
        ridged = True
        beta, iterations, converged, failed = _irls(Xc, y, w, RIDGE_LAMBDA)

    coefficients = {segment_id: float(beta[j + 1])
                    for j, segment_id in enumerate(ids)}
    # undo the centering shift so the equation applies to raw bits
    intercept = float(beta[0] - np.dot(column_means, beta[1:]))
    mu = sigmoid(beta[0] + Xc @ beta[1:])
    log_likelihood = _weighted_log_likelihood(y, mu, w)
    k = 1 + len(ids)
    return RegressionModel(
        intercept=intercept,
        coefficients=coefficients,
        weights=tuple(float(v) for v in w),
        aic=2.0 * k - 2.0 * log_likelihood,
        log_likelihood=log_likelihood,
        n_iterations=iterations,
        converged=converged,
        ridged=ridged,
    )


def stepwise_select(bits_rows, response, weights=None,
                    max_predictors: int = MAX_PREDICTORS,
                    center: bool = True,
                    ridge: float = 0.0) -> tuple[int, ...]:
    """Greedy forward selection of segment predictors by AIC.

    Starts from the intercept-only model and at each round adds the
    segment whose inclusion lowers AIC the most, scanning candidates in
    ascending id order so ties resolve to the lowest id. Stops when no
    addition lowers AIC or `max_predictors` segments are selected.
    """
    bits, y, w = _prepare_rows(bits_rows, response, weights)
    if max_predictors < 0:
        raise InputError("max_predictors must be >= 0")
    n_segments = bits.shape[1]
    selected: list[int] = []
    best_aic = fit_weighted_logistic(bits, y, w, selected=(),
                                     center=center, ridge=ridge).aic
    while len(selected) < max_predictors:
        best_id = None
        for candidate in range(1, n_segments + 1):
            if candidate in selected:
                continue
            trial = fit_weighted_logistic(
                bits, y, w, selected=(*selected, candidate),
                center=center, ridge=ridge)
            if trial.aic < best_aic:
                best_aic = trial.aic
                best_id = candidate
        if best_id is None:
            break
        selected.append(best_id)
    return tuple(sorted(selected))


def segment_scores(model: RegressionModel) -> dict[int, float]:
    """Importance scores: the signed coefficient of each selected segment."""
    return {segment_id: model.coefficients[segment_id]
            for segment_id in model.segment_ids}


def fidelity_errors(model: RegressionModel, counterfactuals) -> tuple[float, ...]:
    """Per-counterfactual |predicted - observed| probability gap."""
    return tuple(abs(model.predict(c.bits) - c.probability)
                 for c in counterfactuals)


def find_overdetermination(model: RegressionModel,
                           sufficiency_threshold: float = SUFFICIENCY_THRESHOLD,
                           ) -> Overdetermination:
    """Segments whose lone presence forces p past the threshold.

    Membership is strict: intercept + w_i > logit(threshold). With the
    default 0.99 the margin is ln(99), about 4.6.
    """
    margin = logit(sufficiency_threshold)
    ids = tuple(segment_id for segment_id in model.segment_ids
                if model.intercept + model.coefficients[segment_id] > margin)
    return Overdetermination(segment_ids=ids, threshold=sufficiency_threshold)


def classify_causal_roles(model: RegressionModel,
                          sufficiency_threshold: float = SUFFICIENCY_THRESHOLD,
                          ) -> tuple[int, ...]:
    """Segments that are necessary but individually insufficient.

    Necessary: without the segment no assignment of the others reaches
    the threshold, i.e. intercept + sum of the other positive
    coefficients stays <= logit(threshold). Insufficient: the segment
    alone stays <= logit(threshold).
    """
    margin = logit(sufficiency_threshold)
    positive_sum = sum(max(w, 0.0) for w in model.coefficients.values())
    out = []
    for segment_id in model.segment_ids:
        weight = model.coefficients[segment_id]
        without = model.intercept + positive_sum - max(weight, 0.0)
        alone = model.intercept + weight
        if without <= margin and alone <= margin:
            out.append(segment_id)
    return tuple(out)
