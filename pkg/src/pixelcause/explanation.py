"""Assembly of the full contrastive explanation for one image pair.

``explain`` runs the pipeline in order: segment the image against its
contrast, perturb segment subsets, find the minimal class-flipping
replacements, fit the weighted logistic equation on the perturbation
outcomes, then read importance scores, overdetermination, causal roles
and fidelity errors off the fitted model. Export helpers serialise the
result as JSON, a text report, and a per-pixel saliency map.
"""

import json
from dataclasses import dataclass

import numpy as np

from .classifiers import DECISION_BOUNDARY, classify
from .errors import NoConvergence, NotPositiveClass
from .imaging import render_saliency
from .perturbation import (MAX_COUNTERFACTUAL_SIZE, Counterfactual,
                           PerturbationRecord, compose_image,
                           enumerate_perturbations, evaluate_dataset,
                           find_counterfactuals, mark_counterfactuals)
from .regression import (MAX_PREDICTORS, SUFFICIENCY_THRESHOLD,
                         Overdetermination, RegressionModel,
                         classify_causal_roles, fidelity_errors,
                         find_overdetermination, fit_weighted_logistic,
                         logit, segment_scores, stepwise_select)
from .segmentation import SegmentMap, SegmentationParams, segment

COUNTERFACTUAL_WEIGHT = 200.0


@dataclass(frozen=True)
class GoodnessOfFit:
    """AIC of the causal equation plus its fidelity error envelope.

    The error fields are None when no counterfactual exists to measure
    against.
    """

    aic: float
    max_fidelity_error: float | None
    mean_fidelity_error: float | None


@dataclass(frozen=True)
class Explanation:
    """Everything the engine has to say about one prediction.

    ``scores`` maps selected segments to signed importance (absence
    means not selected); ``counterfactuals`` lists minimal segment
    replacements that flip the class; ``fidelity`` has one error per
    counterfactual; ``records`` keeps the full perturbation dataset the
    equation was fitted on (minus the all-present anchor row).
    """

    scores: dict[int, float]
    counterfactuals: tuple[Counterfactual, ...]
    model: RegressionModel
    overdetermination: Overdetermination
    fidelity: tuple[float, ...]
    necessary_insufficient: tuple[int, ...]
    goodness_of_fit: GoodnessOfFit
    segments: SegmentMap
    records: tuple[PerturbationRecord, ...]
    original_probability: float
    original_label: str
    boundary: float
    infill: str
    warnings: tuple[str, ...]


def explain(x, x_prime, m,
            boundary: float = DECISION_BOUNDARY,
            segmentation_mode: str = "augmented",
            segmentation_params: SegmentationParams | None = None,
            infill: str = "contrast",
            max_counterfactual_size: int = MAX_COUNTERFACTUAL_SIZE,
            num_samples: int | None = None,
            counterfactual_weight: float = COUNTERFACTUAL_WEIGHT,
            max_predictors: int = MAX_PREDICTORS,
            sufficiency_threshold: float = SUFFICIENCY_THRESHOLD,
            center: bool = True,
            ridge: float = 0.0,
            workers: int = 1) -> Explanation:
    """Explain why classifier `m` calls `x` positive rather than like
    `x_prime`.

    The image must sit on the positive side of the decision boundary;
    NotPositiveClass is raised otherwise. Counterfactual rows enter the
    regression with `counterfactual_weight`, every other row (and the
    all-segments-present anchor) with weight 1. A missing class flip or
    a non-converged fit is reported through ``warnings``, not raised.
    """
    original = classify(m, x, boundary)
    if original.probability < boundary:
        raise NotPositiveClass(
            f"image is {original.label} (p = {original.probability:.4g}, "
            f"boundary {boundary:g}); explanations target the positive class")

    segments = segment(x, x_prime, m, params=segmentation_params,
                       mode=segmentation_mode, boundary=boundary)
    vectors = enumerate_perturbations(segments.n,
                                      max_size=max_counterfactual_size,
                                      num_samples=num_samples)
    records = evaluate_dataset(m, x, x_prime, segments, vectors,
                               infill=infill, workers=workers)

    def probe(bits):
        image = compose_image(x, x_prime, segments, bits, infill)
        return classify(m, image, boundary).probability

    counterfactuals = tuple(find_counterfactuals(
        records, original.probability, boundary, prober=probe))
    records = tuple(mark_counterfactuals(records, counterfactuals))

    anchor = (1,) * segments.n
    rows = [anchor] + [r.bits for r in records]
    response = [original.probability] + [r.probability for r in records]
    weights = [1.0] + [counterfactual_weight if r.is_counterfactual else 1.0
                       for r in records]

    selected = stepwise_select(rows, response, weights,
                               max_predictors=max_predictors,
                               center=center, ridge=ridge)
    model = fit_weighted_logistic(rows, response, weights, selected=selected,
                                  center=center, ridge=ridge)
    fidelity = fidelity_errors(model, counterfactuals)

    warnings = []
    if not counterfactuals:
        warnings.append(
            "NoCounterfactualFound: no replacement of up to "
            f"{max_counterfactual_size} segments flips the class")
    if not model.converged:
        warnings.append(f"{NoConvergence.__name__}: fit stopped after "
                        f"{model.n_iterations} iterations above tolerance")
    if model.ridged:
        warnings.append("RidgeFallback: fit stabilised with a 1e-06 ridge")

    goodness = GoodnessOfFit(
        aic=model.aic,
        max_fidelity_error=max(fidelity) if fidelity else None,
        mean_fidelity_error=float(np.mean(fidelity)) if fidelity else None)
    return Explanation(
        scores=segment_scores(model),
        counterfactuals=counterfactuals,
        model=model,
        overdetermination=find_overdetermination(model, sufficiency_threshold),
        fidelity=fidelity,
        necessary_insufficient=classify_causal_roles(model,
                                                     sufficiency_threshold),
        goodness_of_fit=goodness,
        segments=segments,
        records=records,
        original_probability=original.probability,
        original_label=original.label,
        boundary=boundary,
        infill=infill,
        warnings=tuple(warnings),
    )


def saliency_map(explanation: Explanation) -> np.ndarray:
    """Per-pixel signed importance; unselected segments and background 0."""
    full = {segment_id: explanation.scores.get(segment_id, 0.0)
            for segment_id in explanation.segments.ids}
    return render_saliency(full, explanation.segments.labels)


def segment_name(segment_id: int) -> str:
    return f"Seg{segment_id:02d}"


def explanation_to_dict(explanation: Explanation) -> dict:
    e = explanation
    return {
        "original": {
            "probability": e.original_probability,
            "label": e.original_label,
            "boundary": e.boundary,
        },
        "infill": e.infill,
        "segments": {
            "count": e.segments.n,
            "pixel_counts": list(e.segments.pixel_counts),
            "provenance": list(e.segments.provenance),
        },
        "importance_scores": [
            {"segment": segment_id, "score": e.scores[segment_id]}
            for segment_id in sorted(e.scores)
        ],
        "counterfactuals": [
            {
                "replaced": list(c.replaced),
                "size": c.size,
                "probability": c.probability,
                "fidelity_error": error,
            }
            for c, error in zip(e.counterfactuals, e.fidelity)
        ],
        "regression": {
            "intercept": e.model.intercept,
            "coefficients": [
                {"segment": segment_id, "weight": e.model.coefficients[segment_id]}
                for segment_id in e.model.segment_ids
            ],
            "aic": e.model.aic,
            "log_likelihood": e.model.log_likelihood,
            "n_iterations": e.model.n_iterations,
            "converged": e.model.converged,
            "ridged": e.model.ridged,
        },
        "overdetermination": {
            "segment_ids": list(e.overdetermination.segment_ids),
            "overdetermined": e.overdetermination.overdetermined,
            "sufficiency_threshold": e.overdetermination.threshold,
        },
        "necessary_insufficient": list(e.necessary_insufficient),
        "goodness_of_fit": {
            "aic": e.goodness_of_fit.aic,
            "max_fidelity_error": e.goodness_of_fit.max_fidelity_error,
            "mean_fidelity_error": e.goodness_of_fit.mean_fidelity_error,
        },
        "warnings": list(e.warnings),
    }


def save_explanation_json(explanation: Explanation, path) -> None:
    with open(path, "w") as fh:
        json.dump(explanation_to_dict(explanation), fh, sort_keys=True, indent=1)
        fh.write("\n")


def format_report(explanation: Explanation) -> str:
    """Human-readable account of the explanation, one block per part."""
    e = explanation
    n_high = sum(1 for p in e.segments.provenance if p == "high_intensity")
    n_low = e.segments.n - n_high
    margin = logit(e.overdetermination.threshold)

    lines = ["Contrastive counterfactual explanation",
             "======================================",
             f"Prediction: {e.original_label} "
             f"(p = {e.original_probability:.4g}, boundary {e.boundary:g})",
             f"Segments: {e.segments.n} "
             f"({n_high} high-intensity, {n_low} low-intensity)",
             ""]

    terms = [f"{e.model.intercept:+.4g}"]
    terms += [f"{e.model.coefficients[i]:+.4g}*{segment_name(i)}"
              for i in e.model.segment_ids]
    lines += [f"Causal equation (AIC {e.model.aic:.4g}):",
              "  p = sigmoid(" + " ".join(terms) + ")",
              ""]

    lines.append("Segment importance scores:")
    if e.scores:
        ranked = sorted(e.scores.items(), key=lambda kv: (-kv[1], kv[0]))
        lines += [f"  {segment_name(i)}  {score:+.4g}" for i, score in ranked]
    else:
        lines.append("  none selected")
    lines.append("")

    source = "contrast-image values" if e.infill == "contrast" else "black"
    lines.append(f"Counterfactuals (replace the listed segments with {source}):")
    if e.counterfactuals:
        for j, (c, error) in enumerate(zip(e.counterfactuals, e.fidelity), 1):
            names = ", ".join(segment_name(i) for i in c.replaced)
            lines.append(f"  [{j}] {names} -> p = {c.probability:.4g} "
                         f"(fidelity error {error:.4g})")
    else:
        lines.append("  none found")
    lines.append("")

    over = e.overdetermination
    if over.overdetermined:
        names = ", ".join(segment_name(i) for i in over.segment_ids)
        lines.append(f"Overdetermination: {names} are each singly sufficient "
                     f"(intercept + weight > {margin:.3g})")
    elif over.segment_ids:
        lines.append(f"Sufficient alone: {segment_name(over.segment_ids[0])} "
                     "(no overdetermination)")
    else:
        lines.append("Overdetermination: none")

    if e.necessary_insufficient:
        names = ", ".join(segment_name(i) for i in e.necessary_insufficient)
        lines.append(f"Necessary but insufficient: {names}")
    else:
        lines.append("Necessary but insufficient: none")

    good = e.goodness_of_fit
    if good.max_fidelity_error is None:
        lines.append(f"Goodness of fit: AIC {good.aic:.4g}; "
                     "no counterfactuals to measure fidelity against")
    else:
        lines.append(f"Goodness of fit: AIC {good.aic:.4g}; fidelity error "
                     f"max {good.max_fidelity_error:.4g}, "
                     f"mean {good.mean_fidelity_error:.4g}")

    lines.append("Warnings: " + ("; ".join(e.warnings) if e.warnings else "none"))
    return "\n".join(lines) + "\n"


def save_report(explanation: Explanation, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_report(explanation))
