"""Contrastive counterfactual explanations for black-box image classifiers.

The package explains a classifier's positive prediction on an image by
contrasting it with a second image of the negative class: the pixel
difference is segmented, segments are swapped in from the contrast
image to probe the classifier, minimal class-flipping segment sets are
collected, and a weighted logistic fit over the probe results yields
per-segment importance scores, sufficiency findings, and fidelity
errors. `explain` runs the whole pipeline; the `pixelcause` command
line wraps it together with dataset generation, classifier training,
and saliency evaluation.
"""

from .classifiers import (DeskClassifier, PlantedRegionClassifier, Prediction,
                          SubprocessClassifier, classify, load_classifier,
                          save_classifier, train_desk_classifier)
from .config import RunConfig, engine_settings, load_config
from .errors import (ClassifierError, ConfigError, InputError,
                     NoSegmentsFound, NotPositiveClass, PixelCauseError)
from .evaluation import (ImageScore, PointingGameResult, aggregate, iou,
                         pointing_game, random_saliency, threshold_sweep)
from .imaging import load_png, save_png
from .explanation import (Explanation, explain, explanation_to_dict,
                          format_report, saliency_map, save_explanation_json,
                          save_report)
from .perturbation import (Counterfactual, PerturbationRecord,
                           compose_image, enumerate_perturbations,
                           evaluate_dataset, find_counterfactuals)
from .regression import (Overdetermination, RegressionModel,
                         classify_causal_roles, find_overdetermination,
                         fit_weighted_logistic, segment_scores,
                         stepwise_select)
from .segmentation import SegmentMap, SegmentationParams, segment
from .synthetic import generate_pair, load_dataset, random_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "ClassifierError", "ConfigError", "Counterfactual", "DeskClassifier",
    "Explanation", "ImageScore", "InputError", "NoSegmentsFound",
    "NotPositiveClass", "Overdetermination", "PerturbationRecord",
    "PixelCauseError", "PlantedRegionClassifier", "PointingGameResult",
    "Prediction", "RegressionModel", "RunConfig", "SegmentMap",
    "SegmentationParams", "SubprocessClassifier", "aggregate", "classify",
    "classify_causal_roles", "compose_image", "engine_settings",
    "enumerate_perturbations", "evaluate_dataset", "explain",
    "explanation_to_dict", "find_counterfactuals", "find_overdetermination",
    "fit_weighted_logistic", "format_report", "generate_pair", "iou",
    "load_classifier", "load_config", "load_dataset", "load_png",
    "pointing_game", "random_dataset", "random_saliency", "saliency_map",
    "save_classifier", "save_dataset", "save_explanation_json", "save_png",
    "save_report", "segment", "segment_scores", "stepwise_select",
    "threshold_sweep", "train_desk_classifier",
]
