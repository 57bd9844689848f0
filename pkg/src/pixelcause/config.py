"""Run configuration: parameter surface, file parsing, validation.

Configuration files come in two flat formats: `key = value` lines with
Python literal values, or a single JSON object. Keys are the engine's
canonical parameter names; unknown keys are rejected rather than
ignored so typos fail loudly. ``resolved_config.json`` written next to
run artifacts reloads to an equivalent configuration.

Pixel-count parameters (``min_seg_size``, ``min_seg_increment``) are
quoted for a 256x256 canvas and are rescaled proportionally to the
actual image area at run time.
"""

import ast
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .regression import RIDGE_LAMBDA
from .segmentation import SegmentationParams

REFERENCE_AREA = 256 * 256

CASE_STUDIES = ("Medical", "Synthetic")
SEGMENT_TYPES = {"Augmented_GAN": "augmented",
                 "Thresholding": "thresholding",
                 "Felzenszwalb": "felzenszwalb"}
INFILL_SOURCES = {"GAN": "contrast", "black": "black"}
THRESHOLD_METHODS = ("manual", "multi-otsu")


@dataclass(frozen=True)
class RunConfig:
    """Engine parameters with their documented defaults.

    Boolean switches for features the engine does not implement
    (polynomial and interaction terms, intercept-free fits, extra
    tabular features, whole-image segment grids) are accepted only at
    their default values; asking for the unimplemented behaviour is a
    configuration error, not a silent fallback.
    """

    case_study: str = "Medical"
    max_predictors: int = 6
    num_samples: int = 1000
    regression_type: str = "logistic"
    logistic_regularise: bool = False
    score_type: str = "aic"
    apply_counterfactual_weights: bool = True
    counterfactual_weight: float = 200.0
    binary_decision_boundary: float = 0.5
    no_polynomimals_no_interactions: bool = True
    interactions_only: bool = True
    no_intercept: bool = False
    centering: bool = True
    include_features: bool = False
    include_features_list: tuple = ()
    sufficiency_threshold: float = 0.99
    image_infill: str = "GAN"
    image_all_segments: bool = False
    threshold_method: str = "manual"
    image_use_old_synthetic: bool = False
    image_counterfactual_interactions: bool = False
    image_segment_type: str = "Augmented_GAN"
    max_segments_in_counterfactual: int = 4
    min_segs_created_for_Augmented_GAN: int = 4
    min_seg_size: int = 250
    min_seg_increment: int = 25
    image_classes: tuple = ("normal", "effusion")
    seed: int = 0
    manual_threshold_high: float = 0.35
    manual_threshold_low: float = 0.15
    felzenszwalb_scale: float = 50.0
    felzenszwalb_sigma: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "include_features_list",
                           tuple(self.include_features_list))
        object.__setattr__(self, "image_classes", tuple(self.image_classes))
        _validate(self)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _validate(c: RunConfig) -> None:
    _require(c.case_study in CASE_STUDIES,
             f"case_study must be one of {CASE_STUDIES}, got {c.case_study!r}")
    _require(_integer(c.max_predictors) and c.max_predictors >= 0,
             f"max_predictors must be a non-negative integer, got {c.max_predictors!r}")
    _require(_integer(c.num_samples) and c.num_samples >= 1,
             f"num_samples must be a positive integer, got {c.num_samples!r}")
    _require(c.regression_type == "logistic",
             f"only regression_type = 'logistic' is supported, got {c.regression_type!r}")
    _require(c.score_type == "aic",
             f"only score_type = 'aic' is supported, got {c.score_type!r}")
    for name in ("logistic_regularise", "apply_counterfactual_weights",
                 "no_polynomimals_no_interactions", "interactions_only",
                 "no_intercept", "centering", "include_features",
                 "image_all_segments", "image_use_old_synthetic",
                 "image_counterfactual_interactions"):
        _require(isinstance(getattr(c, name), bool),
                 f"{name} must be a boolean, got {getattr(c, name)!r}")
    _require(_number(c.counterfactual_weight) and c.counterfactual_weight > 0,
             f"counterfactual_weight must be positive, got {c.counterfactual_weight!r}")
    _require(_number(c.binary_decision_boundary)
             and 0.0 < c.binary_decision_boundary < 1.0,
             "binary_decision_boundary must lie in (0, 1), got "
             f"{c.binary_decision_boundary!r}")
    _require(c.no_polynomimals_no_interactions,
             "polynomial/interaction terms are not implemented; "
             "no_polynomimals_no_interactions must stay True")
    _require(not c.no_intercept,
             "intercept-free fits are not implemented; no_intercept must stay False")
    _require(not c.include_features and not c.include_features_list,
             "extra tabular features are not implemented; include_features "
             "must stay False with an empty include_features_list")
    _require(not c.image_all_segments,
             "image_all_segments = True is not implemented")
    _require(not c.image_use_old_synthetic,
             "image_use_old_synthetic = True is not implemented")
    _require(not c.image_counterfactual_interactions,
             "image_counterfactual_interactions = True is not implemented")
    _require(_number(c.sufficiency_threshold)
             and 0.0 < c.sufficiency_threshold < 1.0,
             f"sufficiency_threshold must lie in (0, 1), got {c.sufficiency_threshold!r}")
    _require(c.image_infill in INFILL_SOURCES,
             f"image_infill must be one of {tuple(INFILL_SOURCES)}, got {c.image_infill!r}")
    _require(c.threshold_method in THRESHOLD_METHODS,
             f"threshold_method must be one of {THRESHOLD_METHODS}, got {c.threshold_method!r}")
    _require(c.image_segment_type in SEGMENT_TYPES,
             f"image_segment_type must be one of {tuple(SEGMENT_TYPES)}, "
             f"got {c.image_segment_type!r}")
    _require(_integer(c.max_segments_in_counterfactual)
             and c.max_segments_in_counterfactual >= 1,
             "max_segments_in_counterfactual must be a positive integer, got "
             f"{c.max_segments_in_counterfactual!r}")
    _require(_integer(c.min_segs_created_for_Augmented_GAN)
             and c.min_segs_created_for_Augmented_GAN >= 0,
             "min_segs_created_for_Augmented_GAN must be a non-negative "
             f"integer, got {c.min_segs_created_for_Augmented_GAN!r}")
    _require(_integer(c.min_seg_size) and c.min_seg_size >= 1,
             f"min_seg_size must be a positive integer, got {c.min_seg_size!r}")
    _require(_integer(c.min_seg_increment) and c.min_seg_increment >= 1,
             f"min_seg_increment must be a positive integer, got {c.min_seg_increment!r}")
    _require(len(c.image_classes) == 2
             and all(isinstance(s, str) and s for s in c.image_classes)
             and c.image_classes[0] != c.image_classes[1],
             f"image_classes must be two distinct class names, got {c.image_classes!r}")
    _require(_integer(c.seed) and c.seed >= 0,
             f"seed must be a non-negative integer, got {c.seed!r}")
    _require(_number(c.manual_threshold_high) and _number(c.manual_threshold_low)
             and 0.0 <= c.manual_threshold_low <= c.manual_threshold_high <= 1.0
             and c.manual_threshold_high > 0.0,
             "manual thresholds need 0 <= low <= high <= 1 with high > 0, got "
             f"low={c.manual_threshold_low!r} high={c.manual_threshold_high!r}")
    _require(_number(c.felzenszwalb_scale) and c.felzenszwalb_scale > 0,
             f"felzenszwalb_scale must be positive, got {c.felzenszwalb_scale!r}")
    _require(_number(c.felzenszwalb_sigma) and c.felzenszwalb_sigma >= 0,
             f"felzenszwalb_sigma must be non-negative, got {c.felzenszwalb_sigma!r}")


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _integer(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


_FIELD_NAMES = tuple(f.name for f in fields(RunConfig))


def config_from_mapping(mapping) -> RunConfig:
    """Build a validated RunConfig, rejecting unknown keys."""
    unknown = sorted(set(mapping) - set(_FIELD_NAMES))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    try:
        return RunConfig(**dict(mapping))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_value(text: str):
    """Python literal if it parses, bare string otherwise."""
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_flat_config(text: str) -> dict:
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key in {raw!r}")
        if key in mapping:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        mapping[key] = parse_value(value)
    return mapping


def load_mapping(path) -> dict:
    """Raw key/value mapping from a JSON or key = value config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            mapping = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(mapping, dict):
            raise ConfigError(f"{path} must contain a JSON object")
        return mapping
    return parse_flat_config(text)


def load_config(path) -> RunConfig:
    """Read a configuration file (JSON object or key = value lines)."""
    return config_from_mapping(load_mapping(path))


def resolved_dict(config: RunConfig) -> dict:
    out = {}
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def save_resolved_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(resolved_dict(config), fh, sort_keys=True, indent=1)
        fh.write("\n")


# --- translation to engine settings ----------------------------------------

def scaled_pixel_count(value: int, shape) -> int:
    """Rescale a 256x256-reference pixel count to the image's area."""
    h, w = shape
    return max(1, int(round(value * (h * w) / REFERENCE_AREA)))


def segmentation_params_for(config: RunConfig, shape) -> SegmentationParams:
    manual = config.threshold_method == "manual"
    return SegmentationParams(
        min_num_low_segments=config.min_segs_created_for_Augmented_GAN,
        min_seg_size=scaled_pixel_count(config.min_seg_size, shape),
        seg_size_increment=scaled_pixel_count(config.min_seg_increment, shape),
        threshold_method=config.threshold_method,
        t_high=config.manual_threshold_high if manual else None,
        t_low=config.manual_threshold_low if manual else None,
        felzenszwalb_scale=config.felzenszwalb_scale,
        felzenszwalb_sigma=config.felzenszwalb_sigma,
    )


def engine_settings(config: RunConfig, shape) -> dict:
    """Keyword arguments for explain() equivalent to this configuration."""
    weight = (config.counterfactual_weight
              if config.apply_counterfactual_weights else 1.0)
    return {
        "boundary": config.binary_decision_boundary,
        "segmentation_mode": SEGMENT_TYPES[config.image_segment_type],
        "segmentation_params": segmentation_params_for(config, shape),
        "infill": INFILL_SOURCES[config.image_infill],
        "max_counterfactual_size": config.max_segments_in_counterfactual,
        "num_samples": config.num_samples,
        "counterfactual_weight": float(weight),
        "max_predictors": config.max_predictors,
        "sufficiency_threshold": config.sufficiency_threshold,
        "center": config.centering,
        "ridge": RIDGE_LAMBDA if config.logistic_regularise else 0.0,
    }
