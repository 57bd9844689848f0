"""Contrast-augmented segmentation.

Builds the segment map a contrastive explanation runs over. Strong
differences between the image and its contrast become segments directly;
weak differences are refined into texture segments of the image itself.
When no single segment flips the classification on its own, the minimum
segment size for the weak band is escalated stepwise so coarser segments
get a chance to, stopping once the weak segments run out.
"""

import colorsys
import json
from dataclasses import dataclass

import numpy as np

from .classifiers import DECISION_BOUNDARY, classify
from .errors import (DegenerateHistogram, InputError, NoSegmentsFound,
                     UnknownSegmentId)
from .imaging import (HIST_BINS, connected_components, difference_masks, dilate,
                      erode, felzenszwalb, image_histogram, multi_otsu, rle_decode,
                      rle_encode, validate_image)

HIGH_INTENSITY = "high_intensity"
LOW_INTENSITY = "low_intensity"

# hard cap on segment count, keeps the up-to-4-replacement enumeration small
MAX_SEGMENTS = 20

# reference density: 250-pixel minimum segment at 256x256
REFERENCE_MIN_SEG_SIZE = 250
REFERENCE_AREA = 256 * 256

MODES = ("augmented", "thresholding", "felzenszwalb")


def auto_min_seg_size(shape) -> int:
    """Scale the reference minimum segment size to the image area."""
    h, w = shape
    return max(1, int(round(REFERENCE_MIN_SEG_SIZE * (h * w) / REFERENCE_AREA)))


@dataclass(frozen=True)
class SegmentationParams:
    min_num_low_segments: int = 4
    min_seg_size: int | None = None  # None scales the 250 @ 256x256 default by area
    seg_size_increment: int = 25
    threshold_method: str = "multi-otsu"
    t_high: float | None = None
    t_low: float | None = None
    felzenszwalb_scale: float = 50.0
    felzenszwalb_sigma: float = 0.8
    erosion_radius: int = 1
    max_segments: int = MAX_SEGMENTS

    def __post_init__(self):
        if self.min_seg_size is not None and self.min_seg_size < 1:
            raise InputError("min_seg_size must be >= 1")
        if self.seg_size_increment < 1:
            raise InputError("seg_size_increment must be >= 1")
        if self.threshold_method not in ("multi-otsu", "manual"):
            raise InputError(f"unknown threshold method {self.threshold_method!r}")
        if self.threshold_method == "manual":
            if self.t_high is None or self.t_low is None:
                raise InputError("manual thresholds need t_high and t_low")
            if not 0.0 <= self.t_low <= self.t_high:
                raise InputError("need 0 <= t_low <= t_high")
        if self.erosion_radius < 0:
            raise InputError("erosion_radius must be >= 0")
        if self.max_segments < 1:
            raise InputError("max_segments must be >= 1")


@dataclass(frozen=True, eq=False)
class SegmentMap:
    """Label image plus per-segment bookkeeping.

    labels holds 0 for background and 1..n for segments; provenance and
    pixel_counts are indexed by segment id - 1. The same geometry reads
    against both the image and its contrast, so one map serves both
    sides of every composition.
    """

    labels: np.ndarray
    n: int
    provenance: tuple[str, ...]
    pixel_counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.provenance) != self.n or len(self.pixel_counts) != self.n:
            raise InputError("per-segment metadata length != n")
        counts = np.bincount(self.labels.ravel(), minlength=self.n + 1)
        if self.labels.min() < 0 or self.labels.max() > self.n:
            raise InputError("label ids out of range")
        if self.n and (counts[1:] == 0).any():
            raise InputError("empty segment id")
        if tuple(int(c) for c in counts[1:self.n + 1]) != tuple(self.pixel_counts):
            raise InputError("pixel_counts disagree with labels")

    @property
    def ids(self):
        return range(1, self.n + 1)

    def mask(self, segment_id: int) -> np.ndarray:
        if not 1 <= segment_id <= self.n:
            raise UnknownSegmentId(f"segment {segment_id} not in 1..{self.n}")
        return self.labels == segment_id


def determine_thresholds(x, x_prime, method="multi-otsu", t_high=None, t_low=None):
    """Pick the strong/weak difference thresholds (t_high, t_low).

    multi-otsu maximizes between-class variance of the |x - x_prime|
    histogram split into 3 classes; manual echoes the given pair.
    """
    x = validate_image(x)
    x_prime = validate_image(x_prime, "contrast image")
    if x.shape != x_prime.shape:
        raise InputError(f"image {x.shape} != contrast {x_prime.shape}")
    if method == "manual":
        if t_high is None or t_low is None:
            raise InputError("manual thresholds need t_high and t_low")
        if not 0.0 <= t_low <= t_high:
            raise InputError("need 0 <= t_low <= t_high")
        return float(t_high), float(t_low)
    if method != "multi-otsu":
        raise InputError(f"unknown threshold method {method!r}")
    hist = image_histogram(np.abs(x - x_prime), bins=HIST_BINS)
    lo, hi = multi_otsu(hist, classes=3)
    return hi, lo


def _filter_components(labels, n, min_size):
    """Drop components below min_size, relabeling survivors 1..k in id order."""
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    keep = np.flatnonzero(counts[1:] >= min_size) + 1
    mapping = np.zeros(n + 1, dtype=np.int64)
    mapping[keep] = np.arange(1, len(keep) + 1)
    return mapping[labels], len(keep)


def create_high_intensity_segments(d_high, min_seg_size):
    """Connected components of the strong-difference mask, small ones dropped."""
    labels, n = connected_components(d_high, connectivity=8)
    return _filter_components(labels, n, min_seg_size)


def create_low_intensity_segments(d_low, x, min_seg_size, erosion_radius=1,
                                  scale=50.0, sigma=0.8):
    """Texture segments of x inside the eroded weak-difference band."""
    d_low = np.asarray(d_low, dtype=bool)
    x = validate_image(x)
    roi = erode(d_low, radius=erosion_radius) if erosion_radius else d_low
    if not roi.any():
        return np.zeros(x.shape, dtype=np.int64), 0
    return felzenszwalb(x, scale=scale, sigma=sigma, min_size=min_seg_size, roi=roi)


def count_single_segment_counterfactuals(m, x, x_prime, segments,
                                         boundary=DECISION_BOUNDARY):
    """How many segments flip the class when replaced alone from the contrast."""
    if segments.n == 0:
        raise InputError("segment map is empty")
    return _count_flips(m, x, x_prime, segments.labels, segments.n, boundary)


def _count_flips(m, x, x_prime, labels, n, boundary):
    original = classify(m, x, boundary).label
    flips = 0
    for seg_id in range(1, n + 1):
        composed = np.where(labels == seg_id, x_prime, x)
        if classify(m, composed, boundary).label != original:
            flips += 1
    return flips


def _combine(high_labels, n_high, low_labels, n_low):
    labels = high_labels.copy()
    low_region = (low_labels > 0) & (high_labels == 0)
    labels[low_region] = low_labels[low_region] + n_high
    return labels, n_high + n_low


def _merge_to_cap(labels, n, provenance, max_segments):
    """Merge smallest segments into their largest neighbor until n fits."""
    labels = labels.copy()
    provenance = list(provenance)
    ids = list(range(1, n + 1))
    counts = {i: int(c) for i, c in
              zip(ids, np.bincount(labels.ravel(), minlength=n + 1)[1:])}
    while len(ids) > max_segments:
        small = min(ids, key=lambda i: (counts[i], i))
        mask = labels == small
        ring = dilate(mask, 1) & ~mask
        neighbors = {int(v) for v in np.unique(labels[ring])} - {0, small}
        pool = neighbors or (set(ids) - {small})
        target = min(pool, key=lambda i: (-counts[i], i))
        labels[mask] = target
        counts[target] += counts.pop(small)
        ids.remove(small)
    mapping = np.zeros(n + 1, dtype=np.int64)
    new_prov = []
    for new_id, old_id in enumerate(ids, start=1):
        mapping[old_id] = new_id
        new_prov.append(provenance[old_id - 1])
    return mapping[labels], len(ids), tuple(new_prov)


def _build_map(labels, n, provenance, max_segments):
    if n > max_segments:
        labels, n, provenance = _merge_to_cap(labels, n, provenance, max_segments)
    counts = np.bincount(labels.ravel(), minlength=n + 1)[1:n + 1]
    return SegmentMap(labels=labels, n=n, provenance=tuple(provenance),
                      pixel_counts=tuple(int(c) for c in counts))


def contrast_augmented_segmentation(x, x_prime, m, params=None,
                                    boundary=DECISION_BOUNDARY,
                                    include_low=True) -> SegmentMap:
    """Full segmentation pipeline over an image and its contrast.

    Strong-difference components seed the map; weak-difference texture
    segments augment it. While no single segment is a counterfactual on
    its own and more than min_num_low_segments weak segments exist, the
    weak band is resegmented with min_seg_size raised by
    seg_size_increment. Raises NoSegmentsFound when nothing survives.
    """
    params = params or SegmentationParams()
    x = validate_image(x)
    x_prime = validate_image(x_prime, "contrast image")
    if x.shape != x_prime.shape:
        raise InputError(f"image {x.shape} != contrast {x_prime.shape}")
    min_seg_size = (params.min_seg_size if params.min_seg_size is not None
                    else auto_min_seg_size(x.shape))
    try:
        t_high, t_low = determine_thresholds(
            x, x_prime, params.threshold_method, params.t_high, params.t_low)
    except DegenerateHistogram as exc:
        raise NoSegmentsFound(
            "image and contrast are too alike to threshold") from exc
    d_high, d_low = difference_masks(x, x_prime, t_high, t_low)
    high_labels, n_high = create_high_intensity_segments(d_high, min_seg_size)

    def low_segments(size):
        if not include_low:
            return np.zeros(x.shape, dtype=np.int64), 0
        return create_low_intensity_segments(
            d_low, x, size, erosion_radius=params.erosion_radius,
            scale=params.felzenszwalb_scale, sigma=params.felzenszwalb_sigma)

    low_labels, n_low = low_segments(min_seg_size)
    labels, n = _combine(high_labels, n_high, low_labels, n_low)
    n_counterfactual = _count_flips(m, x, x_prime, labels, n, boundary) if n else 0
    while n_counterfactual == 0 and params.min_num_low_segments < n_low:
        min_seg_size += params.seg_size_increment
        low_labels, n_low = low_segments(min_seg_size)
        labels, n = _combine(high_labels, n_high, low_labels, n_low)
        n_counterfactual = _count_flips(m, x, x_prime, labels, n, boundary) if n else 0
    if n == 0:
        raise NoSegmentsFound(
            f"no segment of at least {min_seg_size} pixels in either band")
    provenance = (HIGH_INTENSITY,) * n_high + (LOW_INTENSITY,) * n_low
    return _build_map(labels, n, provenance, params.max_segments)


def felzenszwalb_segmentation(x, params=None) -> SegmentMap:
    """Plain texture segmentation of x alone, same output contract."""
    params = params or SegmentationParams()
    x = validate_image(x)
    min_seg_size = (params.min_seg_size if params.min_seg_size is not None
                    else auto_min_seg_size(x.shape))
    labels, n = felzenszwalb(x, scale=params.felzenszwalb_scale,
                             sigma=params.felzenszwalb_sigma,
                             min_size=min_seg_size)
    if n == 0:
        raise NoSegmentsFound(f"no segment of at least {min_seg_size} pixels")
    return _build_map(labels, n, (LOW_INTENSITY,) * n, params.max_segments)


def segment(x, x_prime, m, params=None, mode="augmented",
            boundary=DECISION_BOUNDARY) -> SegmentMap:
    """Dispatch between the three segmentation modes."""
    if mode not in MODES:
        raise InputError(f"unknown segmentation mode {mode!r}")
    if mode == "felzenszwalb":
        return felzenszwalb_segmentation(x, params)
    return contrast_augmented_segmentation(
        x, x_prime, m, params, boundary, include_low=(mode == "augmented"))


def segment_map_to_dict(segments: SegmentMap) -> dict:
    h, w = segments.labels.shape
    return {
        "width": w,
        "height": h,
        "n": segments.n,
        "segments": [
            {"id": i, "provenance": segments.provenance[i - 1],
             "pixel_count": segments.pixel_counts[i - 1],
             "rle": rle_encode(segments.labels == i)}
            for i in segments.ids
        ],
    }


def segment_map_from_dict(d) -> SegmentMap:
    labels = np.zeros((d["height"], d["width"]), dtype=np.int64)
    provenance = []
    counts = []
    for entry in d["segments"]:
        mask = rle_decode(entry["rle"], d["height"], d["width"])
        labels[mask] = entry["id"]
        provenance.append(entry["provenance"])
        counts.append(entry["pixel_count"])
    return SegmentMap(labels=labels, n=d["n"], provenance=tuple(provenance),
                      pixel_counts=tuple(counts))


def save_segment_map_json(segments: SegmentMap, path) -> None:
    with open(path, "w") as fh:
        json.dump(segment_map_to_dict(segments), fh, sort_keys=True)
        fh.write("\n")


def load_segment_map_json(path) -> SegmentMap:
    with open(path) as fh:
        return segment_map_from_dict(json.load(fh))


def segment_colors(n: int) -> np.ndarray:
    """Deterministic distinct RGB rows for ids 1..n, black for background."""
    table = np.zeros((n + 1, 3), dtype=np.uint8)
    for i in range(1, n + 1):
        hue = (i * 0.61803398875) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
        table[i] = (round(r * 255), round(g * 255), round(b * 255))
    return table


def save_segment_map_png(segments: SegmentMap, path) -> None:
    from PIL import Image as PILImage
    rgb = segment_colors(segments.n)[segments.labels]
    PILImage.fromarray(rgb, mode="RGB").save(path, format="PNG")
