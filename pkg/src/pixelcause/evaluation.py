"""Saliency evaluation metrics and batch aggregation.

Two per-image metrics: a multi-target pointing game played on a 7x7
grid of image squares, and intersection-over-union of the thresholded
salient region against annotated targets. Batch helpers aggregate
scores with 95% confidence intervals and emit CSV / JSON / SVG
artifacts.

The pointing game visits squares in descending mean-intensity order and
counts, for every visited square, one hit per target containing it and
one miss per target not containing it, stopping once every target has
been hit at least once. A square can therefore add both a hit and
misses in a single visit; this asymmetry is intentional and kept
as specified rather than smoothed out.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (DimensionMismatch, EmptyTargets, InputError,
                     InsufficientData, ZeroSaliency)

GRID = 7
IOU_THRESHOLD_PCT = 70
SWEEP_PERCENTS = (60, 70, 80, 90)
MODES = ("positive", "absolute")


@dataclass(frozen=True)
class PointingGameResult:
    hits: int
    misses: int

    @property
    def score(self) -> float:
        return self.hits / (self.hits + self.misses)


@dataclass(frozen=True)
class ImageScore:
    """Per-image metric row for the batch CSV."""

    item_id: str
    pointing: PointingGameResult
    iou: float


def _oriented(saliency, mode: str) -> np.ndarray:
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")
    values = np.asarray(saliency, dtype=np.float64)
    if values.ndim != 2:
        raise InputError("saliency map must be 2-D")
    if not np.all(np.isfinite(values)):
        raise InputError("saliency map contains non-finite values")
    return np.abs(values) if mode == "absolute" else np.maximum(values, 0.0)


def _validated_targets(targets, shape) -> list[np.ndarray]:
    masks = [np.asarray(m, dtype=bool) for m in targets]
    if not masks:
        raise EmptyTargets("no annotated target regions")
    for i, mask in enumerate(masks):
        if mask.shape != shape:
            raise DimensionMismatch(
                f"target {i} has shape {mask.shape}, saliency {shape}")
        if not mask.any():
            raise EmptyTargets(f"target {i} covers no pixels")
    return masks


def _grid_bounds(size: int) -> list[int]:
    return [(r * size) // GRID for r in range(GRID + 1)]


def pointing_game(saliency, targets, mode: str = "positive") -> PointingGameResult:
    """Play the multi-target pointing game on the 7x7 square grid.

    Square (r, c) spans rows floor(r*H/7)..floor((r+1)*H/7) and the
    analogous columns, so the grid tiles the image exactly; a target is
    "in" a square when at least one of its pixels lies there. Ties in
    square scores resolve in raster order. Negative saliency is clipped
    to zero unless mode="absolute".
    """
    values = _oriented(saliency, mode)
    masks = _validated_targets(targets, values.shape)
    h, w = values.shape
    if h < GRID or w < GRID:
        raise InputError(f"image {h}x{w} smaller than the {GRID}x{GRID} grid")

    row_bounds, col_bounds = _grid_bounds(h), _grid_bounds(w)
    scores = np.empty((GRID, GRID))
    square_of_pixel = np.empty((h, w), dtype=np.int64)
    for r in range(GRID):
        for c in range(GRID):
            rows = slice(row_bounds[r], row_bounds[r + 1])
            cols = slice(col_bounds[c], col_bounds[c + 1])
            scores[r, c] = values[rows, cols].mean()
            square_of_pixel[rows, cols] = r * GRID + c
    target_squares = [frozenset(np.unique(square_of_pixel[mask]).tolist())
                      for mask in masks]

    order = sorted(range(GRID * GRID),
                   key=lambda sid: (-scores[sid // GRID, sid % GRID], sid))
    hits = misses = 0
    remaining = set(range(len(masks)))
    for sid in order:
        for t_index, squares in enumerate(target_squares):
            if sid in squares:
                hits += 1
                remaining.discard(t_index)
            else:
                misses += 1
        if not remaining:
            break
    return PointingGameResult(hits=hits, misses=misses)


def iou(saliency, targets, threshold_pct: float = IOU_THRESHOLD_PCT,
        mode: str = "positive") -> float:
    """Intersection over union of the salient set with the target union.

    The salient set is every pixel strictly above threshold_pct percent
    of the maximum value, so the score is invariant under positive
    rescaling of the map.
    """
    values = _oriented(saliency, mode)
    masks = _validated_targets(targets, values.shape)
    if not 0 < threshold_pct < 100:
        raise InputError(
            f"threshold_pct must lie in (0, 100), got {threshold_pct}")
    peak = float(values.max())
    if peak <= 0.0:
        raise ZeroSaliency("saliency map has no positive mass")
    salient = values > (threshold_pct / 100.0) * peak
    union = np.logical_or.reduce(masks)
    intersection = int(np.logical_and(salient, union).sum())
    combined = int(np.logical_or(salient, union).sum())
    return intersection / combined


def threshold_sweep(saliency, targets, percents=SWEEP_PERCENTS,
                    mode: str = "positive") -> dict[int, float]:
    """IoU at each intensity threshold percent, lowest first."""
    if not percents:
        raise InputError("no threshold percents given")
    return {int(pct): iou(saliency, targets, threshold_pct=pct, mode=mode)
            for pct in sorted(percents)}


def aggregate(scores) -> tuple[float, float]:
    """Mean and 95% confidence half-width (1.96 * stddev / sqrt(n))."""
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size < 2:
        raise InsufficientData(
            f"aggregate needs at least 2 scores, got {arr.size}")
    half_width = 1.96 * float(arr.std(ddof=1)) / math.sqrt(arr.size)
    return float(arr.mean()), half_width


def random_saliency(shape, seed: int) -> np.ndarray:
    """Uniform noise baseline map for comparisons against real methods."""
    return np.random.default_rng(seed).random(shape)


# --- batch artifacts -------------------------------------------------------

def save_scores_csv(rows, path) -> None:
    rows = list(rows)
    if not rows:
        raise InputError("no per-image scores to write")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "pointing_hits", "pointing_misses",
                         "pointing_score", "iou"])
        for row in rows:
            writer.writerow([row.item_id, row.pointing.hits,
                             row.pointing.misses, repr(row.pointing.score),
                             repr(row.iou)])


def aggregate_scores(rows) -> dict:
    rows = list(rows)
    pointing_mean, pointing_ci = aggregate(r.pointing.score for r in rows)
    iou_mean, iou_ci = aggregate(r.iou for r in rows)
    return {
        "n": len(rows),
        "pointing_game": {"mean": pointing_mean, "ci95": pointing_ci},
        "iou": {"mean": iou_mean, "ci95": iou_ci},
    }


def save_aggregate_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def save_bar_chart_svg(entries, path, title: str = "Saliency evaluation") -> None:
    """Bar chart with 95% CI whiskers; one bar per (label, mean, ci)."""
    entries = list(entries)
    if not entries:
        raise InputError("no entries to chart")
    bar_w, gap, left, top, bottom = 60, 30, 60, 30, 50
    plot_h = 240
    width = left + len(entries) * (bar_w + gap) + gap
    height = top + plot_h + bottom

    def y_of(value: float) -> float:
        return top + plot_h * (1.0 - min(max(value, 0.0), 1.0))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
             f'width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="12">',
             f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
             f'font-size="14">{title}</text>']
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_of(tick)
        parts.append(f'<line x1="{left}" y1="{y:.1f}" x2="{width - gap}" '
                     f'y2="{y:.1f}" stroke="#ccc"/>')
        parts.append(f'<text x="{left - 8}" y="{y + 4:.1f}" '
                     f'text-anchor="end">{tick:g}</text>')
    for i, (label, mean, ci) in enumerate(entries):
        x = left + gap + i * (bar_w + gap)
        y = y_of(mean)
        parts.append(f'<rect x="{x}" y="{y:.1f}" width="{bar_w}" '
                     f'height="{top + plot_h - y:.1f}" fill="#4878a8"/>')
        mid = x + bar_w / 2
        lo, hi = y_of(mean - ci), y_of(mean + ci)
        parts.append(f'<line x1="{mid:.1f}" y1="{lo:.1f}" x2="{mid:.1f}" '
                     f'y2="{hi:.1f}" stroke="#222" stroke-width="2"/>')
        for cap in (lo, hi):
            parts.append(f'<line x1="{mid - 8:.1f}" y1="{cap:.1f}" '
                         f'x2="{mid + 8:.1f}" y2="{cap:.1f}" '
                         f'stroke="#222" stroke-width="2"/>')
        parts.append(f'<text x="{mid:.1f}" y="{top + plot_h + 18}" '
                     f'text-anchor="middle">{label}</text>')
        parts.append(f'<text x="{mid:.1f}" y="{y - 6:.1f}" '
                     f'text-anchor="middle">{mean:.3f}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
