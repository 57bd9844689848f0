"""Grayscale imaging primitives shared by the explanation engine.

Images are plain 2-D float64 numpy arrays with values in [0, 1], row major.
Masks are boolean arrays of the same shape, label maps are integer arrays
where 0 means background and segment ids start at 1.

Histogram convention: 256 bins aligned to 8-bit levels, bin b counting
pixels whose intensity rounds to b/255. A threshold between bins b and b+1
is reported as (b + 0.5) / 255 so that comparing pixel >= threshold splits
the two bins cleanly.
"""

from __future__ import annotations

import itertools
import json
from typing import Mapping

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import DegenerateHistogram, DimensionMismatch, UnknownSegmentId

HIST_BINS = 256


def validate_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    """Check shape/range and return the array as float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D array, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return x


def same_shape(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"{what} differ in shape: {a.shape} vs {b.shape}")


def image_histogram(x: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    """256-bin intensity histogram; bin b counts pixels rounding to b/255."""
    x = np.asarray(x, dtype=np.float64)
    levels = np.rint(np.clip(x, 0.0, 1.0) * (bins - 1)).astype(np.int64)
    return np.bincount(levels.ravel(), minlength=bins)


def _class_sums(hist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # W[i] = total count of bins < i, M[i] = count-weighted index sum of bins < i
    c = hist.astype(np.float64)
    idx = np.arange(c.size, dtype=np.float64)
    w = np.concatenate(([0.0], np.cumsum(c)))
    m = np.concatenate(([0.0], np.cumsum(c * idx)))
    return w, m


def multi_otsu(hist: np.ndarray, classes: int = 3) -> tuple[float, ...]:
    """Otsu thresholds splitting `hist` into `classes` intensity classes.

    Maximizes the between-class variance sum_k w_k * (mu_k - mu)^2 over all
    ways of cutting the histogram into `classes` contiguous bin ranges.
    Since the total mean mu is fixed this is equivalent to maximizing
    sum_k w_k * mu_k^2, which is what the search below scores. Exhaustive
    over all boundary tuples; ties resolve to the lexicographically lowest
    tuple. Returned thresholds are (boundary_bin + 0.5) / (bins - 1), i.e.
    they fall strictly between the last bin of one class and the first bin
    of the next.

    Raises DegenerateHistogram when fewer distinct populated bins exist
    than requested classes.
    """
    hist = np.asarray(hist)
    if hist.ndim != 1 or hist.size < 2:
        raise ValueError("histogram must be a 1-D array with at least 2 bins")
    if np.any(hist < 0):
        raise ValueError("histogram counts must be non-negative")
    if classes < 2:
        raise ValueError("classes must be >= 2")
    if int(np.count_nonzero(hist)) < classes:
        raise DegenerateHistogram(
            f"histogram has {int(np.count_nonzero(hist))} populated bins, "
            f"need at least {classes}")

    bins = hist.size
    w, m = _class_sums(hist)

    def score_range(a, b):
        # bins a..b inclusive; empty class contributes 0
        cw = w[b + 1] - w[a]
        cm = m[b + 1] - m[a]
        return np.where(cw > 0, cm * cm / np.where(cw > 0, cw, 1.0), 0.0)

    if classes == 2:
        t = np.arange(0, bins - 1)
        scores = score_range(0, t) + score_range(t + 1, bins - 1)
        best = int(np.argmax(scores))  # first max = lowest threshold
        cuts = (best,)
    elif classes == 3:
        best_score = -np.inf
        cuts = (0, 1)
        for t1 in range(0, bins - 2):
            t2 = np.arange(t1 + 1, bins - 1)
            scores = (float(score_range(0, t1))
                      + score_range(t1 + 1, t2)
                      + score_range(t2 + 1, bins - 1))
            k = int(np.argmax(scores))
            if scores[k] > best_score:
                best_score = float(scores[k])
                cuts = (t1, t1 + 1 + k)
    else:
        best_score = -np.inf
        cuts = tuple(range(classes - 1))
        for cand in itertools.combinations(range(bins - 1), classes - 1):
            bounds = (0,) + tuple(c + 1 for c in cand) + (bins,)
            s = 0.0
            for a, b in zip(bounds[:-1], bounds[1:]):
                s += float(score_range(a, b - 1))
            if s > best_score:
                best_score = s
                cuts = cand

    return tuple((c + 0.5) / (bins - 1) for c in cuts)


def difference_masks(x: np.ndarray, x_prime: np.ndarray, t_high: float,
                     t_low: float) -> tuple[np.ndarray, np.ndarray]:
    """Split |x - x_prime| into a strong-difference and weak-difference mask.

    d_high marks pixels with |x - x_prime| >= t_high, d_low marks pixels
    with t_low <= |x - x_prime| < t_high. The two masks are disjoint by
    construction.
    """
    same_shape(x, x_prime)
    if not (0.0 <= t_low <= t_high):
        raise ValueError(f"need 0 <= t_low <= t_high, got ({t_low}, {t_high})")
    diff = np.abs(np.asarray(x, dtype=np.float64) - np.asarray(x_prime, dtype=np.float64))
    d_high = diff >= t_high
    d_low = (diff >= t_low) & ~d_high
    return d_high, d_low


_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Label connected regions of a boolean mask.

    Labels are 1..n assigned in raster-scan order of each component's first
    pixel, background stays 0. Connectivity is 4 or 8 (default 8).
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = np.asarray(mask, dtype=bool)
    structure = _STRUCT_4 if connectivity == 4 else _STRUCT_8
    raw, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return raw.astype(np.int64), 0
    # normalize to raster-scan first-encounter order regardless of how the
    # library happened to number the components
    flat = raw.ravel()
    nz = np.flatnonzero(flat)
    first = np.full(n + 1, flat.size, dtype=np.int64)
    # reversed so the earliest occurrence wins
    first[flat[nz[::-1]]] = nz[::-1]
    order = np.argsort(first[1:], kind="stable")  # old labels sorted by first pixel
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[order + 1] = np.arange(1, n + 1)
    return remap[raw], n


def erode(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Binary erosion with a square structuring element of side 2*radius+1.

    Pixels outside the image count as False, so regions touching the border
    shrink there too.
    """
    mask = np.asarray(mask, dtype=bool)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_erosion(mask, structure=structure, border_value=0)


def dilate(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Binary dilation with a square structuring element of side 2*radius+1."""
    mask = np.asarray(mask, dtype=bool)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_dilation(mask, structure=structure)


def rle_encode(mask: np.ndarray) -> list[list[int]]:
    """Row-major runs of True pixels as [start, length] pairs."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if not flat.any():
        return []
    padded = np.concatenate(([False], flat, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2]
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(runs, height: int, width: int) -> np.ndarray:
    flat = np.zeros(height * width, dtype=bool)
    for start, length in runs:
        flat[start:start + length] = True
    return flat.reshape(height, width)


class _UnionFind:
    __slots__ = ("parent", "size")

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return root

    def union(self, a: int, b: int) -> int:
        # union by size; ties keep the smaller root index for determinism
        if self.size[a] < self.size[b] or (self.size[a] == self.size[b] and b < a):
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return a


def felzenszwalb(image: np.ndarray, scale: float = 50.0, sigma: float = 0.8,
                 min_size: int = 20, roi: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Graph-based segmentation of `image`, optionally restricted to `roi`.

    Builds the 8-connected grid graph over roi pixels with edge weights
    |I(p) - I(q)| on the Gaussian-smoothed image, then runs the classic
    predicate merge: edges ascending by weight, two components join when
    the edge weight does not exceed min over both of
    internal_difference + scale / component_size. A second pass over the
    same edge order absorbs any component smaller than min_size into its
    neighbor. Components that still end below min_size can only be isolated
    roi islands with no graph neighbors; they are dropped to label 0.

    Determinism: edges are ordered by (weight, raster index of first
    endpoint, direction), so equal-weight edges always merge in raster
    order and repeated calls are bit-identical.

    Returns (labels, n) with labels 1..n in raster-scan first-encounter
    order and 0 outside the roi.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DimensionMismatch(f"image must be 2-D, got shape {image.shape}")
    h, w = image.shape
    if roi is None:
        roi = np.ones((h, w), dtype=bool)
    else:
        roi = np.asarray(roi, dtype=bool)
        same_shape(image, roi, "image and roi")
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    if not roi.any():
        return np.zeros((h, w), dtype=np.int64), 0

    smoothed = ndimage.gaussian_filter(image, sigma, mode="nearest") if sigma > 0 else image

    # forward half of the 8-neighborhood: E, S, SE, SW
    offsets = ((0, 1), (1, 0), (1, 1), (1, -1))
    srcs, dsts, wts, dirs = [], [], [], []
    flat_idx = np.arange(h * w).reshape(h, w)
    for d, (dr, dc) in enumerate(offsets):
        r0 = slice(0, h - dr)
        r1 = slice(dr, h)
        if dc >= 0:
            c0, c1 = slice(0, w - dc), slice(dc, w)
        else:
            c0, c1 = slice(-dc, w), slice(0, w + dc)
        valid = roi[r0, c0] & roi[r1, c1]
        if not valid.any():
            continue
        srcs.append(flat_idx[r0, c0][valid])
        dsts.append(flat_idx[r1, c1][valid])
        wts.append(np.abs(smoothed[r0, c0][valid] - smoothed[r1, c1][valid]))
        dirs.append(np.full(int(valid.sum()), d, dtype=np.int64))

    labels = np.zeros(h * w, dtype=np.int64)
    roi_flat = roi.ravel()
    if srcs:
        src = np.concatenate(srcs)
        dst = np.concatenate(dsts)
        wgt = np.concatenate(wts)
        drn = np.concatenate(dirs)
        order = np.lexsort((drn, src, wgt))
        src, dst, wgt = src[order], dst[order], wgt[order]

        uf = _UnionFind(h * w)
        internal = {}
        find, union = uf.find, uf.union
        for a, b, ew in zip(src.tolist(), dst.tolist(), wgt.tolist()):
            ra, rb = find(a), find(b)
            if ra == rb:
                continue
            ta = internal.get(ra, 0.0) + scale / uf.size[ra]
            tb = internal.get(rb, 0.0) + scale / uf.size[rb]
            if ew <= ta and ew <= tb:
                internal[union(ra, rb)] = ew
        for a, b in zip(src.tolist(), dst.tolist()):
            ra, rb = find(a), find(b)
            if ra != rb and (uf.size[ra] < min_size or uf.size[rb] < min_size):
                union(ra, rb)

        roots = np.fromiter((find(i) for i in np.flatnonzero(roi_flat)),
                            dtype=np.int64)
        pixels = np.flatnonzero(roi_flat)
        next_label = 1
        root_label: dict[int, int] = {}
        counts = np.bincount(roots, minlength=h * w)
        for px, rt in zip(pixels.tolist(), roots.tolist()):
            if counts[rt] < min_size:
                continue  # isolated island, cannot be grown
            lab = root_label.get(rt)
            if lab is None:
                lab = root_label[rt] = next_label
                next_label += 1
            labels[px] = lab
        n = next_label - 1
    else:
        # roi pixels with no internal edges: isolated singletons
        n = 0
        if min_size <= 1:
            pixels = np.flatnonzero(roi_flat)
            labels[pixels] = np.arange(1, pixels.size + 1)
            n = pixels.size

    return labels.reshape(h, w), n


def render_saliency(scores: Mapping[int, float], labels: np.ndarray) -> np.ndarray:
    """Paint per-segment scores onto pixels; background gets 0.

    Every segment id present in `labels` must have an entry in `scores`,
    otherwise UnknownSegmentId is raised.
    """
    labels = np.asarray(labels)
    ids = np.unique(labels)
    ids = ids[ids > 0]
    missing = [int(i) for i in ids if int(i) not in scores]
    if missing:
        raise UnknownSegmentId(f"no score for segment ids {missing}")
    lut = np.zeros(int(labels.max()) + 1 if labels.size else 1, dtype=np.float64)
    for i in ids:
        lut[int(i)] = float(scores[int(i)])
    return lut[labels]


# --- file formats ----------------------------------------------------------

def load_png(path) -> np.ndarray:
    """Load an 8-bit grayscale PNG as floats in [0, 1] (value / 255)."""
    with PILImage.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        arr = np.asarray(im, dtype=np.float64)
    return arr / 255.0


def save_png(x: np.ndarray, path) -> None:
    """Save floats in [0, 1] as an 8-bit grayscale PNG (round(v * 255))."""
    arr = np.rint(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(arr, mode="L").save(path, format="PNG")


def load_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM file with maxval 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM (P5) file")
    # header tokens: magic, width, height, maxval; '#' comments run to EOL
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = int(tokens[0]), int(tokens[1]), int(tokens[2])
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def save_pgm(x: np.ndarray, path) -> None:
    arr = np.rint(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def save_saliency_png(saliency: np.ndarray, base: np.ndarray, path) -> None:
    """Write a signed heat overlay: positive scores red, negative blue.

    Overlay strength scales with |score| / max |score| on top of the
    grayscale base image. A saliency map that is zero everywhere yields
    the plain base image.
    """
    saliency = np.asarray(saliency, dtype=np.float64)
    base = np.asarray(base, dtype=np.float64)
    same_shape(saliency, base, "saliency and base image")
    gray = np.clip(base, 0.0, 1.0)
    peak = np.abs(saliency).max()
    alpha = 0.7 * np.abs(saliency) / peak if peak > 0 else np.zeros_like(saliency)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    pos = saliency > 0
    neg = saliency < 0
    for chan in range(3):
        color = np.zeros_like(saliency)
        if chan == 0:
            color[pos] = 1.0
        if chan == 2:
            color[neg] = 1.0
        rgb[:, :, chan] = rgb[:, :, chan] * (1 - alpha) + color * alpha
    out = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(out, mode="RGB").save(path, format="PNG")


def save_saliency_json(saliency: np.ndarray, path) -> None:
    saliency = np.asarray(saliency, dtype=np.float64)
    h, w = saliency.shape
    payload = {"width": w, "height": h, "values": saliency.tolist()}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_saliency_json(path) -> np.ndarray:
    with open(path) as fh:
        payload = json.load(fh)
    arr = np.asarray(payload["values"], dtype=np.float64)
    if arr.shape != (payload["height"], payload["width"]):
        raise ValueError("saliency JSON dimensions do not match values array")
    return arr


def load_saliency(path) -> np.ndarray:
    """Load a saliency map from raw JSON or a grayscale PNG (values / 255)."""
    p = str(path)
    if p.endswith(".json"):
        return load_saliency_json(path)
    return load_png(path)
