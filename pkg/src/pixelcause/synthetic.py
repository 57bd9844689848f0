"""Synthetic two-class shape scenes with analytic contrast images.

Every scene contains a set of concentric circles, a large ellipse outline,
and a small ellipse outline. A scene is diseased exactly when it contains
a square (always drawn inside the large ellipse) together with either a
thin-lined small ellipse or a triangle. A square alone, or a triangle
alone, is healthy.

For each image x the generator also produces its healthy counterpart
x_prime analytically: square and triangle removed, small ellipse redrawn
thick-lined. Both images share one additive noise field, so x and x_prime
are bit-identical outside the regions the counterpart changes. Ring shapes
grow outward from a shared inner edge, which keeps the thin-to-thick
ellipse difference one connected band instead of two slivers.

Shapes are rendered with 4x supersampled coverage (anti-aliased edges) at
fixed intensities on a black background. Disease-evidence shapes are
placed close together (square and triangle inside the large ellipse, the
small ellipse hugging its rim next to the square) so annotated targets
tend to share coarse grid cells; evaluation metrics reward that locality.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, InvalidSpec
from .imaging import load_png, rle_decode, rle_encode, save_png

DISEASED = "diseased"
HEALTHY = "healthy"

BASE_SIZE = 128
SUPERSAMPLE = 4
NOISE_SIGMA = 0.02
THIN_WIDTH = 1.2
THICK_WIDTH = 3.4

INTENSITY = {
    "circles": 0.80,
    "large_ellipse": 0.88,
    "small_ellipse": 0.92,
    "square": 0.78,
    "triangle": 0.84,
}


@dataclass(frozen=True)
class CircleSet:
    center: tuple[float, float]
    radii: tuple[float, ...]
    thickness: float = 2.0


@dataclass(frozen=True)
class EllipseOutline:
    center: tuple[float, float]
    a: float  # semi-axis along the rotated x direction
    b: float
    angle: float = 0.0
    thickness: float = 2.2


@dataclass(frozen=True)
class SmallEllipse:
    center: tuple[float, float]
    a: float
    b: float
    angle: float = 0.0
    thin: bool = True


@dataclass(frozen=True)
class Square:
    center: tuple[float, float]
    side: float


@dataclass(frozen=True)
class Triangle:
    vertices: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class SceneSpec:
    size: int
    circles: CircleSet
    large_ellipse: EllipseOutline
    small_ellipse: SmallEllipse
    square: Square | None
    triangle: Triangle | None
    noise_seed: int
    noise_sigma: float = NOISE_SIGMA


@dataclass(frozen=True)
class Target:
    name: str
    mask: np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    label: str
    targets: tuple[Target, ...]


def ground_truth_label(spec: SceneSpec) -> str:
    diseased = spec.square is not None and (spec.small_ellipse.thin or spec.triangle is not None)
    return DISEASED if diseased else HEALTHY


# --- rendering -------------------------------------------------------------

def _paint(canvas: np.ndarray, member, bbox, intensity: float) -> np.ndarray:
    """Blend a shape into `canvas` by supersampled coverage.

    `member(x, y)` is a vectorized membership test in continuous image
    coordinates (x = column, y = row). Returns the 1x boolean mask of
    pixels the shape touches.
    """
    size_r, size_c = canvas.shape
    x0, y0, x1, y1 = bbox
    c0 = max(int(math.floor(x0)), 0)
    r0 = max(int(math.floor(y0)), 0)
    c1 = min(int(math.ceil(x1)) + 1, size_c)
    r1 = min(int(math.ceil(y1)) + 1, size_r)
    mask = np.zeros_like(canvas, dtype=bool)
    if r1 <= r0 or c1 <= c0:
        return mask
    f = SUPERSAMPLE
    ys = (np.arange(r0 * f, r1 * f, dtype=np.float64) + 0.5) / f
    xs = (np.arange(c0 * f, c1 * f, dtype=np.float64) + 0.5) / f
    xx, yy = np.meshgrid(xs, ys)
    hit = member(xx, yy)
    cov = hit.reshape(r1 - r0, f, c1 - c0, f).mean(axis=(1, 3))
    region = canvas[r0:r1, c0:c1]
    canvas[r0:r1, c0:c1] = region * (1.0 - cov) + intensity * cov
    mask[r0:r1, c0:c1] = cov > 0
    return mask


def _circle_ring(cx, cy, radius, thickness):
    def member(x, y):
        rr = np.hypot(x - cx, y - cy)
        return (rr >= radius) & (rr <= radius + thickness)
    reach = radius + thickness + 1
    return member, (cx - reach, cy - reach, cx + reach, cy + reach)


def _ellipse_ring(cx, cy, a, b, angle, thickness):
    # ring grows outward from g = 1; band width in g units is thickness / b
    # which gives ~thickness pixels at the flat side of the ellipse
    tau = thickness / min(a, b)
    cos_t, sin_t = math.cos(angle), math.sin(angle)

    def member(x, y):
        u = cos_t * (x - cx) + sin_t * (y - cy)
        v = -sin_t * (x - cx) + cos_t * (y - cy)
        g = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        return (g >= 1.0) & (g <= 1.0 + tau)
    reach = max(a, b) * (1.0 + tau) + 1
    return member, (cx - reach, cy - reach, cx + reach, cy + reach)


def _filled_square(cx, cy, side):
    half = side / 2.0

    def member(x, y):
        return (np.abs(x - cx) <= half) & (np.abs(y - cy) <= half)
    return member, (cx - half, cy - half, cx + half, cy + half)


def _filled_triangle(vertices):
    (x0, y0), (x1, y1), (x2, y2) = vertices
    # enforce counter-clockwise order so all cross products share a sign
    if (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0) < 0:
        (x1, y1), (x2, y2) = (x2, y2), (x1, y1)

    def member(x, y):
        s0 = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
        s1 = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        s2 = (x0 - x2) * (y - y2) - (y0 - y2) * (x - x2)
        return (s0 >= 0) & (s1 >= 0) & (s2 >= 0)
    xs = (x0, x1, x2)
    ys = (y0, y1, y2)
    return member, (min(xs), min(ys), max(xs), max(ys))


def _ellipse_g(spec: EllipseOutline | SmallEllipse, x: float, y: float) -> float:
    cos_t, sin_t = math.cos(spec.angle), math.sin(spec.angle)
    cx, cy = spec.center
    u = cos_t * (x - cx) + sin_t * (y - cy)
    v = -sin_t * (x - cx) + cos_t * (y - cy)
    return math.sqrt((u / spec.a) ** 2 + (v / spec.b) ** 2)


def _shape_scale(spec: SceneSpec) -> float:
    return spec.size / BASE_SIZE


def _validate(spec: SceneSpec) -> None:
    if spec.size < 32:
        raise InvalidSpec("image size must be at least 32")
    shapes: list[tuple[float, float, float, float]] = []
    cx, cy = spec.circles.center
    reach = max(spec.circles.radii) + spec.circles.thickness
    shapes.append((cx - reach, cy - reach, cx + reach, cy + reach))
    le = spec.large_ellipse
    reach = max(le.a, le.b) * (1 + le.thickness / min(le.a, le.b)) + 0.5
    shapes.append((le.center[0] - reach, le.center[1] - reach,
                   le.center[0] + reach, le.center[1] + reach))
    se = spec.small_ellipse
    scale = _shape_scale(spec)
    width = (THICK_WIDTH if not se.thin else THIN_WIDTH) * scale
    reach = max(se.a, se.b) * (1 + width / min(se.a, se.b)) + 0.5
    shapes.append((se.center[0] - reach, se.center[1] - reach,
                   se.center[0] + reach, se.center[1] + reach))
    if spec.square is not None:
        sq = spec.square
        half = sq.side / 2
        shapes.append((sq.center[0] - half, sq.center[1] - half,
                       sq.center[0] + half, sq.center[1] + half))
        # all four corners must sit strictly inside the large ellipse rim
        margin = 1.5 / min(le.a, le.b)
        for dx in (-half, half):
            for dy in (-half, half):
                g = _ellipse_g(le, sq.center[0] + dx, sq.center[1] + dy)
                if g > 1.0 - margin:
                    raise InvalidSpec("square is not wholly inside the large ellipse")
    if spec.triangle is not None:
        xs = [v[0] for v in spec.triangle.vertices]
        ys = [v[1] for v in spec.triangle.vertices]
        shapes.append((min(xs), min(ys), max(xs), max(ys)))
    for x0, y0, x1, y1 in shapes:
        if x0 < 0 or y0 < 0 or x1 > spec.size or y1 > spec.size:
            raise InvalidSpec("a shape extends outside the image bounds")


def _render_scene(spec: SceneSpec, healthy: bool) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    size = spec.size
    scale = _shape_scale(spec)
    canvas = np.zeros((size, size), dtype=np.float64)
    masks: dict[str, np.ndarray] = {}

    circle_mask = np.zeros((size, size), dtype=bool)
    for radius in spec.circles.radii:
        member, bbox = _circle_ring(spec.circles.center[0], spec.circles.center[1],
                                    radius, spec.circles.thickness)
        circle_mask |= _paint(canvas, member, bbox, INTENSITY["circles"])
    masks["circles"] = circle_mask

    le = spec.large_ellipse
    member, bbox = _ellipse_ring(le.center[0], le.center[1], le.a, le.b, le.angle,
                                 le.thickness)
    masks["large_ellipse"] = _paint(canvas, member, bbox, INTENSITY["large_ellipse"])

    se = spec.small_ellipse
    thin = se.thin and not healthy
    width = (THIN_WIDTH if thin else THICK_WIDTH) * scale
    member, bbox = _ellipse_ring(se.center[0], se.center[1], se.a, se.b, se.angle, width)
    masks["small_ellipse"] = _paint(canvas, member, bbox, INTENSITY["small_ellipse"])

    if spec.square is not None and not healthy:
        member, bbox = _filled_square(spec.square.center[0], spec.square.center[1],
                                      spec.square.side)
        masks["square"] = _paint(canvas, member, bbox, INTENSITY["square"])

    if spec.triangle is not None and not healthy:
        member, bbox = _filled_triangle(spec.triangle.vertices)
        masks["triangle"] = _paint(canvas, member, bbox, INTENSITY["triangle"])

    return canvas, masks


def generate_pair(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray, GroundTruth]:
    """Render (x, x_prime, truth) for a scene.

    x_prime is the healthy counterpart: square and triangle removed, small
    ellipse thick. The same noise field is added to both renders, so
    pixels outside the changed shape regions are identical. Raises
    InvalidSpec when the square is not wholly inside the large ellipse or
    any shape leaves the canvas.
    """
    _validate(spec)
    base_x, masks = _render_scene(spec, healthy=False)
    base_xp, masks_healthy = _render_scene(spec, healthy=True)
    rng = np.random.default_rng(spec.noise_seed)
    noise = rng.normal(0.0, spec.noise_sigma, base_x.shape)
    x = np.clip(base_x + noise, 0.0, 1.0)
    x_prime = np.clip(base_xp + noise, 0.0, 1.0)

    # a target marks where the evidence actually changed: pixels of the
    # shape's footprint whose noise-free renders differ by more than half
    # the shape intensity, i.e. majority-coverage changes. For the small
    # ellipse that is the band between the thin and thick outlines.
    delta = np.abs(base_x - base_xp)
    label = ground_truth_label(spec)
    targets: list[Target] = []
    if label == DISEASED:
        targets.append(Target(
            "square", masks["square"] & (delta > 0.5 * INTENSITY["square"])))
        if spec.triangle is not None:
            targets.append(Target(
                "triangle",
                masks["triangle"] & (delta > 0.5 * INTENSITY["triangle"])))
        if spec.small_ellipse.thin:
            footprint = masks["small_ellipse"] | masks_healthy["small_ellipse"]
            targets.append(Target(
                "small_ellipse",
                footprint & (delta > 0.5 * INTENSITY["small_ellipse"])))
    return x, x_prime, GroundTruth(label, tuple(targets))


# --- random scenes ---------------------------------------------------------

# healthy presence combos (square, thin ellipse, triangle); anything with a
# square plus a thin ellipse or a triangle is diseased
_HEALTHY_COMBOS = ((0, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, 1), (1, 0, 0))
_DISEASED_COMBOS = ((1, 1, 0), (1, 0, 1), (1, 1, 1))
_DISEASED_WEIGHTS = (0.45, 0.45, 0.10)


def _dilate1(mask: np.ndarray) -> np.ndarray:
    from scipy import ndimage
    return ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))


def _sample_scene(rng: np.random.Generator, combo: tuple[int, int, int],
                  size: int, noise_seed: int) -> SceneSpec:
    """Draw scene geometry for one presence combo; retry until the layout
    constraints (separation, containment, bounds) all hold."""
    has_square, thin_ellipse, has_triangle = combo
    f = size / BASE_SIZE
    for _ in range(300):
        ccx = rng.uniform(18, 26) * f
        ccy = rng.uniform(18, 26) * f
        outer = rng.uniform(8, 12) * f
        circles = CircleSet((ccx, ccy), (outer, outer * 0.55), 2.0 * f)

        ecx = rng.uniform(58, 68) * f
        ecy = rng.uniform(56, 62) * f
        ea = rng.uniform(27, 31) * f
        eb = rng.uniform(20, 23) * f
        eang = rng.uniform(-0.15, 0.15)
        large = EllipseOutline((ecx, ecy), ea, eb, eang, 2.2 * f)

        # small ellipse hugs the lower rim of the large one, below the square
        sa = rng.uniform(9.5, 12) * f
        sb = rng.uniform(6.5, 8.5) * f
        sang = rng.uniform(-0.3, 0.3)
        scx = ecx + rng.uniform(-10, -2) * f
        scy = ecy + eb + rng.uniform(8.5, 10) * f + sb
        small = SmallEllipse((scx, scy), sa, sb, sang, thin=bool(thin_ellipse))

        square = None
        if has_square:
            side = rng.uniform(10, 12) * f
            sqx = ecx + rng.uniform(-11.5, -8) * f
            sqy = ecy + eb - rng.uniform(13, 15) * f
            square = Square((sqx, sqy), side)

        triangle = None
        if has_triangle:
            # flat isoceles: apex up, base down; keeps x reach modest so it
            # fits beside the square inside the ellipse
            tw = rng.uniform(7, 8) * f
            ht = rng.uniform(7, 8) * f
            hb = rng.uniform(5, 5.5) * f
            tcx = ecx + rng.uniform(6.5, 9.5) * f
            tcy = ecy + eb - rng.uniform(12.5, 14) * f
            jit = lambda: rng.uniform(-0.5, 0.5) * f
            triangle = Triangle(((tcx + jit(), tcy - ht + jit()),
                                 (tcx - tw + jit(), tcy + hb + jit()),
                                 (tcx + tw + jit(), tcy + hb + jit())))

        spec = SceneSpec(size, circles, large, small, square, triangle,
                         noise_seed=noise_seed)
        if _layout_ok(spec):
            return spec
    raise InvalidSpec(
        f"could not place a non-overlapping scene at size {size} "
        "after 300 attempts; sizes below the native 128 leave too "
        "little room between shapes")


def _layout_ok(spec: SceneSpec) -> bool:
    try:
        _validate(spec)
    except InvalidSpec:
        return False
    le = spec.large_ellipse
    margin = 1.5 / min(le.a, le.b)
    if spec.triangle is not None:
        for vx, vy in spec.triangle.vertices:
            if _ellipse_g(le, vx, vy) > 1.0 - margin:
                return False
    # all separation checks happen on rendered masks with the small ellipse
    # at its widest so both x and x_prime are covered
    probe = dataclasses.replace(
        spec, small_ellipse=dataclasses.replace(spec.small_ellipse, thin=False))
    _, masks = _render_scene(probe, healthy=False)
    names = [n for n in ("circles", "large_ellipse", "small_ellipse", "square", "triangle")
             if n in masks]
    grown = {n: _dilate1(masks[n]) for n in names}
    for i, n1 in enumerate(names):
        for n2 in names[i + 1:]:
            if (grown[n1] & grown[n2]).any():
                return False
    return True


def random_dataset(n: int, seed: int, disease_ratio: float = 0.5,
                   size: int = BASE_SIZE) -> list[tuple[SceneSpec, np.ndarray, np.ndarray, GroundTruth]]:
    """Generate n scenes with round(n * disease_ratio) diseased, shuffled
    deterministically by seed."""
    if not 0.0 <= disease_ratio <= 1.0:
        raise ValueError("disease_ratio must be in [0, 1]")
    rng = np.random.default_rng(seed)
    n_diseased = int(round(n * disease_ratio))
    flags = np.array([True] * n_diseased + [False] * (n - n_diseased))
    rng.shuffle(flags)
    items = []
    for i, diseased in enumerate(flags):
        if diseased:
            k = rng.choice(len(_DISEASED_COMBOS), p=_DISEASED_WEIGHTS)
            combo = _DISEASED_COMBOS[k]
        else:
            combo = _HEALTHY_COMBOS[rng.integers(len(_HEALTHY_COMBOS))]
        noise_seed = int(rng.integers(0, 2 ** 31 - 1))
        spec = _sample_scene(rng, combo, size, noise_seed)
        x, x_prime, truth = generate_pair(spec)
        assert truth.label == (DISEASED if diseased else HEALTHY)
        items.append((spec, x, x_prime, truth))
    return items


# --- RLE + dataset files ---------------------------------------------------

def _spec_to_dict(spec: SceneSpec) -> dict:
    d = dataclasses.asdict(spec)

    def tuples_to_lists(obj):
        if isinstance(obj, tuple):
            return [tuples_to_lists(v) for v in obj]
        if isinstance(obj, dict):
            return {k: tuples_to_lists(v) for k, v in obj.items()}
        return obj
    return tuples_to_lists(d)


def _spec_from_dict(d: dict) -> SceneSpec:
    def pair(v):
        return (float(v[0]), float(v[1]))
    circles = CircleSet(pair(d["circles"]["center"]),
                        tuple(float(r) for r in d["circles"]["radii"]),
                        float(d["circles"]["thickness"]))
    le = d["large_ellipse"]
    large = EllipseOutline(pair(le["center"]), float(le["a"]), float(le["b"]),
                           float(le["angle"]), float(le["thickness"]))
    se = d["small_ellipse"]
    small = SmallEllipse(pair(se["center"]), float(se["a"]), float(se["b"]),
                         float(se["angle"]), bool(se["thin"]))
    square = None
    if d.get("square") is not None:
        square = Square(pair(d["square"]["center"]), float(d["square"]["side"]))
    triangle = None
    if d.get("triangle") is not None:
        triangle = Triangle(tuple(pair(v) for v in d["triangle"]["vertices"]))
    return SceneSpec(int(d["size"]), circles, large, small, square, triangle,
                     int(d["noise_seed"]), float(d.get("noise_sigma", NOISE_SIGMA)))


def save_dataset(items, out_dir) -> None:
    """Write <id>_x.png, <id>_xp.png, <id>_truth.json per item plus a
    dataset.json manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, (spec, x, x_prime, truth) in enumerate(items):
        stem = f"{i:04d}"
        save_png(x, out / f"{stem}_x.png")
        save_png(x_prime, out / f"{stem}_xp.png")
        h, w = x.shape
        payload = {
            "label": truth.label,
            "width": w,
            "height": h,
            "targets": [{"name": t.name, "rle": rle_encode(t.mask)} for t in truth.targets],
            "spec": _spec_to_dict(spec),
        }
        with open(out / f"{stem}_truth.json", "w") as fh:
            json.dump(payload, fh, sort_keys=True)
        manifest.append({"id": stem, "label": truth.label})
    with open(out / "dataset.json", "w") as fh:
        json.dump({"count": len(manifest), "items": manifest}, fh, sort_keys=True, indent=2)


@dataclass(frozen=True)
class DatasetItem:
    item_id: str
    x: np.ndarray
    x_prime: np.ndarray
    truth: GroundTruth
    spec: SceneSpec | None


def load_dataset(data_dir) -> list[DatasetItem]:
    root = Path(data_dir)
    manifest_path = root / "dataset.json"
    if not manifest_path.exists():
        raise InputError(f"no dataset.json in {root}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    items = []
    for entry in manifest["items"]:
        stem = entry["id"]
        try:
            x = load_png(root / f"{stem}_x.png")
            x_prime = load_png(root / f"{stem}_xp.png")
            with open(root / f"{stem}_truth.json") as fh:
                payload = json.load(fh)
        except FileNotFoundError as exc:
            raise InputError(f"dataset item {stem} incomplete: {exc}") from exc
        targets = tuple(
            Target(t["name"], rle_decode(t["rle"], payload["height"], payload["width"]))
            for t in payload["targets"])
        spec = _spec_from_dict(payload["spec"]) if "spec" in payload else None
        items.append(DatasetItem(stem, x, x_prime,
                                 GroundTruth(payload["label"], targets), spec))
    return items
