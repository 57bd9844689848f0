import numpy as np
import pytest

from pixelcause import imaging
from pixelcause.errors import DegenerateHistogram, DimensionMismatch, UnknownSegmentId


# --- independent oracles ---------------------------------------------------

def otsu_oracle(hist, classes):
    """Exhaustive search maximizing sum_k w_k (mu_k - mu)^2 directly."""
    import itertools
    hist = np.asarray(hist, dtype=float)
    bins = hist.size
    total = hist.sum()
    grand_mean = (hist * np.arange(bins)).sum() / total
    best_score, best = -np.inf, None
    for cand in itertools.combinations(range(bins - 1), classes - 1):
        bounds = (0,) + tuple(c + 1 for c in cand) + (bins,)
        score = 0.0
        for a, b in zip(bounds[:-1], bounds[1:]):
            chunk = hist[a:b]
            w = chunk.sum()
            if w > 0:
                mu = (chunk * np.arange(a, b)).sum() / w
                score += w * (mu - grand_mean) ** 2
        if score > best_score:
            best_score, best = score, cand
    return tuple((c + 0.5) / (bins - 1) for c in best)


def flood_fill_oracle(mask, connectivity):
    """Label components by explicit BFS in raster order."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if connectivity == 4:
        neigh = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        neigh = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    labels = np.zeros((h, w), dtype=np.int64)
    n = 0
    for r in range(h):
        for c in range(w):
            if mask[r, c] and labels[r, c] == 0:
                n += 1
                stack = [(r, c)]
                labels[r, c] = n
                while stack:
                    cr, cc = stack.pop()
                    for dr, dc in neigh:
                        nr, nc = cr + dr, cc + dc
                        if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and labels[nr, nc] == 0:
                            labels[nr, nc] = n
                            stack.append((nr, nc))
    return labels, n


def erosion_oracle(mask, radius):
    """Per-pixel scan: pixel survives iff its whole square window is True."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            keep = True
            for dr in range(-radius, radius + 1):
                for dc in range(-radius, radius + 1):
                    nr, nc = r + dr, c + dc
                    if not (0 <= nr < h and 0 <= nc < w) or not mask[nr, nc]:
                        keep = False
                        break
                if not keep:
                    break
            out[r, c] = keep
    return out


# --- histograms and otsu ---------------------------------------------------

def test_histogram_counts_eight_bit_levels():
    x = np.array([[0.0, 10 / 255, 10 / 255], [200 / 255, 1.0, 10 / 255]])
    h = imaging.image_histogram(x)
    assert h.sum() == 6
    assert h[0] == 1 and h[10] == 3 and h[200] == 1 and h[255] == 1


def test_otsu_two_spikes_threshold_between():
    h = np.zeros(256, dtype=int)
    h[10] = 40
    h[200] = 60
    (t,) = imaging.multi_otsu(h, classes=2)
    assert 10 / 255 < t < 200 / 255
    assert imaging.multi_otsu(h, classes=2) == otsu_oracle(h, 2)


def test_otsu_trimodal_matches_exhaustive_oracle():
    rng = np.random.default_rng(7)
    h = np.zeros(256, dtype=int)
    for center, spread, mass in ((30, 6, 300), (120, 9, 400), (210, 5, 250)):
        draws = np.clip(np.rint(rng.normal(center, spread, mass)), 0, 255).astype(int)
        h += np.bincount(draws, minlength=256)
    assert imaging.multi_otsu(h, classes=3) == otsu_oracle(h, 3)


def test_otsu_random_histograms_match_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        h = rng.integers(0, 30, size=64)
        h[rng.random(64) < 0.4] = 0
        if np.count_nonzero(h) < 3:
            continue
        assert imaging.multi_otsu(h, classes=2) == otsu_oracle(h, 2)
        assert imaging.multi_otsu(h, classes=3) == otsu_oracle(h, 3)


def test_otsu_tie_breaks_to_lowest_tuple():
    # one populated bin on each side of a run of empty bins: any cut inside
    # the run scores the same, the lowest boundary must win
    h = np.zeros(16, dtype=int)
    h[2] = 5
    h[9] = 5
    h[14] = 5
    t1, t2 = imaging.multi_otsu(h, classes=3)
    assert t1 == (2 + 0.5) / 15
    assert t2 == (9 + 0.5) / 15


def test_otsu_degenerate_histogram():
    h = np.zeros(256, dtype=int)
    h[4] = 10
    h[77] = 3
    with pytest.raises(DegenerateHistogram):
        imaging.multi_otsu(h, classes=3)
    with pytest.raises(DegenerateHistogram):
        imaging.multi_otsu(np.zeros(256, dtype=int), classes=2)


# --- difference masks ------------------------------------------------------

def test_difference_masks_split_and_disjoint():
    x = np.array([[0.0, 0.3, 0.9]])
    xp = np.array([[0.0, 0.1, 0.1]])
    d_h, d_l = imaging.difference_masks(x, xp, t_high=0.5, t_low=0.1)
    assert d_h.tolist() == [[False, False, True]]
    assert d_l.tolist() == [[False, True, False]]
    assert not (d_h & d_l).any()


def test_difference_masks_shape_check():
    with pytest.raises(DimensionMismatch):
        imaging.difference_masks(np.zeros((2, 2)), np.zeros((3, 2)), 0.5, 0.1)


def test_difference_masks_random_disjoint_and_cover():
    rng = np.random.default_rng(3)
    x = rng.random((20, 20))
    xp = rng.random((20, 20))
    d_h, d_l = imaging.difference_masks(x, xp, 0.4, 0.15)
    diff = np.abs(x - xp)
    assert not (d_h & d_l).any()
    assert np.array_equal(d_h | d_l, diff >= 0.15)
    assert np.array_equal(d_h, diff >= 0.4)


# --- connected components --------------------------------------------------

def test_components_match_flood_fill_oracle():
    rng = np.random.default_rng(5)
    for conn in (4, 8):
        for _ in range(15):
            mask = rng.random((18, 25)) < 0.45
            got_labels, got_n = imaging.connected_components(mask, connectivity=conn)
            want_labels, want_n = flood_fill_oracle(mask, conn)
            assert got_n == want_n
            assert np.array_equal(got_labels, want_labels)


def test_components_diagonal_connectivity():
    mask = np.array([[1, 0], [0, 1]], dtype=bool)
    _, n8 = imaging.connected_components(mask, connectivity=8)
    _, n4 = imaging.connected_components(mask, connectivity=4)
    assert n8 == 1 and n4 == 2


def test_components_label_order_is_raster():
    mask = np.zeros((5, 9), dtype=bool)
    mask[3:, 0:2] = True   # lower-left blob, later in raster order
    mask[0, 5:8] = True    # top blob, first in raster order
    labels, n = imaging.connected_components(mask)
    assert n == 2
    assert labels[0, 5] == 1 and labels[3, 0] == 2


def test_components_empty_mask():
    labels, n = imaging.connected_components(np.zeros((4, 4), dtype=bool))
    assert n == 0 and not labels.any()


# --- erosion ---------------------------------------------------------------

def test_erode_matches_neighborhood_oracle():
    rng = np.random.default_rng(9)
    for radius in (1, 2):
        for _ in range(10):
            mask = rng.random((15, 12)) < 0.7
            assert np.array_equal(imaging.erode(mask, radius), erosion_oracle(mask, radius))


def test_erode_block_and_border():
    mask = np.zeros((5, 5), dtype=bool)
    mask[1:4, 1:4] = True
    out = imaging.erode(mask, radius=1)
    want = np.zeros((5, 5), dtype=bool)
    want[2, 2] = True
    assert np.array_equal(out, want)
    # a full mask erodes at the border because outside counts as False
    full = np.ones((4, 4), dtype=bool)
    out = imaging.erode(full, radius=1)
    assert out.sum() == 4 and out[1:3, 1:3].all()


def test_erode_radius_zero_is_identity():
    mask = np.random.default_rng(1).random((6, 6)) < 0.5
    assert np.array_equal(imaging.erode(mask, 0), mask)


# --- felzenszwalb ----------------------------------------------------------

def test_felzenszwalb_constant_image_single_region():
    img = np.full((12, 12), 0.5)
    labels, n = imaging.felzenszwalb(img, scale=1.0, sigma=0.0, min_size=5)
    assert n == 1
    assert (labels == 1).all()


def test_felzenszwalb_constant_respects_roi():
    img = np.full((10, 10), 0.3)
    roi = np.zeros((10, 10), dtype=bool)
    roi[2:8, 3:9] = True
    labels, n = imaging.felzenszwalb(img, scale=1.0, sigma=0.0, min_size=4, roi=roi)
    assert n == 1
    assert (labels[roi] == 1).all()
    assert not labels[~roi].any()


def test_felzenszwalb_two_flat_regions():
    img = np.zeros((10, 16))
    img[:, 8:] = 1.0
    labels, n = imaging.felzenszwalb(img, scale=0.5, sigma=0.0, min_size=10)
    assert n == 2
    assert len(np.unique(labels[:, :8])) == 1
    assert len(np.unique(labels[:, 8:])) == 1
    assert labels[0, 0] == 1 and labels[0, 8] == 2


def test_felzenszwalb_min_size_absorbs_small_components():
    rng = np.random.default_rng(21)
    img = rng.random((20, 20))
    labels, n = imaging.felzenszwalb(img, scale=0.05, sigma=0.0, min_size=30)
    assert n >= 1
    for lab in range(1, n + 1):
        assert (labels == lab).sum() >= 30
    # the whole (connected) roi stays covered
    assert (labels > 0).all()


def test_felzenszwalb_deterministic():
    rng = np.random.default_rng(33)
    img = rng.random((24, 24))
    roi = rng.random((24, 24)) < 0.8
    a = imaging.felzenszwalb(img, scale=10.0, sigma=0.6, min_size=8, roi=roi)
    b = imaging.felzenszwalb(img, scale=10.0, sigma=0.6, min_size=8, roi=roi)
    assert a[1] == b[1]
    assert np.array_equal(a[0], b[0])


def test_felzenszwalb_labels_partition_roi():
    rng = np.random.default_rng(41)
    img = rng.random((16, 16))
    roi = np.zeros((16, 16), dtype=bool)
    roi[1:15, 2:14] = True
    labels, n = imaging.felzenszwalb(img, scale=5.0, sigma=0.0, min_size=6, roi=roi)
    assert set(np.unique(labels[roi])) <= set(range(1, n + 1))
    assert (labels[roi] > 0).all()
    assert not labels[~roi].any()


# --- saliency rendering ----------------------------------------------------

def test_render_saliency_paints_scores():
    labels = np.array([[0, 1, 1], [2, 2, 0]])
    out = imaging.render_saliency({1: 0.5, 2: -1.25}, labels)
    assert out.tolist() == [[0.0, 0.5, 0.5], [-1.25, -1.25, 0.0]]


def test_render_saliency_missing_id():
    labels = np.array([[1, 2]])
    with pytest.raises(UnknownSegmentId):
        imaging.render_saliency({1: 0.5}, labels)


# --- file round trips ------------------------------------------------------

def test_png_round_trip(tmp_path):
    x = np.arange(64, dtype=np.float64).reshape(8, 8) / 63.0
    q = np.rint(x * 255) / 255.0
    p = tmp_path / "img.png"
    imaging.save_png(x, p)
    back = imaging.load_png(p)
    assert back.shape == x.shape
    assert np.array_equal(back, q)


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    x = np.rint(rng.random((11, 7)) * 255) / 255.0
    p = tmp_path / "img.pgm"
    imaging.save_pgm(x, p)
    assert np.array_equal(imaging.load_pgm(p), x)


def test_pgm_reads_comments(tmp_path):
    p = tmp_path / "c.pgm"
    body = bytes([0, 128, 255, 64])
    p.write_bytes(b"P5\n# a comment\n2 2\n# another\n255\n" + body)
    arr = imaging.load_pgm(p)
    assert arr.shape == (2, 2)
    assert arr[0, 0] == 0.0 and arr[0, 1] == 128 / 255.0 and arr[1, 0] == 1.0


def test_saliency_json_round_trip(tmp_path):
    sal = np.array([[0.5, -1.0], [2.0, 0.0]])
    p = tmp_path / "sal.json"
    imaging.save_saliency_json(sal, p)
    assert np.array_equal(imaging.load_saliency_json(p), sal)
    assert np.array_equal(imaging.load_saliency(p), sal)


def test_saliency_heat_png_colors(tmp_path):
    from PIL import Image as PILImage
    sal = np.array([[1.0, -1.0], [0.0, 0.0]])
    base = np.full((2, 2), 0.5)
    p = tmp_path / "heat.png"
    imaging.save_saliency_png(sal, base, p)
    rgb = np.asarray(PILImage.open(p))
    assert rgb.shape == (2, 2, 3)
    r, g, b = rgb[0, 0]
    assert r > g and r > b          # positive score leans red
    r, g, b = rgb[0, 1]
    assert b > g and b > r          # negative score leans blue
    assert len(set(rgb[1, 0])) == 1  # untouched pixel stays gray


def test_validate_image_rejects_bad_input():
    with pytest.raises(DimensionMismatch):
        imaging.validate_image(np.zeros((2, 2, 3)))
    with pytest.raises(ValueError):
        imaging.validate_image(np.array([[0.0, 1.5]]))
