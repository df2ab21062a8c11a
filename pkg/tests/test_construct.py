"""Cell-descriptor and edge-construction oracles: empty-circumcircle brute
force for Delaunay, naive pair counting for co-occurrence, analytic shapes
for morphology and Fourier descriptors."""

import numpy as np
import pytest
from scipy import stats as sps

from cellgraph.construct import (
    FEATURE_DIM, FEATURE_NAMES, InstanceMask, build_cell_graph, cell_contour,
    color_stats, delaunay, extract_descriptors, fourier_shape, glcm_matrix,
    glcm_properties, glcm_stats, morphology_stats, prune_and_weight,
    quantize_gray, spatial_edges,
)
from cellgraph.construct.descriptors import GLCM_LEVELS, GLCM_OFFSETS


# ---------------------------------------------------------------------------
# Delaunay oracle


def delaunay_bruteforce(pts, eps=1e-9):
    """An edge is Delaunay iff some circumcircle through its endpoints is
    empty of all other points."""
    pts = np.asarray(pts, dtype=np.float64)
    n = len(pts)
    edges = set()
    ks = np.arange(n)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = pts[i], pts[j]
            c = pts
            d = 2.0 * (a[0] * (b[1] - c[:, 1]) + b[0] * (c[:, 1] - a[1])
                       + c[:, 0] * (a[1] - b[1]))
            ok_k = np.abs(d) > 1e-12
            sa, sb = a @ a, b @ b
            sc = (c * c).sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                ux = (sa * (b[1] - c[:, 1]) + sb * (c[:, 1] - a[1])
                      + sc * (a[1] - b[1])) / d
                uy = (sa * (c[:, 0] - b[0]) + sb * (a[0] - c[:, 0])
                      + sc * (b[0] - a[0])) / d
            centers = np.stack([np.where(ok_k, ux, 0.0), np.where(ok_k, uy, 0.0)], axis=1)
            r2 = ((a - centers) ** 2).sum(axis=1)
            d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)  # (m, k)
            inside = d2 < r2[None, :] - eps * np.maximum(r2[None, :], 1.0)
            inside[i] = inside[j] = False
            inside[ks, ks] = False
            empty = ok_k & ~inside.any(axis=0)
            empty[i] = empty[j] = False
            if empty.any():
                edges.add((i, j))
    return edges


@pytest.mark.parametrize("seed", range(10))
def test_delaunay_matches_bruteforce(seed):
    r = np.random.default_rng(seed)
    pts = r.uniform(0, 100, size=(int(r.integers(4, 25)), 2))
    assert set(delaunay(pts)) == delaunay_bruteforce(pts)


def test_delaunay_two_points():
    assert delaunay(np.array([[0.0, 0.0], [1.0, 1.0]])) == [(0, 1)]


def test_delaunay_collinear_chain():
    pts = np.array([[3.0, 3.0], [0.0, 0.0], [2.0, 2.0], [1.0, 1.0]])
    # chain along the line: 1-3, 3-2, 2-0
    assert set(delaunay(pts)) == {(1, 3), (2, 3), (0, 2)}


def test_delaunay_rejects_single_point():
    with pytest.raises(ValueError):
        delaunay(np.array([[0.0, 0.0]]))


def test_pruning_is_strict_at_cap():
    pts = np.array([[0.0, 0.0], [100.0, 0.0], [99.0, 50.0], [3.0, 4.0]])
    ei, w = prune_and_weight([(0, 1), (0, 3), (1, 2)], pts)
    # the 100.0 edge is gone, the 5.0 (3-4-5 triangle) edge stays
    assert [tuple(e) for e in ei] == [(0, 3), (1, 2)]
    assert w[0] == np.float32(5.0)
    assert np.all((w > 0) & (w < 100))


def test_spatial_edges_merges_coincident_centroids():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])
    ei, w = spatial_edges(pts)
    assert ei.min() >= 0 and 1 not in ei[:, 0] and 1 not in ei[:, 1]
    assert np.all(w > 0)


# ---------------------------------------------------------------------------
# co-occurrence texture


def glcm_bruteforce(quantized, mask, offset):
    """Naive per-pixel pair counting."""
    dr, dc = offset
    h, w = quantized.shape
    counts = np.zeros((GLCM_LEVELS, GLCM_LEVELS))
    for r in range(h):
        for c in range(w):
            r2, c2 = r + dr, c + dc
            if 0 <= r2 < h and 0 <= c2 < w and mask[r, c] and mask[r2, c2]:
                counts[quantized[r, c], quantized[r2, c2]] += 1
    counts = counts + counts.T
    return counts / counts.sum() if counts.sum() else None


@pytest.mark.parametrize("seed", range(5))
def test_glcm_matches_naive_counting(seed):
    r = np.random.default_rng(seed)
    patch = r.integers(0, 256, size=(9, 7)).astype(np.uint8)
    mask = r.random((9, 7)) < 0.7
    q = quantize_gray(patch)
    for off in GLCM_OFFSETS:
        got = glcm_matrix(q, mask, off)
        want = glcm_bruteforce(q, mask, off)
        if want is None:
            assert got is None
        else:
            assert np.abs(got - want).max() < 1e-12


def test_quantize_gray_bins():
    g = np.array([0, 7, 8, 255], dtype=np.uint8)
    assert list(quantize_gray(g)) == [0, 0, 1, 31]


def test_glcm_constant_patch_properties():
    p = glcm_matrix(np.full((5, 5), 12), np.ones((5, 5), bool), (0, 1))
    props = glcm_properties(p)
    assert props["asm"] == 1.0 and props["energy"] == 1.0
    assert props["contrast"] == 0.0 and props["dissimilarity"] == 0.0
    assert props["homogeneity"] == 1.0
    assert props["correlation"] == 1.0          # zero-variance convention


def test_glcm_checkerboard_contrast():
    patch = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    feats = glcm_stats(patch, np.ones((2, 2), bool))
    names = [f"{s} {p}" for s in ("mean", "std", "skew", "kurtosis", "min", "max")
             for p in ("asm", "contrast", "correlation", "dissimilarity",
                       "energy", "homogeneity")]
    by_name = dict(zip(names, feats))
    # horizontal/vertical pairs are (0, 31): contrast 31^2; diagonals are equal
    assert by_name["max contrast"] == pytest.approx(961.0)
    assert by_name["min contrast"] == pytest.approx(0.0)
    assert by_name["mean contrast"] == pytest.approx(480.5)


def test_glcm_tiny_mask_zero_convention():
    assert glcm_stats(np.zeros((3, 3), dtype=np.uint8),
                      np.eye(3, dtype=bool)[:1].reshape(1, 3) * False) == [0.0] * 36
    one = np.zeros((3, 3), bool)
    one[1, 1] = True
    assert glcm_stats(np.zeros((3, 3), dtype=np.uint8), one) == [0.0] * 36


# ---------------------------------------------------------------------------
# color statistics


def test_color_stats_against_scipy(rng):
    image = rng.integers(0, 256, size=(8, 8, 3)).astype(np.uint8)
    mask = rng.random((8, 8)) < 0.6
    out = np.array(color_stats(image, mask))
    px = image[mask].astype(np.float64)
    for ch in range(3):
        v = px[:, ch]
        want = [v.min(), v.max(), v.mean(), v.std(),
                sps.skew(v), sps.kurtosis(v)]       # population moments
        got = out[[0 * 3 + ch, 1 * 3 + ch, 2 * 3 + ch,
                   3 * 3 + ch, 4 * 3 + ch, 5 * 3 + ch]]
        assert np.allclose(got, want, atol=1e-9)
    gray = px @ np.array([0.299, 0.587, 0.114])
    assert np.allclose(out[18:24], [gray.mean(), gray.std(), sps.skew(gray),
                                    sps.kurtosis(gray), gray.min(), gray.max()],
                       atol=1e-9)


def test_color_stats_constant_pixels():
    image = np.full((4, 4, 3), 100, dtype=np.uint8)
    out = np.array(color_stats(image, np.ones((4, 4), bool)))
    assert np.allclose(out[9:12], 0.0)        # std per channel
    assert np.allclose(out[12:18], 0.0)       # skew/kurtosis per channel


# ---------------------------------------------------------------------------
# morphology and Fourier shape


def _disk_mask(radius, pad=2):
    n = 2 * (radius + pad) + 1
    yy, xx = np.mgrid[:n, :n]
    cy = cx = radius + pad
    return ((yy - cy) ** 2 + (xx - cx) ** 2) <= radius ** 2


def test_morphology_disk():
    mask = _disk_mask(10)
    ps = 0.5
    vec = morphology_stats(mask, ps, probability=0.9)
    names = FEATURE_NAMES[24:37]
    by_name = dict(zip(names, vec))
    assert by_name["probability"] == 0.9
    assert by_name["area"] == pytest.approx(mask.sum() * ps * ps)
    assert by_name["area"] == pytest.approx(np.pi * (10 * ps) ** 2, rel=0.05)
    assert 0.85 < by_name["circularity"] < 1.15
    assert by_name["eccentricity"] < 0.3
    assert by_name["solidity"] > 0.9
    assert by_name["elongation"] < 1.1
    assert by_name["fourier_descriptor_20"] < 0.05
    assert by_name["fourier_descriptor_30"] < 0.05


def test_morphology_square_exact():
    mask = np.ones((11, 11), bool)
    vec = morphology_stats(mask, 1.0, probability=1.0)
    by_name = dict(zip(FEATURE_NAMES[24:37], vec))
    assert by_name["area"] == 121.0
    assert by_name["extent"] == 1.0
    assert by_name["solidity"] == 1.0


def test_fourier_circle_is_flat():
    theta = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    circle = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    fd20, fd30 = fourier_shape(circle)
    assert fd20 < 1e-6 and fd30 < 1e-6


def test_fourier_similarity_invariance():
    theta = np.linspace(0, 2 * np.pi, 150, endpoint=False)
    r = 1.0 + 0.25 * np.cos(20 * theta) + 0.1 * np.sin(30 * theta)
    base = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    f0 = fourier_shape(base)
    rot = np.pi / 7
    R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
    for variant in (base + np.array([5.0, -3.0]), 4.0 * base, base @ R.T):
        fv = fourier_shape(variant)
        assert np.allclose(fv, f0, atol=1e-7)
    assert f0[0] > 0.05                       # 20-fold bump shows up at k=20


def test_fourier_degenerate_contour():
    assert fourier_shape(np.zeros((2, 2))) == (0.0, 0.0)


def test_cell_contour_closed_and_near_boundary():
    mask = _disk_mask(6)
    contour = cell_contour(mask)
    assert contour is not None
    cy = cx = mask.shape[0] // 2
    d = np.linalg.norm(contour - [cy, cx], axis=1)
    assert np.all(np.abs(d - 6) < 1.5)


# ---------------------------------------------------------------------------
# full extraction


def _two_cell_scene():
    labels = np.zeros((30, 40), dtype=np.int32)
    labels[5:15, 5:15] = 1
    labels[18:28, 25:38] = 2
    rng = np.random.default_rng(3)
    image = rng.integers(0, 256, size=(30, 40, 3)).astype(np.uint8)
    return image, InstanceMask(labels=labels, pixel_size_um=0.5)


def test_feature_vector_layout():
    assert FEATURE_DIM == 73
    assert len(FEATURE_NAMES) == 73
    assert len(set(FEATURE_NAMES)) == 73


def test_extract_descriptors_two_cells():
    image, mask = _two_cell_scene()
    feats, centroids = extract_descriptors(image, mask)
    assert feats.shape == (2, 73) and feats.dtype == np.float32
    assert np.all(np.isfinite(feats))
    # centroid of cell 1: pixel block [5, 15) in both axes
    assert centroids[0] == pytest.approx([9.5 * 0.5, 9.5 * 0.5])
    assert centroids[1][0] == pytest.approx(31.0 * 0.5)


def test_extract_descriptors_probability_passthrough():
    image, mask = _two_cell_scene()
    feats, _ = extract_descriptors(image, mask, probabilities={1: 0.25})
    prob_col = FEATURE_NAMES.index("probability")
    assert feats[0, prob_col] == np.float32(0.25)
    assert feats[1, prob_col] == 1.0


def test_extract_descriptors_shape_mismatch():
    image, mask = _two_cell_scene()
    with pytest.raises(ValueError, match="mismatch"):
        extract_descriptors(image[:10], mask)


def test_build_cell_graph_grid():
    labels = np.zeros((50, 50), dtype=np.int32)
    k = 1
    for r in range(4):
        for c in range(5):
            labels[2 + r * 12: 8 + r * 12, 2 + c * 9: 8 + c * 9] = k
            k += 1
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, size=(50, 50, 3)).astype(np.uint8)
    g = build_cell_graph(image, InstanceMask(labels=labels, pixel_size_um=1.0))
    assert g.num_nodes == 20
    assert g.num_edges > 20
    g.validate()


def test_build_cell_graph_empty_mask():
    g = build_cell_graph(np.zeros((10, 10, 3), dtype=np.uint8),
                         InstanceMask(labels=np.zeros((10, 10), dtype=np.int32),
                                      pixel_size_um=1.0))
    assert g.num_nodes == 0 and g.num_edges == 0
    assert g.node_features.shape == (0, FEATURE_DIM)
