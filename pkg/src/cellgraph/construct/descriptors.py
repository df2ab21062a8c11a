"""Per-cell descriptors: color intensity statistics, region morphology,
co-occurrence texture, and Fourier shape coefficients.

The 73 scalars per cell follow a fixed order: 24 color, 13 morphology,
36 texture (see FEATURE_NAMES).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure

GLCM_LEVELS = 32
# (row, col) offsets for angles 0, 45, 90, 135 degrees at distance 1 px
GLCM_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))
GLCM_PROPS = ("asm", "contrast", "correlation", "dissimilarity", "energy", "homogeneity")
_STAT_NAMES = ("mean", "std", "skew", "kurtosis", "min", "max")

# grayscale conversion weights (ITU-R 601 luma)
_GRAY_W = np.array([0.299, 0.587, 0.114])

FEATURE_NAMES = tuple(
    [f"{s} intensity {c}" for s in ("min", "max", "mean", "std", "skew", "kurtosis")
     for c in ("R", "G", "B")]
    + [f"{s} intensity gray" for s in ("mean", "std", "skew", "kurtosis", "min", "max")]
    + ["probability", "orientation", "axis_major_length", "axis_minor_length",
       "eccentricity", "area", "perimeter", "circularity", "elongation",
       "solidity", "extent", "fourier_descriptor_20", "fourier_descriptor_30"]
    + [f"{s} {p}" for s in _STAT_NAMES for p in GLCM_PROPS]
)

FEATURE_DIM = len(FEATURE_NAMES)


@dataclass
class InstanceMask:
    """Per-pixel instance labels; 0 is background."""

    labels: np.ndarray           # (H, W) integer
    pixel_size_um: float

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.pixel_size_um <= 0:
            raise ValueError("pixel size must be positive")

    def instance_ids(self):
        ids = np.unique(self.labels)
        return ids[ids > 0]


def _moment_stats(values):
    """(mean, std, skew, excess kurtosis, min, max); constant input gives
    zero skew/kurtosis instead of 0/0."""
    v = np.asarray(values, dtype=np.float64)
    mean = v.mean()
    centered = v - mean
    m2 = (centered ** 2).mean()
    std = np.sqrt(m2)
    if m2 <= 0:
        return mean, 0.0, 0.0, 0.0, v.min(), v.max()
    skew = (centered ** 3).mean() / m2 ** 1.5
    kurt = (centered ** 4).mean() / m2 ** 2 - 3.0
    return mean, std, skew, kurt, v.min(), v.max()


def color_stats(image, pixel_mask):
    """24 intensity statistics over the masked pixels of an RGB image."""
    px = image[pixel_mask].astype(np.float64)     # (m, 3)
    out = []
    channels = [px[:, 0], px[:, 1], px[:, 2]]
    stats = [_moment_stats(c) for c in channels]
    for stat_idx in range(6):                      # min, max, mean, std, skew, kurt per R,G,B
        order = {0: 4, 1: 5, 2: 0, 3: 1, 4: 2, 5: 3}[stat_idx]
        for s in stats:
            out.append(s[order])
    gray = px @ _GRAY_W
    gm, gs, gsk, gk, gmin, gmax = _moment_stats(gray)
    out.extend([gm, gs, gsk, gk, gmin, gmax])
    return out


def glcm_matrix(quantized, pixel_mask, offset):
    """Symmetric, normalized co-occurrence matrix for one pixel offset.

    Only pairs whose both endpoints are masked are counted. Returns None
    when the offset yields no valid pair.
    """
    dr, dc = offset
    h, w = quantized.shape
    r0 = slice(max(0, -dr), min(h, h - dr))
    c0 = slice(max(0, -dc), min(w, w - dc))
    r1 = slice(max(0, dr), min(h, h + dr))
    c1 = slice(max(0, dc), min(w, w + dc))
    valid = pixel_mask[r0, c0] & pixel_mask[r1, c1]
    if not valid.any():
        return None
    a = quantized[r0, c0][valid].astype(np.int64)
    b = quantized[r1, c1][valid].astype(np.int64)
    counts = np.zeros((GLCM_LEVELS, GLCM_LEVELS), dtype=np.float64)
    np.add.at(counts, (a, b), 1.0)
    counts = counts + counts.T
    return counts / counts.sum()


def glcm_properties(p):
    """Six Haralick-style scalars of one normalized co-occurrence matrix."""
    idx = np.arange(GLCM_LEVELS, dtype=np.float64)
    i = idx[:, None]
    j = idx[None, :]
    asm = float((p ** 2).sum())
    contrast = float((p * (i - j) ** 2).sum())
    dissimilarity = float((p * np.abs(i - j)).sum())
    homogeneity = float((p / (1.0 + (i - j) ** 2)).sum())
    energy = float(np.sqrt(asm))
    mu_i = float((p * i).sum())
    mu_j = float((p * j).sum())
    var_i = float((p * (i - mu_i) ** 2).sum())
    var_j = float((p * (j - mu_j) ** 2).sum())
    if var_i <= 0 or var_j <= 0:
        correlation = 1.0                          # constant patch convention
    else:
        correlation = float((p * (i - mu_i) * (j - mu_j)).sum() / np.sqrt(var_i * var_j))
    return {"asm": asm, "contrast": contrast, "correlation": correlation,
            "dissimilarity": dissimilarity, "energy": energy, "homogeneity": homogeneity}


def quantize_gray(gray_u8):
    """Map 8-bit grayscale to GLCM_LEVELS bins."""
    return (gray_u8.astype(np.int64) * GLCM_LEVELS) // 256


def glcm_stats(gray_u8, pixel_mask):
    """36 texture scalars: the six co-occurrence properties summarized by
    mean/std/skew/kurtosis/min/max over the four offsets.

    Cells with fewer than 2 masked pixels (or no co-occurring pairs at
    all) get all-zero texture by convention.
    """
    if pixel_mask.sum() < 2:
        return [0.0] * 36
    q = quantize_gray(gray_u8)
    per_angle = []
    for off in GLCM_OFFSETS:
        p = glcm_matrix(q, pixel_mask, off)
        per_angle.append(None if p is None else glcm_properties(p))
    if all(a is None for a in per_angle):
        return [0.0] * 36
    out = []
    for stat_idx in range(6):
        for prop in GLCM_PROPS:
            vals = [a[prop] if a is not None else 0.0 for a in per_angle]
            out.append(_moment_stats(vals)[stat_idx])
    return out


def _resample_closed(points, n_samples):
    """Resample a closed polyline to n_samples points, uniform in arc length."""
    pts = np.asarray(points, dtype=np.float64)
    closed = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    total = seg.sum()
    if total <= 0:
        return None
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, total, n_samples, endpoint=False)
    out = np.empty((n_samples, 2))
    for d in range(2):
        out[:, d] = np.interp(targets, cum, closed[:, d])
    return out


def fourier_shape(contour, n_samples=64):
    """Normalized DFT magnitudes (k=20, k=30) of the centroid-distance
    signature of a closed contour; (0, 0) for degenerate contours."""
    contour = np.asarray(contour, dtype=np.float64)
    if len(contour) < 3:
        return 0.0, 0.0
    resampled = _resample_closed(contour, n_samples)
    if resampled is None:
        return 0.0, 0.0
    centroid = resampled.mean(axis=0)
    signature = np.linalg.norm(resampled - centroid, axis=1)
    coeffs = np.abs(np.fft.rfft(signature))
    if coeffs[0] <= 1e-12:
        return 0.0, 0.0
    return float(coeffs[20] / coeffs[0]), float(coeffs[30] / coeffs[0])


def cell_contour(pixel_mask):
    """Longest iso-contour of a binary cell mask, in pixel coordinates."""
    padded = np.pad(pixel_mask.astype(np.float64), 1)
    contours = measure.find_contours(padded, 0.5)
    if not contours:
        return None
    longest = max(contours, key=len)
    return longest - 1.0                            # undo the pad offset


def morphology_stats(pixel_mask, pixel_size_um, probability):
    """13 morphology scalars for one cell's binary mask."""
    props = measure.regionprops(pixel_mask.astype(np.uint8))[0]
    ps = pixel_size_um
    area = props.area * ps * ps
    perimeter = props.perimeter * ps
    # circularity from the same contour measurements as the perimeter
    circularity = 4.0 * np.pi * props.area / props.perimeter ** 2 if props.perimeter > 0 else 0.0
    minor = props.axis_minor_length
    elongation = props.axis_major_length / minor if minor > 0 else 1.0
    fd20, fd30 = 0.0, 0.0
    contour = cell_contour(pixel_mask)
    if contour is not None:
        fd20, fd30 = fourier_shape(contour)
    return [probability, props.orientation,
            props.axis_major_length * ps, props.axis_minor_length * ps,
            props.eccentricity, area, perimeter, circularity, elongation,
            props.solidity, props.extent, fd20, fd30]


def extract_descriptors(image, mask, probabilities=None):
    """Descriptor matrix and centroids for every instance in a mask.

    Returns (features (m, 73) float32, centroids (m, 2) float32 in um),
    instances in ascending id order. probabilities maps instance id ->
    detector probability; missing entries default to 1.0.
    """
    image = np.asarray(image)
    if image.shape[:2] != mask.labels.shape:
        raise ValueError(f"image {image.shape[:2]} / mask {mask.labels.shape} size mismatch")
    ids = mask.instance_ids()
    feats = np.zeros((len(ids), FEATURE_DIM), dtype=np.float32)
    centroids = np.zeros((len(ids), 2), dtype=np.float32)
    gray_u8 = np.clip(image.astype(np.float64) @ _GRAY_W, 0, 255).astype(np.uint8)
    for row, inst in enumerate(ids):
        ys, xs = np.nonzero(mask.labels == inst)
        y0, y1 = ys.min(), ys.max() + 1
        x0, x1 = xs.min(), xs.max() + 1
        cell = (mask.labels[y0:y1, x0:x1] == inst)
        prob = 1.0 if probabilities is None else float(probabilities.get(int(inst), 1.0))
        vec = (color_stats(image, mask.labels == inst)
               + morphology_stats(cell, mask.pixel_size_um, prob)
               + glcm_stats(gray_u8[y0:y1, x0:x1], cell))
        feats[row] = np.asarray(vec, dtype=np.float32)
        centroids[row] = (xs.mean() * mask.pixel_size_um, ys.mean() * mask.pixel_size_um)
    return feats, centroids
