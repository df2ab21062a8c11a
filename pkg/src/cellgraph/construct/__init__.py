from .delaunay import delaunay, prune_and_weight
from .descriptors import (
    FEATURE_DIM, FEATURE_NAMES, InstanceMask,
    extract_descriptors, glcm_stats, glcm_matrix, glcm_properties,
    quantize_gray, fourier_shape, cell_contour, morphology_stats, color_stats,
)
from .build import build_cell_graph, spatial_edges
