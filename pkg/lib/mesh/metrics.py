import numpy as np
from scipy.spatial import cKDTree

from lib.errors import ShapeMismatch
from lib.mesh.models import Mesh


def per_vertex_error(a: Mesh, b: Mesh) -> np.ndarray:
    """Euclidean distance between corresponding vertices."""
    if a.vertex_count != b.vertex_count:
        raise ShapeMismatch(f"{a.vertex_count} vs {b.vertex_count} vertices")
    return np.linalg.norm(a.vertices - b.vertices, axis=1)


def _normalize(rms: float, reference: Mesh) -> float:
    diagonal = reference.bbox_diagonal
    return rms / diagonal if diagonal > 0 else rms


def rmse_distortion(a: Mesh, b: Mesh) -> float:
    """RMS per-vertex error divided by the bounding-box diagonal of ``b``."""
    errors = per_vertex_error(a, b)
    if not len(errors):
        return 0.0
    return _normalize(float(np.sqrt(np.mean(errors**2))), b)


def nearest_rmse_distortion(a: Mesh, b: Mesh) -> float:
    """One-sided nearest-neighbour RMS from ``a`` to ``b``, normalised like rmse.

    Used when the two frames do not share vertex correspondence.
    """
    if not a.vertex_count or not b.vertex_count:
        return 0.0
    distances, _ = cKDTree(b.vertices).query(a.vertices, k=1)
    return _normalize(float(np.sqrt(np.mean(distances**2))), b)


def frame_distortion(predicted: Mesh, target: Mesh) -> float:
    if predicted.vertex_count == target.vertex_count:
        return rmse_distortion(predicted, target)
    return nearest_rmse_distortion(predicted, target)
