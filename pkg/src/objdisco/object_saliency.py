"""Object saliency: regress a dataset-aware saliency map onto each image by
matching local patch descriptors against the indexed region descriptors,
weighting matches by region saliency and graph centrality."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .descriptors import WhiteningModel, apply_whitening, apply_whitening_rows, max_pool
from .store import ActivationMap, Rectangle


@dataclass
class RegionIndex:
    """Searchable table of whitened region descriptors with their feature
    saliencies and centralities; k is the neighbor count used per patch."""

    vectors: np.ndarray
    saliencies: np.ndarray
    centralities: np.ndarray
    k: int

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.saliencies = np.asarray(self.saliencies, dtype=np.float64)
        self.centralities = np.asarray(self.centralities, dtype=np.float64)
        n = self.vectors.shape[0]
        if n == 0:
            raise ValueError("empty region index")
        if len(self.saliencies) != n or len(self.centralities) != n:
            raise ValueError("index arrays disagree on region count")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("region descriptors must be unit-norm")
        if self.k < 1:
            raise ValueError("k must be at least 1")

    def __len__(self) -> int:
        return int(self.vectors.shape[0])


def patch_descriptor(
    amap: ActivationMap, position: tuple[int, int], patch_side: int, model: WhiteningModel
) -> np.ndarray | None:
    """Whitened max-pool over the square window centered on the cell, clipped
    at the borders. Returns None when the window holds no activation."""
    if patch_side < 1 or patch_side % 2 == 0:
        raise ValueError("patch side must be odd and positive")
    row, col = position
    if not (1 <= row <= amap.height and 1 <= col <= amap.width):
        raise ValueError(f"position {position} outside map")
    half = patch_side // 2
    rect = Rectangle(
        max(1, row - half), max(1, col - half), min(amap.height, row + half), min(amap.width, col + half)
    )
    pooled = max_pool(amap, rect)
    if not pooled.any():
        return None
    try:
        return apply_whitening(model, pooled)
    except ValueError:
        return None


def object_saliency_map(
    amap: ActivationMap,
    feature_saliency: np.ndarray,
    index: RegionIndex,
    model: WhiteningModel,
    theta_img: float = 2.0,
    theta_nbr: float = 3.0,
    beta: float = 3.0,
    patch_side: int = 3,
) -> np.ndarray:
    """Score every cell by its k nearest region descriptors and rescale to
    max 1.

    Cell score = (feature saliency ** theta_img) * sum over neighbors of
    (clamped similarity ** beta) * (region saliency ** theta_nbr) * centrality.
    Cells with zero feature saliency are skipped outright, so the output is
    zero wherever the input saliency is; cells whose patch pools to zero (or
    collapses under whitening) score zero as well.
    """
    if patch_side < 1 or patch_side % 2 == 0:
        raise ValueError("patch side must be odd and positive")
    fsal = np.asarray(feature_saliency, dtype=np.float64)
    if fsal.shape != (amap.height, amap.width):
        raise ValueError("feature saliency shape does not match activation map")
    out = np.zeros_like(fsal)
    mask = fsal > 0
    if not mask.any():
        return out

    pooled = ndimage.maximum_filter(
        amap.values.astype(np.float64), size=(patch_side, patch_side, 1), mode="constant", cval=0.0
    )
    patches = pooled[mask]
    U, valid = apply_whitening_rows(model, patches)

    k = min(index.k, len(index))
    sims = U @ index.vectors.T
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    top_sims = np.clip(np.take_along_axis(sims, order, axis=1), 0.0, 1.0)
    region_weight = (index.saliencies**theta_nbr) * index.centralities
    scores = (top_sims**beta * region_weight[order]).sum(axis=1)
    scores[~valid] = 0.0

    out[mask] = fsal[mask] ** theta_img * scores
    peak = out.max()
    if peak > 0:
        out /= peak
    return out
