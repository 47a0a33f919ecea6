"""Global descriptor aggregation, region grids, ranking (cosine and graph
diffusion), and the retrieval/saliency evaluation protocol."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptors import WhiteningModel, apply_whitening, max_pool
from .graph import mutual_knn_adjacency, normalize_adjacency, regularized_laplacian_apply, solve_cg
from .store import ActivationMap, GroundTruth, PixelBox, Rectangle

SOURCES = ("mac", "uniform", "fs", "os", "os-tri")


@dataclass
class GlobalDescriptor:
    image_id: str
    vector: np.ndarray
    source: str


def aggregate_global(
    amap: ActivationMap,
    regions: list[Rectangle],
    model: WhiteningModel,
    image_id: str = "",
    source: str = "mac",
) -> GlobalDescriptor:
    """Sum the l2-normalized per-region max-pool descriptors and whiten the
    sum. An empty region list (or one whose regions all pool to zero) falls
    back to the whole map and the record is tagged "mac"."""
    pooled = []
    for rect in regions:
        z = max_pool(amap, rect)
        norm = np.linalg.norm(z)
        if norm > 0:
            pooled.append(z / norm)
    fallback = not pooled
    if fallback:
        pooled = [max_pool(amap, amap.full_rectangle())]
    total = np.sum(pooled, axis=0)
    vector = apply_whitening(model, total)
    return GlobalDescriptor(image_id=image_id, vector=vector, source="mac" if fallback else source)


def _axis_positions(extent: int, side: int) -> list[int]:
    """1-based start offsets placing side-long windows along an axis so that
    consecutive windows overlap by at least 40% (up to cell rounding)."""
    span = extent - side
    if span <= 0:
        return [1]
    steps = int(np.ceil(span / (0.6 * side)))
    starts = dict.fromkeys(1 + int(np.floor(t * span / steps + 0.5)) for t in range(steps + 1))
    return list(starts)


def uniform_regions(shape: tuple[int, int], scales: int = 3) -> list[Rectangle]:
    """Square sampling grid over the map: at scale l the window side is
    ceil(2 * min(h, w) / (l + 1)); duplicates across scales are merged."""
    h, w = shape
    if h < 1 or w < 1 or scales < 1:
        raise ValueError("bad shape or scale count")
    out: dict[Rectangle, None] = {}
    for level in range(1, scales + 1):
        side = int(np.ceil(2.0 * min(h, w) / (level + 1)))
        for top in _axis_positions(h, side):
            for left in _axis_positions(w, side):
                out.setdefault(Rectangle(top, left, top + side - 1, left + side - 1))
    return list(out)


def triangle_expand(regions: list[Rectangle], scales: int = 2) -> list[Rectangle]:
    """Original regions plus a uniform grid sampled inside each of them."""
    out: dict[Rectangle, None] = dict.fromkeys(regions)
    for rect in regions:
        height = rect.bottom - rect.top + 1
        width = rect.right - rect.left + 1
        for sub in uniform_regions((height, width), scales):
            out.setdefault(
                Rectangle(
                    rect.top + sub.top - 1,
                    rect.left + sub.left - 1,
                    rect.top + sub.bottom - 1,
                    rect.left + sub.right - 1,
                )
            )
    return list(out)


def pixel_box_to_cells(box: PixelBox, stride: int, shape: tuple[int, int]) -> Rectangle:
    """Map a pixel box to the feature cells it touches (outward rounding),
    clipped to the map. A box lying entirely off the map is an error."""
    h, w = shape
    if box.top > box.bottom or box.left > box.right or box.top < 0 or box.left < 0:
        raise ValueError(f"degenerate box {box}")
    top = box.top // stride + 1
    left = box.left // stride + 1
    bottom = box.bottom // stride + 1
    right = box.right // stride + 1
    if top > h or left > w:
        raise ValueError(f"box {box} outside the {h}x{w} map at stride {stride}")
    return Rectangle(top, left, min(bottom, h), min(right, w))


def query_descriptor(amap: ActivationMap, box: PixelBox, model: WhiteningModel) -> np.ndarray:
    """Whitened max-pool over the cells covered by the pixel box."""
    rect = pixel_box_to_cells(box, amap.stride, (amap.height, amap.width))
    return apply_whitening(model, max_pool(amap, rect))


def rank_cosine(query: np.ndarray, descriptors: np.ndarray, ids: list[str]) -> list[tuple[str, float]]:
    """Database ids by descending inner product; ties by ascending id."""
    scores = np.asarray(descriptors, dtype=np.float64) @ np.asarray(query, dtype=np.float64)
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [(ids[i], float(scores[i])) for i in order]


def diffuse(
    query: np.ndarray,
    descriptors: np.ndarray,
    ids: list[str],
    k: int = 50,
    beta: float = 3.0,
    alpha: float = 0.99,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> list[tuple[str, float]]:
    """Rank by diffusing the query's truncated similarities over the mutual
    k-NN graph of the database descriptors.

    The source vector holds the clamped similarity (raised to beta) on the
    query's k nearest database items and zero elsewhere; scores solve the
    regularized Laplacian against it. alpha=0 reduces to the truncated cosine
    ranking; vertices unreachable from the source stay at exactly zero.
    """
    D = np.asarray(descriptors, dtype=np.float64)
    adjacency_norm = normalize_adjacency(mutual_knn_adjacency(D, k, beta))
    sims = D @ np.asarray(query, dtype=np.float64)
    nearest = np.argsort(-sims, kind="stable")[: min(k, len(ids))]
    source = np.zeros(len(ids))
    source[nearest] = np.clip(sims[nearest], 0.0, 1.0) ** beta
    scores = solve_cg(lambda x: regularized_laplacian_apply(adjacency_norm, alpha, x), source, tol, max_iter)
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [(ids[i], float(scores[i])) for i in order]


def average_precision(ranking: list[str], positives: set[str], junk: set[str]) -> float:
    """Area under precision at each positive, junk entries removed first;
    positives missing from the ranking contribute zero."""
    if not positives:
        raise ValueError("query has no positives")
    hits = 0
    total = 0.0
    rank = 0
    for image_id in ranking:
        if image_id in junk:
            continue
        rank += 1
        if image_id in positives:
            hits += 1
            total += hits / rank
    return total / len(positives)


def mean_average_precision(
    rankings: dict[str, list[str]], ground_truth: GroundTruth
) -> tuple[float, dict[str, float]]:
    if not rankings:
        raise ValueError("no rankings to evaluate")
    per_query = {
        query_id: average_precision(
            ranking, ground_truth.positives.get(query_id, set()), ground_truth.junk.get(query_id, set())
        )
        for query_id, ranking in rankings.items()
    }
    return float(np.mean(list(per_query.values()))), per_query


def saliency_precision(saliency: np.ndarray, boxes: list[Rectangle]) -> float:
    """Fraction of total saliency mass inside the union of the boxes; zero
    when the map carries no mass."""
    saliency = np.asarray(saliency, dtype=np.float64)
    total = float(saliency.sum())
    if total == 0.0:
        return 0.0
    h, w = saliency.shape
    mask = np.zeros((h, w), dtype=bool)
    for box in boxes:
        if box.top < 1 or box.left < 1 or box.bottom > h or box.right > w or box.top > box.bottom:
            raise ValueError(f"box {box} outside {h}x{w} map")
        mask[box.top - 1 : box.bottom, box.left - 1 : box.right] = True
    return float(saliency[mask].sum()) / total
