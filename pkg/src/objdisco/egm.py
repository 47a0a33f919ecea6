"""Region detection by fitting an expanding Gaussian mixture to a saliency map.

Every positive cell contributes a sample: a 2-D isotropic Gaussian of scale
sigma centered on the cell and weighted by its saliency. The mixture starts
with one component per sample and alternates E/M averaging steps with a
purge step that removes components overlapping better-weighted survivors,
so the component count only ever shrinks. Surviving components are cut into
axis-aligned rectangles at a fixed number of standard deviations.

All positions are (row, col), 1-based, matching cell coordinates elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .store import Rectangle

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class WeightedGaussian:
    """A scaled 2-D Gaussian with diagonal covariance.

    weight scales the density; mean is (row, col); cov holds the two diagonal
    covariance entries (row axis, col axis).
    """

    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class EgmConfig:
    sigma: float = 2.5
    kappa: float = 0.5
    max_iterations: int = 50
    move_tolerance: float = 0.1
    weight_floor: float = 1e-8
    mass_weighted: bool = True
    cov_floor: float = 0.25


def gaussian_inner(a: WeightedGaussian, b: WeightedGaussian) -> float:
    """L2 inner product of two weighted Gaussians in closed form.

    The integral of the product of two Gaussian densities is itself a Gaussian
    density evaluated at the mean difference, with summed covariances.
    """
    cov = np.asarray(a.cov, dtype=np.float64) + np.asarray(b.cov, dtype=np.float64)
    if (cov <= 0).any():
        raise ValueError("covariances must be positive")
    diff = np.asarray(a.mean, dtype=np.float64) - np.asarray(b.mean, dtype=np.float64)
    log_density = -LOG_2PI - 0.5 * float(np.log(cov).sum()) - 0.5 * float((diff * diff / cov).sum())
    return float(a.weight) * float(b.weight) * float(np.exp(log_density))


def _log_density(positions: np.ndarray, mu: np.ndarray, widened_cov: np.ndarray) -> np.ndarray:
    """Log density of each position under each component, covariance pre-widened
    by the sample scale. Shapes: positions (l, 2), mu (m, 2), widened_cov (m, 2);
    returns (l, m)."""
    dr = positions[:, 0:1] - mu[None, :, 0]
    dc = positions[:, 1:2] - mu[None, :, 1]
    quad = dr * dr / widened_cov[None, :, 0] + dc * dc / widened_cov[None, :, 1]
    return -LOG_2PI - 0.5 * np.log(widened_cov[:, 0] * widened_cov[:, 1])[None, :] - 0.5 * quad


def _responsibilities(
    positions: np.ndarray, pi: np.ndarray, mu: np.ndarray, cov: np.ndarray, sigma: float
) -> np.ndarray:
    """Per-sample posterior over components; rows sum to 1.

    The sample weight cancels between numerator and denominator, so only the
    sample position enters. Computed in log space to survive distant pairs.
    """
    log_g = np.log(np.maximum(pi, 1e-300))[None, :] + _log_density(positions, mu, cov + sigma)
    log_g -= log_g.max(axis=1, keepdims=True)
    gamma = np.exp(log_g)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma


def _purge(pi: np.ndarray, mu: np.ndarray, cov: np.ndarray, config: EgmConfig) -> np.ndarray:
    """Indices of surviving components in descending-weight order.

    A candidate is dropped when its summed inner product with already-kept
    components reaches kappa times its own self inner product. The heaviest
    component always survives.
    """
    order = np.argsort(-pi, kind="stable")
    kept: list[int] = []
    for k in order:
        if kept and pi[k] < config.weight_floor:
            continue
        if kept:
            kept_idx = np.asarray(kept)
            sum_cov = cov[k] + cov[kept_idx]
            diff = mu[k] - mu[kept_idx]
            log_cross = (
                np.log(np.maximum(pi[k] * pi[kept_idx], 1e-300))
                - LOG_2PI
                - 0.5 * np.log(sum_cov[:, 0] * sum_cov[:, 1])
                - 0.5 * (diff[:, 0] ** 2 / sum_cov[:, 0] + diff[:, 1] ** 2 / sum_cov[:, 1])
            )
            log_self = 2.0 * np.log(max(pi[k], 1e-300)) - LOG_2PI - 0.5 * np.log(4.0 * cov[k, 0] * cov[k, 1])
            ratio = float(np.exp(log_cross - log_self).sum())
            if ratio >= config.kappa:
                continue
        kept.append(int(k))
    return np.asarray(kept, dtype=np.int64)


def egm_fit(
    saliency: np.ndarray,
    config: EgmConfig | None = None,
    on_iteration: Callable[[int, int, float], None] | None = None,
) -> list[WeightedGaussian]:
    """Fit the mixture to a preprocessed saliency map.

    Returns at least one component; mixing weights sum to 1. on_iteration, if
    given, is called after each iteration with (iteration, component count,
    max mean movement) so callers can trace the shrinking mixture.
    """
    if config is None:
        config = EgmConfig()
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.ndim != 2:
        raise ValueError("saliency map must be 2-D")
    if not np.isfinite(saliency).all() or saliency.min() < 0:
        raise ValueError("saliency map must be finite and non-negative")
    if config.sigma <= 0:
        raise ValueError("sigma must be positive")
    rows, cols = np.nonzero(saliency > 0)
    if len(rows) == 0:
        raise ValueError("no salient mass: map has no positive cells")
    positions = np.stack([rows + 1.0, cols + 1.0], axis=1)
    weights = saliency[rows, cols]

    pi = weights.copy()
    mu = positions.copy()
    cov = np.full((len(pi), 2), float(config.sigma))

    for iteration in range(1, config.max_iterations + 1):
        gamma = _responsibilities(positions, pi, mu, cov, config.sigma)
        mass = gamma * weights[:, None] if config.mass_weighted else gamma
        lk = np.maximum(mass.sum(axis=0), 1e-300)
        new_mu = (mass.T @ positions) / lk[:, None]
        second = (mass.T @ (positions * positions)) / lk[:, None]
        scatter = np.maximum(second - new_mu * new_mu, 0.0)
        pi = lk / lk.sum()
        movement = float(np.sqrt(((new_mu - mu) ** 2).sum(axis=1)).max())
        mu = new_mu
        cov = np.maximum(config.sigma + scatter, config.cov_floor)

        kept = _purge(pi, mu, cov, config)
        purged = len(kept) < len(pi)
        pi, mu, cov = pi[kept], mu[kept], cov[kept]
        pi = pi / pi.sum()
        if on_iteration is not None:
            on_iteration(iteration, len(pi), movement)
        if not purged and movement < config.move_tolerance:
            break

    return [WeightedGaussian(weight=float(p), mean=m.copy(), cov=c.copy()) for p, m, c in zip(pi, mu, cov)]


def components_to_regions(
    components: list[WeightedGaussian], shape: tuple[int, int], extent: float = 2.0
) -> list[Rectangle]:
    """Cut each component into the rectangle mean +/- extent standard
    deviations per axis, rounded to cells, clipped to the map; duplicates are
    merged keeping first occurrence."""
    h, w = shape
    if h < 1 or w < 1:
        raise ValueError("bad map shape")
    rects: dict[Rectangle, None] = {}
    for comp in components:
        half = extent * np.sqrt(np.asarray(comp.cov, dtype=np.float64))
        top = int(np.clip(np.floor(comp.mean[0] - half[0] + 0.5), 1, h))
        bottom = int(np.clip(np.floor(comp.mean[0] + half[0] + 0.5), 1, h))
        left = int(np.clip(np.floor(comp.mean[1] - half[1] + 0.5), 1, w))
        right = int(np.clip(np.floor(comp.mean[1] + half[1] + 0.5), 1, w))
        rects.setdefault(Rectangle(top, left, bottom, right))
    return list(rects)
