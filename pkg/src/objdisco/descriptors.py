"""Region descriptors: saliency pooling, per-channel max pooling, and the
normalize/center/whiten/project/renormalize transform shared by every
descriptor in the pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .store import ActivationMap, Rectangle, load_whitening, save_whitening


class DegenerateDescriptorError(ValueError):
    """Raised when a descriptor cannot be normalized into the whitened space."""


def _check_rect(rect: Rectangle, height: int, width: int) -> None:
    if rect.top < 1 or rect.left < 1 or rect.bottom > height or rect.right > width:
        raise ValueError(f"rectangle {rect} outside {height}x{width} map")
    if rect.top > rect.bottom or rect.left > rect.right:
        raise ValueError(f"degenerate rectangle {rect}")


def region_saliency(saliency: np.ndarray, rect: Rectangle) -> float:
    """Mean saliency over the rectangle."""
    h, w = saliency.shape
    _check_rect(rect, h, w)
    return float(saliency[rect.top - 1 : rect.bottom, rect.left - 1 : rect.right].mean())


def max_pool(amap: ActivationMap, rect: Rectangle) -> np.ndarray:
    """Per-channel maximum over the rectangle; the whole map gives the global
    maximum-activation descriptor."""
    _check_rect(rect, amap.height, amap.width)
    window = amap.values[rect.top - 1 : rect.bottom, rect.left - 1 : rect.right]
    return window.max(axis=(0, 1)).astype(np.float64)


@dataclass
class WhiteningModel:
    """Centering mean and decorrelating projection fitted on l2-normalized
    descriptors. projection has shape (d, c) with rows scaled by inverse
    square-root eigenvalues, so training descriptors come out unit-variance
    per dimension before the final renormalization."""

    mean: np.ndarray
    projection: np.ndarray

    @property
    def in_dim(self) -> int:
        return int(self.projection.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.projection.shape[0])

    def save(self, path: Path | str) -> None:
        save_whitening(path, self.mean, self.projection)

    @classmethod
    def load(cls, path: Path | str) -> "WhiteningModel":
        mean, projection = load_whitening(path)
        return cls(mean=mean, projection=projection)


def fit_whitening(descriptors: np.ndarray, out_dim: int | None = None, shrinkage: float = 0.01) -> WhiteningModel:
    """Fit the whitening transform on raw descriptors.

    Rows are l2-normalized, centered, and the covariance eigendecomposition
    (shrunk toward a scaled identity by `shrinkage`) gives the projection onto
    the strongest out_dim directions with inverse-sqrt-eigenvalue scaling.
    """
    Z = np.asarray(descriptors, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ValueError("insufficient data: need at least 2 descriptors")
    n, c = Z.shape
    d = c if out_dim is None or out_dim == 0 else int(out_dim)
    if d < 1 or d > c:
        raise ValueError(f"bad dimension: out_dim must be in [1, {c}]")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in [0, 1]")
    norms = np.linalg.norm(Z, axis=1)
    if (norms == 0).any():
        raise ValueError("zero descriptor in training set")
    X = Z / norms[:, None]
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / n
    if shrinkage > 0:
        cov = (1.0 - shrinkage) * cov + shrinkage * (np.trace(cov) / c) * np.eye(c)
    eigvals, eigvecs = np.linalg.eigh(cov)
    top = np.argsort(eigvals)[::-1][:d]
    lam = eigvals[top]
    floor = max(lam.max(), 0.0) * 1e-12 + 1e-30
    projection = eigvecs[:, top].T / np.sqrt(np.maximum(lam, floor))[:, None]
    return WhiteningModel(mean=mean, projection=projection)


def apply_whitening(model: WhiteningModel, descriptor: np.ndarray) -> np.ndarray:
    """normalize -> center -> project -> renormalize; returns a unit vector."""
    z = np.asarray(descriptor, dtype=np.float64)
    if z.shape != (model.in_dim,):
        raise ValueError(f"descriptor has dimension {z.shape}, expected ({model.in_dim},)")
    norm = np.linalg.norm(z)
    if norm == 0:
        raise DegenerateDescriptorError("zero descriptor")
    y = model.projection @ (z / norm - model.mean)
    out_norm = np.linalg.norm(y)
    if out_norm < 1e-12:
        raise DegenerateDescriptorError("descriptor collapses onto the centering mean")
    return y / out_norm


def apply_whitening_rows(model: WhiteningModel, descriptors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized apply_whitening over rows.

    Returns (vectors, valid) where invalid rows (zero or degenerate inputs)
    are zero-filled and flagged False instead of raising, so dense per-cell
    callers can treat them as empty.
    """
    Z = np.asarray(descriptors, dtype=np.float64)
    norms = np.linalg.norm(Z, axis=1)
    valid = norms > 0
    X = np.zeros_like(Z)
    np.divide(Z, norms[:, None], out=X, where=valid[:, None])
    Y = (X - model.mean) @ model.projection.T
    out_norms = np.linalg.norm(Y, axis=1)
    valid &= out_norms >= 1e-12
    out = np.zeros_like(Y)
    np.divide(Y, out_norms[:, None], out=out, where=valid[:, None])
    return out, valid
