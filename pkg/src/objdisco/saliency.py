"""Feature saliency: channel weighting, the weighted-sum map, and the
threshold/exponent preprocessing applied before region detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import ActivationMap


@dataclass
class ChannelWeights:
    """Per-channel log inverse-frequency weights.

    Channels that fire on few cells of the image get a large weight; a channel
    firing everywhere gets a weight near zero. Weights are non-negative.
    """

    values: np.ndarray
    epsilon: float


def idf_weights(amap: ActivationMap, epsilon: float = 1e-6) -> ChannelWeights:
    """Weight each channel by the log ratio of total to own firing rate.

    The firing rate of channel j is the fraction of cells where it is
    strictly positive; epsilon keeps silent channels finite.
    """
    amap.validate()
    rates = (amap.values > 0).mean(axis=(0, 1)).astype(np.float64)
    total = float(np.sum(rates + epsilon))
    values = np.log(total / (rates + epsilon))
    return ChannelWeights(values=values, epsilon=epsilon)


def feature_saliency_map(amap: ActivationMap, weights: ChannelWeights) -> np.ndarray:
    """Sum channels under their weights and rescale the map to max 1.

    An identically-zero weighted sum stays identically zero; otherwise the
    output lies in [0, 1] with maximum exactly 1.
    """
    if len(weights.values) != amap.channels:
        raise ValueError("weight vector does not match channel count")
    raw = amap.values.astype(np.float64) @ weights.values
    peak = raw.max()
    if peak > 0:
        raw /= peak
    return raw


def preprocess_saliency(saliency: np.ndarray, tau: float, rho: float) -> np.ndarray:
    """Zero out values not strictly above tau, raise survivors to rho.

    No re-normalization happens afterwards; a map with maximum 1 keeps it,
    since 1 > tau for any tau < 1 and 1**rho == 1.
    """
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.size and (saliency.min() < 0 or saliency.max() > 1):
        raise ValueError("saliency map must lie in [0, 1]")
    out = np.zeros_like(saliency)
    mask = saliency > tau
    out[mask] = saliency[mask] ** rho
    return out
