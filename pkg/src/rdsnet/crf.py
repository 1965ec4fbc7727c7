"""Fully connected two-label CRF refinement of saliency maps.

Exact mean-field inference: every pixel exchanges messages with every other
pixel through an appearance kernel (position and colour) plus a smoothness
kernel (position only), with Potts label compatibility. The cost is
quadratic in the pixel count, so inputs are capped by ``max_pixels``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from rdsnet import _kernels

MAX_PIXELS = 128 * 128
UNARY_CLIP = 1e-6


@dataclass(frozen=True)
class CrfParams:
    bilateral_weight: float = 4.0
    spatial_weight: float = 3.0
    theta_alpha: float = 60.0
    theta_beta: float = 10.0
    theta_gamma: float = 3.0
    iterations: int = 5

    def __post_init__(self):
        if min(self.theta_alpha, self.theta_beta, self.theta_gamma) <= 0:
            raise ValueError("CRF bandwidths must be positive")
        if self.bilateral_weight < 0 or self.spatial_weight < 0:
            raise ValueError("CRF kernel weights must be non-negative")
        if self.iterations < 1:
            raise ValueError("CRF needs at least one iteration")

    def as_dict(self):
        return asdict(self)


def unary_from_saliency(saliency):
    """Energies ``(2, h, w)`` for (background, salient) from clipped probabilities."""
    p = np.clip(np.asarray(saliency, dtype=np.float64), UNARY_CLIP, 1.0 - UNARY_CLIP)
    return np.stack([-np.log1p(-p), -np.log(p)])


def _softmax_neg(energy):
    shifted = energy - energy.min(axis=0, keepdims=True)
    e = np.exp(-shifted)
    return e / e.sum(axis=0, keepdims=True)


def _features(image, h, w):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    if image.shape[:2] != (h, w):
        raise ValueError(f"image extents {image.shape[:2]} do not match saliency extents {(h, w)}")
    rows, cols = np.mgrid[0:h, 0:w]
    pos = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
    col = image.reshape(h * w, -1)
    return pos, col


def mean_field(unary, image, params=CrfParams(), max_pixels=MAX_PIXELS, callback=None):
    """Run mean-field updates from ``softmax(-unary)``; returns label marginals ``(2, h, w)``.

    ``image`` is ``(h, w, channels)`` in 8-bit intensity units. ``callback`` is
    called with the marginals after every iteration.
    """
    unary = np.asarray(unary, dtype=np.float64)
    _, h, w = unary.shape
    if h * w > max_pixels:
        raise ValueError(f"image has {h * w} pixels; exact CRF inference is limited to {max_pixels}")
    pos, col = _features(image, h, w)
    q = _softmax_neg(unary)
    u = unary.reshape(2, -1)
    for _ in range(params.iterations):
        msg = _kernels.crf_pairwise(np.ascontiguousarray(q.reshape(2, -1).T), pos, col,
                                params.bilateral_weight, params.spatial_weight,
                                params.theta_alpha, params.theta_beta, params.theta_gamma)
        # Potts: a label pays for the mass its neighbours put on the other label
        energy = u + msg[:, ::-1].T
        q = _softmax_neg(energy).reshape(2, h, w)
        if callback is not None:
            callback(q)
    return q


def refine(image, saliency, params=CrfParams(), max_pixels=MAX_PIXELS):
    """Salient-label marginal after CRF refinement of a [0, 1] saliency map."""
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.ndim != 2:
        raise ValueError(f"saliency must be a 2-D map, got shape {saliency.shape}")
    image = np.asarray(image)
    if image.shape[:2] != saliency.shape:
        raise ValueError(f"image extents {image.shape[:2]} do not match saliency extents {saliency.shape}")
    return mean_field(unary_from_saliency(saliency), image, params, max_pixels)[1]
