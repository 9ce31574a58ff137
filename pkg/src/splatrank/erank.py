"""Effective rank of Gaussian covariances and needle classification.

The effective rank of a Gaussian with axis scales (s1, s2, s3) is the
exponential of the Shannon entropy of the squared-scale distribution
q_i = s_i^2 / sum(s^2). It ranges from 1 (all variance on one axis) to 3
(isotropic) and is differentiable in the scales, which makes it usable
both as a diagnostic and inside a loss.
"""

from __future__ import annotations

import numpy as np

NEEDLE_ERANK_THRESHOLD = 1.04
NEEDLE_VIS_THRESHOLD = 1.02
DISK_ERANK_CEILING = 2.1


def _check_scales(scales):
    scales = np.asarray(scales, dtype=np.float64)
    single = scales.ndim == 1
    scales = np.atleast_2d(scales)
    if scales.shape[-1] != 3:
        raise ValueError(f"expected 3 axis scales per row, got shape {scales.shape}")
    if not np.all(np.isfinite(scales)):
        raise ValueError("scales must be finite")
    if np.any(scales <= 0.0):
        raise ValueError("scales must be strictly positive")
    return scales, single


def singular_value_distribution(scales):
    """Normalized squared scales q_i = s_i^2 / sum(s^2), sorted descending.

    Sorting canonicalizes the distribution, so everything downstream is
    exactly invariant under permutations of the input scales.
    """
    scales, single = _check_scales(scales)
    s2 = np.sort(scales * scales, axis=-1)[..., ::-1]
    q = s2 / s2.sum(axis=-1, keepdims=True)
    return q[0] if single else q


def effective_rank(scales):
    """exp of the entropy of the squared-scale distribution, in [1, 3]."""
    scales, single = _check_scales(scales)
    q = singular_value_distribution(scales)
    q = np.atleast_2d(q)
    logq = np.log(np.maximum(q, np.finfo(np.float64).tiny))
    H = -np.sum(q * logq, axis=-1)
    E = np.exp(H)
    return float(E[0]) if single else E


def effective_rank_gradient(scales):
    """d(erank)/d(scales), same shape as the input.

    With S = sum(s^2), q_j = s_j^2 / S and H the entropy:
        dE/ds_j = -2 s_j E (ln q_j + H) / S
    """
    scales, single = _check_scales(scales)
    s2 = scales * scales
    S = s2.sum(axis=-1, keepdims=True)
    q = s2 / S
    logq = np.log(np.maximum(q, np.finfo(np.float64).tiny))
    H = -np.sum(q * logq, axis=-1, keepdims=True)
    E = np.exp(H)
    grad = -2.0 * scales * E * (logq + H) / S
    return grad[0] if single else grad


def classify_needles(scales, threshold=NEEDLE_ERANK_THRESHOLD):
    """Boolean mask of Gaussians whose effective rank falls below threshold."""
    scales, single = _check_scales(scales)
    mask = np.atleast_1d(effective_rank(scales)) < threshold
    return bool(mask[0]) if single else mask


def erank_histogram(eranks, bins=64, value_range=(1.0, 3.0)):
    """Histogram of effective ranks; returns (counts, bin_edges)."""
    eranks = np.asarray(eranks, dtype=np.float64).ravel()
    if eranks.size == 0:
        raise ValueError("cannot histogram an empty set of effective ranks")
    counts, edges = np.histogram(eranks, bins=bins, range=value_range)
    return counts, edges


def shape_report(scales, needle_threshold=NEEDLE_ERANK_THRESHOLD):
    """Summary statistics of a cloud's shape distribution.

    Returns a dict with count, needle fraction, disk fraction (erank in
    (threshold, 2.1]), mean/median/min/max erank, and a 64-bin histogram.
    """
    scales, _ = _check_scales(scales)
    er = np.atleast_1d(effective_rank(scales))
    counts, edges = erank_histogram(er)
    needles = er < needle_threshold
    disks = (er > needle_threshold) & (er <= DISK_ERANK_CEILING)
    return {
        "count": int(er.size),
        "needle_threshold": float(needle_threshold),
        "needle_fraction": float(np.mean(needles)),
        "disk_fraction": float(np.mean(disks)),
        "erank_mean": float(er.mean()),
        "erank_median": float(np.median(er)),
        "erank_min": float(er.min()),
        "erank_max": float(er.max()),
        "histogram_counts": counts,
        "histogram_edges": edges,
    }
