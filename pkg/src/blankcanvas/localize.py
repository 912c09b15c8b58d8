"""Blank-condition checks and tamper-mask extraction."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from ._validation import check_map
from .config import DetectConfig
from .oracle import forward

NO_THRESHOLD = None


def blank_fraction(phi, C, tol):
    """Fraction of pixels whose logit lies within ``tol`` of ``C``."""
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    phi = check_map(phi)
    return float(np.mean(np.abs(phi - C) < tol))


def deviation_map(phi, C):
    return np.abs(check_map(phi) - C)


def between_class_variance(counts, centers):
    """Between-class variance for every split ``bins[:k+1] | bins[k+1:]``."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    w0 = np.cumsum(counts)[:-1]
    w1 = total - w0
    s0 = np.cumsum(counts * centers)[:-1]
    s1 = (counts * centers).sum() - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = np.where(w0 > 0, s0 / w0, 0.0)
        mu1 = np.where(w1 > 0, s1 / w1, 0.0)
    var = w0 * w1 * (mu0 - mu1) ** 2 / total ** 2
    return np.where((w0 > 0) & (w1 > 0), var, 0.0)


def otsu_threshold(d, bins=256):
    """Histogram Otsu threshold, returned as the upper edge of the best split bin.

    Ties go to the smallest threshold. A constant map has no threshold and
    yields :data:`NO_THRESHOLD`.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    d = np.asarray(d, dtype=np.float64).ravel()
    lo, hi = float(d.min()), float(d.max())
    if not hi > lo:
        return NO_THRESHOLD
    counts, edges = np.histogram(d, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    var = between_class_variance(counts, centers)
    best = var.max()
    k = int(np.flatnonzero(var >= best * (1 - 1e-12))[0])
    return float(edges[k + 1])


def _disk(radius):
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius ** 2


def clean_mask(raw, radius, min_area):
    """Close, then open, with a disk; drop components smaller than ``min_area``."""
    mask = np.asarray(raw, dtype=bool)
    if radius > 0:
        disk = _disk(radius)
        pad = radius + 1
        padded = np.pad(mask, pad, mode="edge")
        padded = ndi.binary_erosion(ndi.binary_dilation(padded, disk), disk, border_value=1)
        padded = ndi.binary_dilation(ndi.binary_erosion(padded, disk, border_value=1), disk)
        mask = padded[pad:-pad, pad:-pad] & ndi.binary_dilation(mask, disk)
    if min_area > 0 and mask.any():
        labels, n = ndi.label(mask, structure=np.ones((3, 3)))
        areas = np.bincount(labels.ravel(), minlength=n + 1)
        keep = areas >= min_area
        keep[0] = False
        mask = keep[labels]
    return mask


@dataclass
class DetectionResult:
    mask: np.ndarray
    deviation: np.ndarray
    threshold: float
    confidence: np.ndarray

    @property
    def tampered_fraction(self):
        return float(self.mask.mean())

    @property
    def blank(self):
        return self.threshold is NO_THRESHOLD or not self.mask.any()

    def __iter__(self):
        # allows ``mask, deviation = detect_tamper(...)``
        yield self.mask
        yield self.deviation


def mask_from_deviation(d, cfg):
    tau = otsu_threshold(d, cfg.histogram_bins)
    if tau is NO_THRESHOLD:
        return np.zeros(d.shape, dtype=bool), tau
    raw = (d > tau) & (d > cfg.tolerance)
    return clean_mask(raw, cfg.morphology_radius, cfg.min_region_area), tau


def detect_tamper(img, backend, cfg=None):
    """Localise tampering on a protected image from its deviation map."""
    cfg = cfg or DetectConfig()
    phi = forward(backend, img, cfg.prompt)
    d = deviation_map(phi, cfg.C)
    mask, tau = mask_from_deviation(d, cfg)
    return DetectionResult(mask=mask, deviation=d, threshold=tau, confidence=phi)
