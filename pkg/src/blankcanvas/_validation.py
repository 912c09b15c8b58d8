"""Input validation helpers shared by the estimators and functional API."""

import numpy as np

MIN_SIDE = 16


def check_image(img, name="image", min_side=MIN_SIDE):
    """Validate an H x W x 3 image with values in [0, 1].

    Returns a float64 copy-free view when possible.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    h, w, _ = arr.shape
    if h < min_side or w < min_side:
        raise ValueError(f"{name} must be at least {min_side}x{min_side}, got {h}x{w}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_map(phi, name="confidence map"):
    arr = np.asarray(phi, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_mask(mask, name="mask"):
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype != bool:
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError(f"{name} values must be exactly 0 or 1")
        arr = arr.astype(bool)
    return arr


def check_same_shape(a, b, what="inputs"):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")


def check_perturbation(delta, epsilon, slack=0.0):
    """Raise if ``max |delta|`` exceeds ``epsilon + slack``."""
    peak = float(np.max(np.abs(delta))) if np.size(delta) else 0.0
    if peak > epsilon + slack + 1e-12:
        raise ValueError(f"perturbation inf-norm {peak:.6g} exceeds bound {epsilon + slack:.6g}")
    return peak
