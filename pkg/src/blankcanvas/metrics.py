"""Fidelity and localization metrics."""

import numpy as np

from ._validation import check_mask, check_same_shape

PSNR_CAP = 99.0


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b, "images")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def f1_iou(pred, gt):
    """Pixel F1 and IoU. Two empty masks score ``(1, 1)``."""
    pred = check_mask(pred, "pred")
    gt = check_mask(gt, "gt")
    check_same_shape(pred, gt, "masks")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    if tp + fp + fn == 0:
        return 1.0, 1.0
    return 2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn)
