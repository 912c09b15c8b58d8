"""Spectral machinery: Daubechies-8 wavelet pyramid, Canny edge mask,
wavelet/SSIM stealth losses and the FFT projection mask.

The wavelet transform is written with explicit (orthogonal) analysis
matrices so the same operators serve the NumPy API and the differentiable
torch losses used inside the attack loop.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pywt
import torch
import torch.nn.functional as F
from scipy import ndimage as ndi

from ._validation import check_image, check_mask, check_same_shape

WAVELET = "db8"
SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

CANNY_SIGMA = 1.4
CANNY_LOW, CANNY_HIGH = 0.1, 0.2


# ---------------------------------------------------------------------------
# Wavelet pyramid
# ---------------------------------------------------------------------------

@dataclass
class WaveletPyramid:
    """Multi-level 2-D wavelet decomposition of one channel.

    ``details[k - 1]`` holds the ``(horizontal, vertical, diagonal)`` bands of
    level ``k``; level 1 is the finest.
    """

    approximation: np.ndarray
    details: list = field(default_factory=list)

    @property
    def levels(self):
        return len(self.details)

    @property
    def shape(self):
        h, w = self.approximation.shape
        return h * 2 ** self.levels, w * 2 ** self.levels


@lru_cache(maxsize=64)
def _analysis_pair(n):
    """Periodized low/high analysis matrices of shape (n/2, n).

    Stacked, they form an orthogonal n x n matrix. The phase matches
    ``pywt.dwt(..., mode="periodization")``.
    """
    w = pywt.Wavelet(WAVELET)
    lo_rev = np.asarray(w.dec_lo[::-1])
    hi_rev = np.asarray(w.dec_hi[::-1])
    taps = len(lo_rev)
    half = n // 2
    lo = np.zeros((half, n))
    hi = np.zeros((half, n))
    for k in range(half):
        for j in range(taps):
            col = (2 * k + j - (taps // 2 - 1)) % n
            lo[k, col] += lo_rev[j]
            hi[k, col] += hi_rev[j]
    return lo, hi


def _check_levels(h, w, levels):
    if levels < 1:
        raise ValueError(f"wavelet levels must be >= 1, got {levels}")
    step = 2 ** levels
    if h % step or w % step or h < 2 * step or w < 2 * step:
        raise ValueError(
            f"image of size {h}x{w} is too small or not divisible for {levels} "
            f"wavelet levels (need multiples of {step}, at least {2 * step})"
        )


def _mats(n, like):
    lo, hi = _analysis_pair(n)
    return (torch.as_tensor(lo, dtype=like.dtype, device=like.device),
            torch.as_tensor(hi, dtype=like.dtype, device=like.device))


def dwt2_t(x, levels):
    """Torch analysis on the last two axes. Returns ``(approx, details)``."""
    _check_levels(x.shape[-2], x.shape[-1], levels)
    details = []
    a = x
    for _ in range(levels):
        lo_r, hi_r = _mats(a.shape[-2], a)
        lo_c, hi_c = _mats(a.shape[-1], a)
        rows_lo = lo_r @ a
        rows_hi = hi_r @ a
        ch = rows_hi @ lo_c.T
        cv = rows_lo @ hi_c.T
        cd = rows_hi @ hi_c.T
        a = rows_lo @ lo_c.T
        details.append((ch, cv, cd))
    return a, details


def idwt2_t(approx, details):
    a = approx
    for ch, cv, cd in reversed(details):
        n_r, n_c = a.shape[-2] * 2, a.shape[-1] * 2
        lo_r, hi_r = _mats(n_r, a)
        lo_c, hi_c = _mats(n_c, a)
        a = lo_r.T @ (a @ lo_c + cv @ hi_c) + hi_r.T @ (ch @ lo_c + cd @ hi_c)
    return a


def lowpass_t(x, levels):
    """Reconstruction from the level-``levels`` approximation band only."""
    approx, details = dwt2_t(x, levels)
    zeros = [tuple(torch.zeros_like(b) for b in band) for band in details]
    return idwt2_t(approx, zeros)


def dwt_decompose(img, levels=3):
    """Orthonormal Daubechies-8 decomposition of a single-channel image."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"dwt_decompose expects a single channel, got shape {arr.shape}")
    approx, details = dwt2_t(torch.from_numpy(arr), levels)
    return WaveletPyramid(
        approximation=approx.numpy(),
        details=[tuple(b.numpy() for b in band) for band in details],
    )


def dwt_reconstruct(pyr):
    """Inverse of :func:`dwt_decompose`."""
    a = np.asarray(pyr.approximation, dtype=np.float64)
    h, w = a.shape
    for k, band in enumerate(pyr.details, start=1):
        if len(band) != 3:
            raise ValueError(f"level {k} must have three detail bands")
        expected = (h * 2 ** (pyr.levels - k), w * 2 ** (pyr.levels - k))
        for b in band:
            if np.shape(b) != expected:
                raise ValueError(
                    f"level {k} band has shape {np.shape(b)}, expected {expected}")
    approx = torch.from_numpy(a)
    details = [tuple(torch.as_tensor(np.asarray(b, dtype=np.float64)) for b in band)
               for band in pyr.details]
    return idwt2_t(approx, details).numpy()


# ---------------------------------------------------------------------------
# Canny edge mask
# ---------------------------------------------------------------------------

def _non_max_suppression(mag, gx, gy):
    h, w = mag.shape
    padded = np.pad(mag, 1)
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    # neighbour offsets (drow, dcol) for the 0/45/90/135 degree bins
    offsets = {0: (0, 1), 45: (1, 1), 90: (1, 0), 135: (1, -1)}
    bins = np.select(
        [(angle < 22.5) | (angle >= 157.5), angle < 67.5, angle < 112.5],
        [0, 45, 90],
        default=135,
    )
    keep = np.zeros_like(mag, dtype=bool)
    for b, (dr, dc) in offsets.items():
        sel = bins == b
        fwd = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        bwd = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= sel & (mag >= fwd) & (mag >= bwd)
    return keep


def canny_mask(img):
    """Binary Canny edge map of the channel-mean image.

    Gaussian smoothing with sigma 1.4, Sobel gradients, non-maximum
    suppression and hysteresis at 0.1 / 0.2 of the peak gradient magnitude.
    """
    img = check_image(img)
    gray = img.mean(axis=2)
    smooth = ndi.gaussian_filter(gray, CANNY_SIGMA, mode="nearest")
    gy = ndi.sobel(smooth, axis=0, mode="nearest")
    gx = ndi.sobel(smooth, axis=1, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak < 1e-6:
        return np.zeros(gray.shape, dtype=bool)
    # rounding absorbs float noise so brightness offsets give identical masks
    mag = np.round(mag / peak, 9)
    thin = _non_max_suppression(mag, gx, gy) & (mag >= CANNY_LOW)
    strong = thin & (mag >= CANNY_HIGH)
    labels, n = ndi.label(thin, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros(gray.shape, dtype=bool)
    hit = np.zeros(n + 1, dtype=bool)
    hit[np.unique(labels[strong])] = True
    hit[0] = False
    return hit[labels]


# ---------------------------------------------------------------------------
# Stealth losses
# ---------------------------------------------------------------------------

def _channels_first(x):
    return x.permute(2, 0, 1)


def pool_mask_t(mask, factor):
    """Max-pool a full-resolution mask to a band ``factor`` times smaller."""
    m = mask[None, None].to(torch.float64)
    return F.max_pool2d(m, factor, stride=factor)[0, 0]


def hfc_loss_t(x, x_tilde, edge_mask, levels):
    """Edge-masked wavelet detail distance, summed over levels, bands, channels."""
    _, det_x = dwt2_t(_channels_first(x), levels)
    _, det_t = dwt2_t(_channels_first(x_tilde), levels)
    total = x.new_zeros(())
    for k, (bx, bt) in enumerate(zip(det_x, det_t), start=1):
        m = pool_mask_t(edge_mask, 2 ** k).to(x.dtype)
        for cx, ct in zip(bx, bt):
            total = total + (((ct - cx) * m) ** 2).sum()
    return total


@lru_cache(maxsize=4)
def _gaussian_window_np(size, sigma):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_t(a, b, data_range=1.0):
    """Mean SSIM per channel of ``(C, H, W)`` tensors, valid-window convolution."""
    win = torch.as_tensor(_gaussian_window_np(SSIM_WINDOW, SSIM_SIGMA),
                          dtype=a.dtype, device=a.device)[None, None]
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    a4, b4 = a[:, None], b[:, None]
    mu_a = F.conv2d(a4, win)
    mu_b = F.conv2d(b4, win)
    saa = F.conv2d(a4 * a4, win) - mu_a ** 2
    sbb = F.conv2d(b4 * b4, win) - mu_b ** 2
    sab = F.conv2d(a4 * b4, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return (num / den).mean(dim=(1, 2, 3))


def lfc_loss_t(x, x_tilde, levels):
    """SSIM of the level-``levels`` low-pass reconstructions, channel mean."""
    lx = lowpass_t(_channels_first(x), levels)
    lt = lowpass_t(_channels_first(x_tilde), levels)
    return ssim_t(lx, lt).mean()


def _as_t(img):
    return torch.from_numpy(np.ascontiguousarray(img, dtype=np.float64))


def hfc_loss(x, x_tilde, edge_mask, levels=3):
    """High-frequency edge-band loss between an image and its perturbed copy."""
    x = check_image(x, "x")
    x_tilde = check_image(x_tilde, "x_tilde")
    check_same_shape(x, x_tilde, "x and x_tilde")
    edge_mask = check_mask(edge_mask, "edge_mask")
    if edge_mask.shape != x.shape[:2]:
        raise ValueError(f"edge mask {edge_mask.shape} does not match image {x.shape[:2]}")
    m = torch.from_numpy(edge_mask)
    return float(hfc_loss_t(_as_t(x), _as_t(x_tilde), m, levels))


def lfc_loss(x, x_tilde, levels=3):
    """Low-frequency structural similarity in (-1, 1]."""
    x = check_image(x, "x")
    x_tilde = check_image(x_tilde, "x_tilde")
    check_same_shape(x, x_tilde, "x and x_tilde")
    return float(lfc_loss_t(_as_t(x), _as_t(x_tilde), levels))


# ---------------------------------------------------------------------------
# FFT spectral projection
# ---------------------------------------------------------------------------

def centered_frequencies(n):
    return np.fft.fftshift(np.fft.fftfreq(n) * n)


def spectral_mask(height, width, f_cutoff):
    """Binary high-pass mask on the centered spectrum.

    ``mask[u, v] = 1`` iff the radius of ``(u, v)`` from the zero-frequency
    bin is at least ``f_cutoff``.
    """
    if height < 1 or width < 1:
        raise ValueError("mask dimensions must be positive")
    if f_cutoff < 0:
        raise ValueError(f"f_cutoff must be >= 0, got {f_cutoff}")
    u = centered_frequencies(height)[:, None]
    v = centered_frequencies(width)[None, :]
    return np.sqrt(u ** 2 + v ** 2) >= f_cutoff


def spectral_project(grad, mask):
    """Zero the masked-out frequencies of each channel of an H x W x C array."""
    g = np.asarray(grad, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if g.ndim == 2:
        return spectral_project(g[..., None], mask)[..., 0]
    if g.shape[:2] != mask.shape:
        raise ValueError(f"gradient {g.shape[:2]} and mask {mask.shape} disagree")
    if not np.all(np.isfinite(g)):
        raise ValueError("spectral_project received non-finite values")
    spec = np.fft.fftshift(np.fft.fft2(g, axes=(0, 1)), axes=(0, 1))
    spec *= mask[..., None]
    out = np.fft.ifft2(np.fft.ifftshift(spec, axes=(0, 1)), axes=(0, 1))
    return out.real
