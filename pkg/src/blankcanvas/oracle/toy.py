"""Deterministic convolutional stand-in for the segmentation model."""

from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from .base import OracleBackend

_SOBEL = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_LOG2 = float(np.log(2.0))


def make_kernel_bank(seed, n_random=4, size=5, scale=0.3):
    """Two Sobel derivatives plus ``n_random`` seeded zero-mean kernels.

    All kernels are embedded in a ``size x size`` support.
    """
    if size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    rng = np.random.default_rng(seed)
    bank = np.zeros((2 + n_random, size, size))
    off = (size - 3) // 2
    bank[0, off:off + 3, off:off + 3] = _SOBEL
    bank[1, off:off + 3, off:off + 3] = _SOBEL.T
    for k in range(n_random):
        kern = scale * rng.standard_normal((size, size))
        bank[2 + k] = kern - kern.mean()
    return bank


def make_waves(rng, n, band, shape=()):
    """Seeded plane waves: frequencies (cycles/pixel) with radius in ``band``, and phases."""
    radius = rng.uniform(band[0], band[1], shape + (n,))
    angle = rng.uniform(0, np.pi, shape + (n,))
    phase = rng.uniform(0, 2 * np.pi, shape + (n,))
    return radius * np.cos(angle), radius * np.sin(angle), phase


def _plane_waves(fu, fv, phase, height, width):
    rows = np.arange(height)[:, None, None]
    cols = np.arange(width)[None, :, None]
    return np.cos(2 * np.pi * (fu * rows + fv * cols) + phase)


def _soft_relu(t, sharpness):
    # zero at the origin, tends to relu(t) away from it
    return (F.softplus(sharpness * t) - _LOG2) / sharpness


class ToySegmenter(OracleBackend):
    """Prompt-gated convolutional segmenter with positional and global context terms.

    For the channel-mean image ``g`` and kernel responses ``f_k = K_k * g``::

        edge      = pool(f_sobel_x**2 + f_sobel_y**2)
        coherence = pool(sum_k P_k * f_k)
        context   = sum_j <g, Q_j>
        u         = bias + edge_weight * edge
                    - gain * gate * s(coherence) - context_gain * s(context)
        phi       = output_scale * tanh(u)

    ``P_k`` are seeded positional fields (sums of plane waves in ``band``),
    ``Q_j`` are low-frequency plane waves spanning the whole image,
    ``gate = exp(-dist(pixel, prompt) / gate_sigma)`` and ``s`` is a smooth
    ramp. Natural images correlate weakly with either field, so they come
    out masked, strong edges especially. A perturbation aligned with ``P_k``
    blanks the map locally; one aligned with ``Q_j`` blanks it everywhere
    at once. Constant images give a uniform map.
    """

    name = "toy"
    supports_gradient = True
    concurrent_forward_safe = True
    # blank target, deep in the negative (unmasked) saturation region
    blank_constant = -19.5

    def __init__(self, seed=0, gate_sigma=None, output_scale=20.0, bias=2.0, gain=200.0,
                 edge_weight=40.0, pool=3, kernel_size=5, n_random=8, n_waves=16,
                 band=(0.2, 0.3), sharpness=300.0, context_gain=60.0, n_context=4,
                 context_band=(1 / 16, 3 / 32), coherence_offset=0.0):
        self.seed = int(seed)
        self.gate_sigma = gate_sigma
        self.output_scale = float(output_scale)
        self.bias = float(bias)
        self.gain = float(gain)
        self.edge_weight = float(edge_weight)
        self.pool = int(pool)
        self.sharpness = float(sharpness)
        self.context_gain = float(context_gain)
        self.coherence_offset = float(coherence_offset)
        if self.sharpness <= 0:
            raise ValueError(f"sharpness must be positive, got {sharpness}")
        self.kernels = make_kernel_bank(self.seed, n_random=n_random, size=kernel_size)
        self.waves = make_waves(np.random.default_rng([self.seed, 1]), n_waves, tuple(band),
                                (len(self.kernels),))
        self.context_waves = make_waves(np.random.default_rng([self.seed, 2]), n_context,
                                        tuple(context_band))
        self._kernels_t = torch.from_numpy(self.kernels)[:, None]
        self._fields = lru_cache(maxsize=8)(self._make_fields)

    def gate(self, height, width, prompt):
        sigma = self.gate_sigma if self.gate_sigma is not None else 2.0 * min(height, width)
        rows = np.arange(height)[:, None]
        cols = np.arange(width)[None, :]
        g = np.zeros((height, width))
        for r, c in prompt.points:
            g = np.maximum(g, np.exp(-np.hypot(rows - r, cols - c) / sigma))
        return g

    def _make_fields(self, height, width):
        fu, fv, phase = self.waves
        n_kernels, n_waves = fu.shape
        pos = np.stack([
            _plane_waves(fu[k], fv[k], phase[k], height, width).sum(axis=-1)
            for k in range(n_kernels)
        ]) * np.sqrt(2.0 / n_waves)
        ctx = _plane_waves(*self.context_waves, height, width)
        ctx = np.moveaxis(ctx, -1, 0) * (2.0 / (height * width))
        return torch.from_numpy(pos), torch.from_numpy(np.ascontiguousarray(ctx))

    def positional_fields(self, height, width):
        """``(n_kernels, H, W)`` unit-variance positional fields."""
        return self._fields(height, width)[0].numpy()

    def context_fields(self, height, width):
        """``(n_context, H, W)`` global plane waves, scaled so ``<g, Q_j>`` is an amplitude."""
        return self._fields(height, width)[1].numpy()

    def _pool(self, t):
        if self.pool <= 1:
            return t
        lo = (self.pool - 1) // 2
        hi = self.pool - 1 - lo
        return F.avg_pool2d(F.pad(t, (lo, hi, lo, hi), mode="replicate"), self.pool, stride=1)

    def features(self, x, prompt):
        """Return ``(edge, coherence, gate, context)``; the first three are H x W maps."""
        h, w = x.shape[:2]
        pos, ctx = (f.to(x.dtype) for f in self._fields(h, w))
        gray = x.mean(dim=2)
        pad = self.kernels.shape[-1] // 2
        padded = F.pad(gray[None, None], (pad, pad, pad, pad), mode="replicate")
        resp = F.conv2d(padded, self._kernels_t.to(x.dtype))
        edge = self._pool((resp[:, :2] ** 2).sum(dim=1, keepdim=True))[0, 0]
        coherence = self._pool((resp * pos[None]).sum(dim=1, keepdim=True))[0, 0]
        gate = torch.as_tensor(self.gate(h, w, prompt), dtype=x.dtype)
        context = (ctx * gray[None]).sum()
        return edge, coherence, gate, context

    def forward_tensor(self, x, prompt):
        edge, coherence, gate, context = self.features(x, prompt)
        u = (self.bias + self.edge_weight * edge
             - self.gain * gate * _soft_relu(coherence - self.coherence_offset, self.sharpness)
             - self.context_gain * _soft_relu(context, self.sharpness))
        return self.output_scale * torch.tanh(u)
