"""Segmentation oracle: backends plus the forward / mask / gradient helpers."""

import math

import numpy as np
import torch

from .._validation import check_image, check_map
from ..config import PromptSpec
from ..exceptions import BackendUnavailable, DivergenceError
from .base import OracleBackend, available_backends, get_backend, register_backend
from .toy import ToySegmenter, make_kernel_bank


def _make_sam(weights=None, device="cpu", **_):
    from .sam import SamBackend

    return SamBackend(weights=weights, device=device)


def _make_toy(toy_seed=0, seed=None, **options):
    options.pop("weights", None)
    options.pop("device", None)
    return ToySegmenter(seed=toy_seed if seed is None else seed, **options)


register_backend("toy", _make_toy)
register_backend("sam-vith", _make_sam)


def forward(backend, img, prompt):
    """Confidence map of ``img`` under ``prompt``."""
    try:
        return backend.forward(img, prompt)
    except BackendUnavailable:
        raise
    except (RuntimeError, OSError) as exc:
        raise BackendUnavailable(getattr(backend, "name", repr(backend)), str(exc)) from exc


def predicted_mask(phi):
    """Pixels with strictly positive logits."""
    return check_map(phi) > 0


def loss_value_and_grad(backend, img, prompt, loss):
    """Evaluate ``loss(forward(img))`` and its gradient with respect to ``img``.

    ``loss`` receives the confidence map as a torch tensor and returns a
    scalar tensor.
    """
    if not backend.supports_gradient:
        raise BackendUnavailable(backend.name, "backend does not provide gradients")
    img = check_image(img)
    prompt.validate(*img.shape[:2])
    x = torch.tensor(img, dtype=backend.dtype, requires_grad=True)
    value = loss(backend.forward_tensor(x, prompt))
    if not torch.is_tensor(value) or not value.requires_grad:
        return float(value), np.zeros_like(img)
    (grad,) = torch.autograd.grad(value, x)
    value = value.detach()
    grad = grad.detach().cpu().to(torch.float64).numpy()
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient from the oracle")
    return float(value), grad


def sample_prompts(height, width, n, seed=0):
    """Prompt set for the loss expectation.

    ``n == 1`` gives the fixed corner point. Otherwise points sit at the
    centres of a ``g x g`` grid (the smallest ``g`` with ``g*g >= n``); when
    ``g*g > n`` a seeded choice picks which cells to keep.
    """
    if n < 1:
        raise ValueError(f"need at least one prompt, got {n}")
    if n > height * width:
        raise ValueError(f"{n} prompts exceed the {height * width} pixels available")
    if n == 1:
        return PromptSpec(points=((0, 0),), mode="single")
    g = math.isqrt(n - 1) + 1
    rows = [int((i + 0.5) * height / g) for i in range(g)]
    cols = [int((j + 0.5) * width / g) for j in range(g)]
    cells = [(r, c) for r in rows for c in cols]
    if len(set(cells)) < n:
        raise ValueError(f"cannot place {n} distinct grid prompts on {height}x{width}")
    if len(cells) > n:
        keep = np.sort(np.random.default_rng(seed).choice(len(cells), size=n, replace=False))
        cells = [cells[i] for i in keep]
    return PromptSpec(points=tuple(cells), mode="grid")


__all__ = [
    "OracleBackend",
    "ToySegmenter",
    "available_backends",
    "forward",
    "get_backend",
    "loss_value_and_grad",
    "make_kernel_bank",
    "predicted_mask",
    "register_backend",
    "sample_prompts",
]
