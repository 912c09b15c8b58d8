"""Backend interface and name registry."""

from abc import ABC, abstractmethod

import numpy as np
import torch

from .._validation import check_image
from ..exceptions import BackendUnavailable


class OracleBackend(ABC):
    """A segmentation model mapping (image, point prompt) to mask logits.

    Subclasses implement :meth:`forward_tensor` on an ``(H, W, 3)`` torch
    tensor. Backends with ``supports_gradient`` must make it differentiable.
    """

    name = "abstract"
    supports_gradient = False
    # True when forward may be called from several threads at once
    concurrent_forward_safe = False
    dtype = torch.float64
    # recommended target constant for the blank condition; None defers to config
    blank_constant = None

    @abstractmethod
    def forward_tensor(self, x, prompt):
        """Return the ``(H, W)`` confidence map for an image tensor."""

    def forward(self, img, prompt):
        img = check_image(img)
        prompt.validate(*img.shape[:2])
        with torch.no_grad():
            phi = self.forward_tensor(torch.as_tensor(img, dtype=self.dtype), prompt)
        return phi.detach().cpu().to(torch.float64).numpy()

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"


_REGISTRY = {}


def register_backend(name, factory):
    """Register a zero-or-keyword-argument factory under ``name``."""
    _REGISTRY[name] = factory
    return factory


def available_backends():
    return sorted(_REGISTRY)


def get_backend(name, **options):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise BackendUnavailable(name, f"unknown backend; choose from {available_backends()}") from None
    return factory(**options)
