"""Adapter for the ViT-H Segment Anything checkpoint.

Requires the ``segment_anything`` package and a checkpoint file given by the
``weights`` option or the ``BLANKCANVAS_SAM_WEIGHTS`` environment variable.
The adapter exposes the mask-logit head before thresholding, upsampled to
the input resolution, so it is differentiable with respect to the pixels.
"""

import os

import torch
import torch.nn.functional as F

from ..exceptions import BackendUnavailable
from .base import OracleBackend

WEIGHTS_ENV = "BLANKCANVAS_SAM_WEIGHTS"


class SamBackend(OracleBackend):
    name = "sam-vith"
    supports_gradient = True
    concurrent_forward_safe = False
    dtype = torch.float32

    def __init__(self, weights=None, device="cpu", model_type="vit_h"):
        try:
            from segment_anything import sam_model_registry
            from segment_anything.utils.transforms import ResizeLongestSide
        except ImportError as exc:
            raise BackendUnavailable(self.name, "segment_anything is not installed") from exc
        weights = weights or os.environ.get(WEIGHTS_ENV)
        if not weights or not os.path.isfile(weights):
            raise BackendUnavailable(
                self.name, f"checkpoint not found (set {WEIGHTS_ENV} or the 'weights' key)")
        try:
            self.model = sam_model_registry[model_type](checkpoint=weights).to(device).eval()
        except Exception as exc:  # noqa: BLE001 - any load failure means unavailable
            raise BackendUnavailable(self.name, f"failed to load {weights}: {exc}") from exc
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.device = device
        self.resize = ResizeLongestSide(self.model.image_encoder.img_size)

    def forward_tensor(self, x, prompt):
        h, w = x.shape[:2]
        model = self.model
        img = x.to(self.device, torch.float32).permute(2, 0, 1)[None] * 255.0
        new_h, new_w = self.resize.get_preprocess_shape(h, w, self.resize.target_length)
        img = F.interpolate(img, (new_h, new_w), mode="bilinear", align_corners=False,
                            antialias=True)
        img = model.preprocess(img[0])[None]
        embedding = model.image_encoder(img)
        # prompts are (row, col); SAM expects (x, y) in resized coordinates
        coords = torch.tensor([[[c, r] for r, c in prompt.points]], dtype=torch.float32,
                              device=self.device)
        coords = torch.as_tensor(self.resize.apply_coords(coords.cpu().numpy(), (h, w)),
                                 device=self.device)
        labels = torch.ones(coords.shape[:2], dtype=torch.int64, device=self.device)
        sparse, dense = model.prompt_encoder(points=(coords, labels), boxes=None, masks=None)
        low_res, _ = model.mask_decoder(
            image_embeddings=embedding,
            image_pe=model.prompt_encoder.get_dense_pe(),
            sparse_prompt_embeddings=sparse,
            dense_prompt_embeddings=dense,
            multimask_output=False,
        )
        logits = model.postprocess_masks(low_res, (new_h, new_w), (h, w))
        return logits[0, 0]
