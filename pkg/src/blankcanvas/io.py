"""Image, mask and confidence-map serialization."""

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ._validation import check_image, check_map, check_mask
from .exceptions import ImageIOError

log = logging.getLogger(__name__)

OVERLAY_ALPHA = 0.45


def load_image(path):
    """Read an 8-bit RGB raster as an H x W x 3 float array (``raw / 255``)."""
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(path, "no such file")
    try:
        with Image.open(path) as im:
            im.load()
            fmt, mode = im.format, im.mode
            if mode != "RGB":
                raise ImageIOError(path, f"expected a 3-channel 8-bit image, got mode {mode!r}")
            raw = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        if isinstance(exc, ImageIOError):
            raise
        raise ImageIOError(path, f"cannot decode image ({exc})") from exc
    if fmt == "JPEG":
        log.warning("%s is JPEG; lossy input weakens the protection", path)
    return raw.astype(np.float64) / 255.0


def quantize(img):
    """Snap values to the 1/255 grid, rounding halves up."""
    return to_bytes(img).astype(np.float64) / 255.0


def to_bytes(img):
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def _write(pil_image, path):
    path = Path(path)
    try:
        pil_image.save(path, format="PNG")
    except (OSError, ValueError) as exc:
        raise ImageIOError(path, f"cannot write ({exc})") from exc


def save_image(img, path):
    """Write an image as lossless 8-bit PNG."""
    img = check_image(img, min_side=1)
    _write(Image.fromarray(to_bytes(img), mode="RGB"), path)


def save_mask(mask, path):
    """Write a binary mask as an 8-bit 0/255 PNG."""
    mask = check_mask(mask)
    _write(Image.fromarray(mask.astype(np.uint8) * 255, mode="L"), path)


def load_mask(path):
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise ImageIOError(path, f"cannot read mask ({exc})") from exc
    return arr > 127


def overlay(img, mask):
    """Alpha-blend the mask in red over the image."""
    img = check_image(img, min_side=1)
    mask = check_mask(mask)
    out = img.copy()
    red = np.array([1.0, 0.0, 0.0])
    out[mask] = (1 - OVERLAY_ALPHA) * out[mask] + OVERLAY_ALPHA * red
    return out


def save_overlay(img, mask, path):
    save_image(overlay(img, mask), path)


def save_map(phi, prefix):
    """Dump a 2-D float map as ``<prefix>.f32`` plus a ``<prefix>.json`` sidecar.

    The binary is row-major little-endian float32.
    """
    phi = check_map(phi)
    prefix = Path(prefix)
    raw_path = prefix.with_name(prefix.name + ".f32")
    meta_path = prefix.with_name(prefix.name + ".json")
    h, w = phi.shape
    try:
        raw_path.write_bytes(phi.astype("<f4").tobytes(order="C"))
        meta_path.write_text(json.dumps({"height": h, "width": w, "dtype": "float32"}) + "\n",
                             encoding="utf-8")
    except OSError as exc:
        raise ImageIOError(prefix, f"cannot write map ({exc})") from exc
    return raw_path, meta_path


def load_map(prefix):
    prefix = Path(prefix)
    raw_path = prefix.with_name(prefix.name + ".f32")
    meta_path = prefix.with_name(prefix.name + ".json")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        data = np.frombuffer(raw_path.read_bytes(), dtype="<f4")
    except (OSError, ValueError) as exc:
        raise ImageIOError(prefix, f"cannot read map ({exc})") from exc
    if meta.get("dtype") != "float32" or data.size != meta["height"] * meta["width"]:
        raise ImageIOError(prefix, "sidecar does not match binary payload")
    return data.reshape(meta["height"], meta["width"]).astype(np.float64)
