"""Desk-scale benchmark: procedural fixtures, tamper simulators, degradation
and the ablation harness."""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage as ndi
from skimage.transform import resize

from ._validation import check_image, check_same_shape
from .attack import protect
from .config import AttackConfig, DetectConfig
from .io import quantize
from .localize import detect_tamper
from .metrics import f1_iou, psnr

log = logging.getLogger(__name__)

TAMPER_KINDS = ("splice", "copy_move", "erase_fill")
DEGRADATIONS = ("clean", "random")
ABLATION_CASES = ("a", "b", "c", "full")
CASE_LABELS = {
    "a": "no protection",
    "b": "without adaptive spectral optimisation",
    "c": "without stealth loss",
    "full": "all components",
}


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

def make_fixture(seed, size=64, texture_amp=0.01):
    """Procedural test image: colour gradient, a few shapes, mild texture."""
    rng = np.random.default_rng(seed)
    h = w = size
    rows, cols = np.mgrid[0:h, 0:w] / (size - 1)
    c0, c1 = rng.uniform(0.25, 0.75, 3), rng.uniform(0.25, 0.75, 3)
    theta = rng.uniform(0, np.pi)
    ramp = np.cos(theta) * rows + np.sin(theta) * cols
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) + 1e-12)
    img = c0 + (c1 - c0) * ramp[..., None]
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0.1, 0.9, 3)
        if rng.random() < 0.5:
            r0, c0_ = rng.integers(0, h - 8, 2)
            hh, ww = rng.integers(6, size // 2, 2)
            img[r0:r0 + hh, c0_:c0_ + ww] = color
        else:
            cy, cx = rng.uniform(0, size, 2)
            rad = rng.uniform(4, size / 5)
            disk = (rows * (size - 1) - cy) ** 2 + (cols * (size - 1) - cx) ** 2 <= rad ** 2
            img[disk] = color
    noise = ndi.gaussian_filter(rng.standard_normal((h, w)), 1.0)
    img = img + texture_amp * noise[..., None] / (noise.std() + 1e-12)
    return quantize(np.clip(img, 0.0, 1.0))


def make_fixtures(n=8, size=64, seed=0):
    return [make_fixture(seed * 1000 + i, size) for i in range(n)]


# ---------------------------------------------------------------------------
# Tamper simulators
# ---------------------------------------------------------------------------

def _check_rect(rect, shape, what="rect"):
    r, c, h, w = (int(v) for v in rect)
    if h < 0 or w < 0 or r < 0 or c < 0 or r + h > shape[0] or c + w > shape[1]:
        raise ValueError(f"{what} {rect} outside image of size {shape[0]}x{shape[1]}")
    return r, c, h, w


def _changed(a, b):
    return np.any(a != b, axis=2)


def tamper_splice(protected, donor, rect, seed=0):
    """Paste ``donor[rect]`` into ``protected`` at the same location."""
    protected = check_image(protected, "protected")
    donor = check_image(donor, "donor")
    check_same_shape(protected, donor, "protected and donor")
    r, c, h, w = _check_rect(rect, protected.shape)
    out = protected.copy()
    out[r:r + h, c:c + w] = donor[r:r + h, c:c + w]
    return out, _changed(out, protected)


def tamper_copy_move(protected, src_rect, offset, seed=0):
    """Copy ``src_rect`` to the rectangle shifted by ``offset = (drow, dcol)``."""
    protected = check_image(protected, "protected")
    r, c, h, w = _check_rect(src_rect, protected.shape, "source rect")
    dr, dc = (int(v) for v in offset)
    _check_rect((r + dr, c + dc, h, w), protected.shape, "destination rect")
    out = protected.copy()
    out[r + dr:r + dr + h, c + dc:c + dc + w] = protected[r:r + h, c:c + w]
    return out, _changed(out, protected)


def tamper_erase_fill(protected, rect, fill_mode="mean"):
    """Replace ``rect`` by its mean colour or a strong (sigma 8) blur."""
    protected = check_image(protected, "protected")
    r, c, h, w = _check_rect(rect, protected.shape)
    out = protected.copy()
    if h and w:
        if fill_mode == "mean":
            out[r:r + h, c:c + w] = protected[r:r + h, c:c + w].mean(axis=(0, 1))
        elif fill_mode == "blur":
            blurred = ndi.gaussian_filter(protected, sigma=(8, 8, 0), mode="nearest")
            out[r:r + h, c:c + w] = blurred[r:r + h, c:c + w]
        else:
            raise ValueError(f"fill_mode must be 'mean' or 'blur', got {fill_mode!r}")
        out = quantize(out)
        # quantisation must not touch pixels outside the edit
        outside = np.ones(protected.shape[:2], dtype=bool)
        outside[r:r + h, c:c + w] = False
        out[outside] = protected[outside]
    return out, _changed(out, protected)


def degrade_random(img, seed=0):
    """Mild seeded degradation: Gaussian noise, 0.9x bilinear round trip, requantise."""
    img = check_image(img)
    rng = np.random.default_rng(seed)
    h, w, _ = img.shape
    noisy = np.clip(img + rng.normal(0.0, 2 / 255, img.shape), 0.0, 1.0)
    small = resize(noisy, (round(0.9 * h), round(0.9 * w)), order=1, anti_aliasing=False)
    back = resize(small, (h, w), order=1, anti_aliasing=False)
    return quantize(np.clip(back, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Cases and reports
# ---------------------------------------------------------------------------

@dataclass
class TamperCase:
    original: np.ndarray
    protected: np.ndarray
    tampered: np.ndarray
    ground_truth: np.ndarray
    tamper_kind: str
    degradation: str = "clean"


def random_rect(rng, shape, size):
    r = int(rng.integers(0, shape[0] - size + 1))
    c = int(rng.integers(0, shape[1] - size + 1))
    return r, c, size, size


def make_case(original, protected, kind, rng, donor=None, patch=16):
    """Build one tamper case of ``kind`` on a protected image."""
    shape = protected.shape
    if kind == "splice":
        tampered, gt = tamper_splice(protected, donor, random_rect(rng, shape, patch))
    elif kind == "copy_move":
        # keep source and destination disjoint
        while True:
            src = random_rect(rng, shape, patch)
            dst = random_rect(rng, shape, patch)
            if abs(src[0] - dst[0]) >= patch or abs(src[1] - dst[1]) >= patch:
                break
        tampered, gt = tamper_copy_move(protected, src, (dst[0] - src[0], dst[1] - src[1]))
    elif kind == "erase_fill":
        mode = "mean" if rng.random() < 0.5 else "blur"
        tampered, gt = tamper_erase_fill(protected, random_rect(rng, shape, patch), mode)
    else:
        raise ValueError(f"unknown tamper kind {kind!r}")
    return TamperCase(original, protected, tampered, gt, kind)


@dataclass
class CaseResult:
    case: str
    degradation: str
    fixture: int
    tamper_kind: str
    repeat: int = 0
    f1: float = None
    iou: float = None
    psnr: float = None
    tampered_fraction: float = None
    error: str = None


@dataclass
class BenchReport:
    cases: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_dict(self):
        return {
            "cases": [asdict(c) for c in self.cases],
            "aggregates": self.aggregates,
            "config_hash": self.config_hash,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        import csv

        cols = list(CaseResult.__dataclass_fields__)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for c in self.cases:
                writer.writerow(asdict(c))

    def mean_f1(self, case, degradation="clean"):
        return self.aggregates[f"{case}/{degradation}"]["f1"]


def ablation_configs(base=None):
    """Per-case attack configs; ``None`` means the image is left unprotected."""
    base = base or AttackConfig()
    return {
        "a": None,
        "b": base.replace(spectral_projection=False, adaptive_step=False),
        "c": base.replace(lambda_lfc=0.0, beta_hfc=0.0),
        "full": base,
    }


def _config_hash(cfgs, detect_cfg, n_fixtures, seed, repeats=1):
    payload = {
        "repeats": repeats,
        "cases": {k: (None if v is None else asdict(v)) for k, v in cfgs.items()},
        "detect": asdict(detect_cfg),
        "fixtures": n_fixtures,
        "seed": seed,
    }
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _aggregate(results):
    groups = {}
    for res in results:
        groups.setdefault(f"{res.case}/{res.degradation}", []).append(res)
    out = {}
    for key, rows in sorted(groups.items()):
        ok = [r for r in rows if r.error is None]
        out[key] = {
            "label": CASE_LABELS[key.split("/")[0]],
            "n": len(rows),
            "failed": len(rows) - len(ok),
            "f1": float(np.mean([r.f1 for r in ok])) if ok else None,
            "iou": float(np.mean([r.iou for r in ok])) if ok else None,
            "psnr": float(np.mean([r.psnr for r in ok])) if ok else None,
        }
    return out


def run_ablation(fixtures, backend, cfgs=None, detect_cfg=None, seed=0, patch=16,
                 tamper_kind="splice", repeats=4):
    """Protect, tamper, optionally degrade, detect and score every fixture.

    Each protected fixture is tampered ``repeats`` times at seeded locations.
    Produces one aggregate row per (case, degradation) pair.
    """
    fixtures = [check_image(f) for f in fixtures]
    if len(fixtures) < 8:
        raise ValueError(f"ablation needs at least 8 fixtures, got {len(fixtures)}")
    cfgs = cfgs or ablation_configs()
    detect_cfg = detect_cfg or DetectConfig(C=cfgs["full"].C)
    results = []
    for name, cfg in cfgs.items():
        for i, original in enumerate(fixtures):
            try:
                protected = original if cfg is None else protect(original, backend, cfg)[0]
            except Exception as exc:  # noqa: BLE001 - failures are recorded per case
                log.warning("case %s fixture %d: protection failed: %s", name, i, exc)
                for rep in range(repeats):
                    for deg in DEGRADATIONS:
                        results.append(CaseResult(name, deg, i, tamper_kind, rep, error=str(exc)))
                continue
            rng = np.random.default_rng([seed, i])
            donor = fixtures[(i + 1) % len(fixtures)]
            fidelity = psnr(original, protected)
            for rep in range(repeats):
                tc = make_case(original, protected, tamper_kind, rng, donor=donor, patch=patch)
                for deg in DEGRADATIONS:
                    res = CaseResult(name, deg, i, tamper_kind, repeat=rep)
                    try:
                        probe = (tc.tampered if deg == "clean"
                                 else degrade_random(tc.tampered, seed + 997 * i + rep))
                        det = detect_tamper(probe, backend, detect_cfg)
                        res.f1, res.iou = f1_iou(det.mask, tc.ground_truth)
                        res.psnr = fidelity
                        res.tampered_fraction = det.tampered_fraction
                    except Exception as exc:  # noqa: BLE001
                        log.warning("case %s/%s fixture %d failed: %s", name, deg, i, exc)
                        res.error = str(exc)
                    results.append(res)
    return BenchReport(
        cases=results,
        aggregates=_aggregate(results),
        config_hash=_config_hash(cfgs, detect_cfg, len(fixtures), seed, repeats),
    )
