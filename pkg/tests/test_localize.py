import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage as ndi

from blankcanvas.bench import tamper_splice
from blankcanvas.localize import (NO_THRESHOLD, blank_fraction, clean_mask, deviation_map,
                                  detect_tamper, mask_from_deviation, otsu_threshold)
from blankcanvas.metrics import f1_iou


def test_blank_fraction_examples():
    C, tol = 15.0, 1.5
    assert blank_fraction(np.full((4, 4), C), C, tol) == 1.0
    assert blank_fraction(np.full((4, 4), C + 2 * tol), C, tol) == 0.0
    phi = np.full((4, 4), C)
    phi[:2] += 2 * tol
    assert blank_fraction(phi, C, tol) == 0.5
    with pytest.raises(ValueError):
        blank_fraction(phi, C, 0.0)


def test_deviation_map(rng):
    C = -19.5
    assert not deviation_map(np.full((3, 3), C), C).any()
    phi = np.full((3, 3), C)
    phi[1, 1] = C - 3
    assert deviation_map(phi, C)[1, 1] == 3
    r = rng.normal(size=(5, 5))
    assert np.array_equal(deviation_map(C + r, C), deviation_map(C - r, C))
    with pytest.raises(ValueError):
        deviation_map(np.full((2, 2), np.inf), C)


def otsu_brute_force(d, bins):
    """Arg-max of between-class variance over every bin edge by direct summation."""
    d = np.asarray(d, dtype=np.float64).ravel()
    counts, edges = np.histogram(d, bins=bins, range=(d.min(), d.max()))
    centers = (edges[:-1] + edges[1:]) / 2
    total = counts.sum()
    best, best_k = -1.0, None
    for k in range(bins - 1):
        n0, n1 = counts[:k + 1].sum(), counts[k + 1:].sum()
        if n0 == 0 or n1 == 0:
            continue
        m0 = (counts[:k + 1] * centers[:k + 1]).sum() / n0
        m1 = (counts[k + 1:] * centers[k + 1:]).sum() / n1
        var = n0 * n1 * (m0 - m1) ** 2 / total ** 2
        if var > best * (1 + 1e-12):
            best, best_k = var, k
    return edges[best_k + 1]


def random_deviation_map(rng):
    h, w = rng.integers(8, 40, 2)
    d = np.abs(rng.normal(0, rng.uniform(0.1, 2), (h, w)))
    if rng.random() < 0.7:
        r, c = rng.integers(0, h // 2), rng.integers(0, w // 2)
        d[r:r + h // 3, c:c + w // 3] += rng.uniform(2, 30)
    return d


def test_otsu_matches_brute_force(rng):
    for _ in range(60):
        d = random_deviation_map(rng)
        bins = int(rng.choice([2, 16, 64, 256]))
        assert otsu_threshold(d, bins) == otsu_brute_force(d, bins)


def test_otsu_examples():
    d = np.zeros((8, 8))
    d[:4] = 10.0
    tau = otsu_threshold(d, 256)
    assert np.all(d[:4] > tau) and np.all(d[4:] <= tau)
    # every split of a two-level map is tied; the smallest wins
    assert tau == pytest.approx(10 / 256)
    assert otsu_threshold(np.full((4, 4), 3.0)) is NO_THRESHOLD
    with pytest.raises(ValueError):
        otsu_threshold(d, 1)


@settings(max_examples=40, deadline=None)
@given(arrays(bool, (20, 20)), st.integers(0, 3))
def test_clean_mask_stays_near_raw(raw, radius):
    out = clean_mask(raw, radius, 0)
    assert out.dtype == bool and out.shape == raw.shape
    if radius:
        disk = np.add.outer(np.arange(-radius, radius + 1) ** 2,
                            np.arange(-radius, radius + 1) ** 2) <= radius ** 2
        reach = ndi.binary_dilation(raw, disk)
    else:
        reach = raw
    assert not (out & ~reach).any()


def test_clean_mask_removes_specks_and_keeps_blobs():
    raw = np.zeros((32, 32), dtype=bool)
    raw[4:14, 4:14] = True
    raw[25, 25] = True
    out = clean_mask(raw, 2, 16)
    # opening rounds the corners but keeps the body
    assert out[6:12, 6:12].all() and not out[25, 25]
    assert f1_iou(out, raw)[1] > 0.85
    assert not clean_mask(raw, 0, 200).any()


def test_mask_from_constant_deviation_is_empty():
    mask, tau = mask_from_deviation(np.zeros((16, 16)), _cfg(-19.5))
    assert tau is NO_THRESHOLD and not mask.any()


def _cfg(C):
    from blankcanvas.config import DetectConfig

    return DetectConfig(C=C)


def test_untampered_protected_images_stay_clean(protected_set, toy, detect_cfg):
    for protected in protected_set[0]:
        det = detect_tamper(protected, toy, detect_cfg)
        assert det.tampered_fraction < 0.02
        mask, dev = det
        assert mask.shape == dev.shape == (64, 64)


def test_foreign_patch_is_localised(protected_set, fixtures, toy, detect_cfg):
    ious = []
    for i, protected in enumerate(protected_set[0]):
        donor = fixtures[(i + 3) % 8]
        tampered, gt = tamper_splice(protected, donor, (20, 24, 16, 16))
        det = detect_tamper(tampered, toy, detect_cfg)
        ious.append(f1_iou(det.mask, gt)[1])
        assert np.array_equal(det.mask, detect_tamper(tampered, toy, detect_cfg).mask)
    assert np.mean(ious) >= 0.7


def test_unprotected_localisation_is_far_worse(protected_set, fixtures, toy, detect_cfg):
    f_prot, f_raw = [], []
    for i, (x, protected) in enumerate(zip(fixtures, protected_set[0])):
        donor = fixtures[(i + 3) % 8]
        for base, out in ((protected, f_prot), (x, f_raw)):
            tampered, gt = tamper_splice(base, donor, (30, 10, 16, 16))
            out.append(f1_iou(detect_tamper(tampered, toy, detect_cfg).mask, gt)[0])
    assert np.mean(f_raw) < 0.5 * np.mean(f_prot)


def test_larger_patch_never_detects_less(protected_set, fixtures, toy, detect_cfg):
    for i, protected in enumerate(protected_set[0]):
        donor = fixtures[(i + 5) % 8]
        hits = []
        for size in (8, 12, 16, 20):
            tampered, gt = tamper_splice(protected, donor, (16, 16, size, size))
            hits.append(int((detect_tamper(tampered, toy, detect_cfg).mask & gt).sum()))
        assert hits == sorted(hits), f"fixture {i}: {hits}"
