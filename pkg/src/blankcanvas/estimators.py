"""Scikit-learn style wrappers around protection and localisation.

``X`` is either one ``(H, W, 3)`` image or a batch: a list of images or an
``(n, H, W, 3)`` array. Outputs follow the same convention.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image, check_mask
from .attack import protect
from .config import AttackConfig, DetectConfig, parse_prompt
from .localize import detect_tamper
from .metrics import f1_iou
from .oracle import OracleBackend, get_backend


def _as_batch(X):
    """Return ``(list of checked images, was_single)``."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        return [check_image(X)], True
    if isinstance(X, np.ndarray) and X.ndim != 4:
        raise ValueError(f"expected an (H, W, 3) image or an (n, H, W, 3) batch, got {X.shape}")
    images = [check_image(x, f"X[{i}]") for i, x in enumerate(X)]
    if not images:
        raise ValueError("empty batch")
    return images, False


def _unbatch(items, single):
    if single:
        return items[0]
    shapes = {np.shape(i) for i in items}
    return np.stack(items) if len(shapes) == 1 else items


def _resolve_backend(backend, options):
    if isinstance(backend, OracleBackend):
        return backend
    return get_backend(backend, **(options or {}))


def _resolve_C(C, backend, fallback):
    if C is not None:
        return float(C)
    return float(backend.blank_constant if backend.blank_constant is not None else fallback)


class BlankCanvasProtector(TransformerMixin, BaseEstimator):
    """Transformer that adds a blanking perturbation to each image.

    ``C=None`` picks the backend's recommended blank constant. ``fit`` only
    resolves the backend and config; images are optimised in ``transform``,
    whose per-image reports land in ``reports_``.
    """

    def __init__(self, backend="toy", backend_options=None, epsilon=16 / 255, alpha0=2 / 255,
                 T=200, mu=0.9, C=None, lambda_lfc=1.0, beta_hfc=0.1, f_cutoff=None,
                 wavelet_levels=3, prompt=((0, 0),), seed=0, spectral_projection=True,
                 adaptive_step=True):
        self.backend = backend
        self.backend_options = backend_options
        self.epsilon = epsilon
        self.alpha0 = alpha0
        self.T = T
        self.mu = mu
        self.C = C
        self.lambda_lfc = lambda_lfc
        self.beta_hfc = beta_hfc
        self.f_cutoff = f_cutoff
        self.wavelet_levels = wavelet_levels
        self.prompt = prompt
        self.seed = seed
        self.spectral_projection = spectral_projection
        self.adaptive_step = adaptive_step

    def fit(self, X=None, y=None):
        self.backend_ = _resolve_backend(self.backend, self.backend_options)
        self.config_ = AttackConfig(
            epsilon=self.epsilon, alpha0=self.alpha0, T=self.T, mu=self.mu,
            C=_resolve_C(self.C, self.backend_, AttackConfig.C),
            lambda_lfc=self.lambda_lfc, beta_hfc=self.beta_hfc, f_cutoff=self.f_cutoff,
            wavelet_levels=self.wavelet_levels, prompt=parse_prompt(self.prompt),
            seed=self.seed, spectral_projection=self.spectral_projection,
            adaptive_step=self.adaptive_step)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        images, single = _as_batch(X)
        out, self.reports_ = [], []
        for img in images:
            protected, report = protect(img, self.backend_, self.config_)
            out.append(protected)
            self.reports_.append(report)
        return _unbatch(out, single)


class TamperLocalizer(BaseEstimator):
    """Predictor mapping protected (possibly tampered) images to tamper masks."""

    def __init__(self, backend="toy", backend_options=None, C=None, histogram_bins=256,
                 min_region_area=16, morphology_radius=2, blank_tol=None, prompt=((0, 0),)):
        self.backend = backend
        self.backend_options = backend_options
        self.C = C
        self.histogram_bins = histogram_bins
        self.min_region_area = min_region_area
        self.morphology_radius = morphology_radius
        self.blank_tol = blank_tol
        self.prompt = prompt

    def fit(self, X=None, y=None):
        self.backend_ = _resolve_backend(self.backend, self.backend_options)
        self.config_ = DetectConfig(
            C=_resolve_C(self.C, self.backend_, DetectConfig.C),
            histogram_bins=self.histogram_bins, min_region_area=self.min_region_area,
            morphology_radius=self.morphology_radius, blank_tol=self.blank_tol,
            prompt=parse_prompt(self.prompt))
        return self

    def _detect(self, X):
        check_is_fitted(self, "config_")
        images, single = _as_batch(X)
        return [detect_tamper(img, self.backend_, self.config_) for img in images], single

    def predict(self, X):
        """Boolean tamper masks."""
        results, single = self._detect(X)
        return _unbatch([r.mask for r in results], single)

    def decision_function(self, X):
        """Deviation maps ``|phi - C|``; larger means more likely tampered."""
        results, single = self._detect(X)
        return _unbatch([r.deviation for r in results], single)

    def score(self, X, y):
        """Mean F1 of the predicted masks against ground-truth masks ``y``."""
        pred = self.predict(X)
        if isinstance(pred, np.ndarray) and pred.ndim == 2:
            pred, y = [pred], [y]
        return float(np.mean([f1_iou(p, check_mask(g))[0] for p, g in zip(pred, y)]))
