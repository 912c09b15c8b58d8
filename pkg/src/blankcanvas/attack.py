"""Blank-canvas protection: loss assembly and the momentum / spectral PGD loop."""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ._validation import check_image, check_map, check_perturbation
from .config import AttackConfig
from .exceptions import BackendUnavailable, DivergenceError
from .frequency import canny_mask, hfc_loss_t, lfc_loss_t, spectral_mask, spectral_project
from .io import quantize
from .metrics import psnr

log = logging.getLogger(__name__)

DEGENERATE_L1 = 1e-12
QUANT_SLACK = 1 / 510


def attack_loss_t(phi, C, norm="mse"):
    if norm == "mse":
        return ((phi - C) ** 2).mean()
    if norm == "l1":
        # literal maximisation of the logit L1 norm, negated for minimisation
        return -phi.abs().mean()
    if norm == "l2":
        return (phi ** 2).mean()
    raise ValueError(f"unknown attack norm {norm!r}")


def attack_loss(phi, C, norm="mse"):
    """Mean squared residual of the confidence map from the blank constant."""
    phi = check_map(phi)
    return float(attack_loss_t(torch.from_numpy(phi), C, norm))


def total_loss_t(x, x_tilde, phi, cfg, edge_mask):
    """Minimised objective: attack + lambda * (1 - lfc) + sign * beta * hfc.

    ``phi`` may be a single map or a list of maps (one per prompt), in which
    case the attack term is their mean.
    """
    maps = phi if isinstance(phi, (list, tuple)) else [phi]
    loss = sum(attack_loss_t(p, cfg.C, cfg.attack_norm) for p in maps) / len(maps)
    if cfg.lambda_lfc:
        loss = loss + cfg.lambda_lfc * (1.0 - lfc_loss_t(x, x_tilde, cfg.wavelet_levels))
    if cfg.beta_hfc:
        loss = loss + cfg.hfc_sign * cfg.beta_hfc * hfc_loss_t(x, x_tilde, edge_mask,
                                                               cfg.wavelet_levels)
    return loss


def total_loss(x, x_tilde, phi, cfg, edge_mask):
    x = check_image(x, "x")
    x_tilde = check_image(x_tilde, "x_tilde")
    maps = phi if isinstance(phi, (list, tuple)) else [phi]
    maps = [torch.from_numpy(check_map(p)) for p in maps]
    tx = torch.from_numpy(np.ascontiguousarray(x))
    tt = torch.from_numpy(np.ascontiguousarray(x_tilde))
    mask = torch.from_numpy(np.asarray(edge_mask, dtype=bool))
    with torch.no_grad():
        return float(total_loss_t(tx, tt, maps, cfg, mask))


def adaptive_step(t, T, alpha0):
    """Warm-up step size, evaluated at ``t + 1`` so the first step is non-zero."""
    if not 0 <= t < T:
        raise ValueError(f"iteration {t} outside [0, {T})")
    return alpha0 * (1.0 - math.exp(-5.0 * (t + 1) / T))


def momentum_update(m, g_hat, mu):
    """L1-normalised momentum accumulation.

    Returns ``(m_next, degenerate)``; a gradient with L1 norm below 1e-12
    contributes nothing and sets ``degenerate``.
    """
    g_hat = np.asarray(g_hat, dtype=np.float64)
    if not np.all(np.isfinite(g_hat)):
        raise DivergenceError("non-finite projected gradient")
    norm = float(np.abs(g_hat).sum())
    degenerate = norm < DEGENERATE_L1
    m_next = mu * np.asarray(m, dtype=np.float64)
    if not degenerate:
        m_next = m_next + g_hat / norm
    if not np.all(np.isfinite(m_next)):
        raise DivergenceError("non-finite momentum")
    return m_next, degenerate


def pgd_step(delta, m, alpha, epsilon, x):
    """Signed step, clipped to the epsilon ball and to the valid pixel range."""
    step = np.clip(delta + alpha * np.sign(m), -epsilon, epsilon)
    return np.clip(step, -x, 1.0 - x)


@dataclass
class AttackState:
    delta: np.ndarray
    momentum: np.ndarray
    t: int = 0
    loss_history: list = field(default_factory=list)
    blank_history: list = field(default_factory=list)
    degenerate_steps: int = 0


@dataclass
class ProtectionReport:
    initial_loss: float
    final_loss: float
    blank_fraction: float
    psnr_db: float
    iterations: int
    post_quantization_blank_fraction: float
    clean_attack_loss: float
    final_attack_loss: float
    clean_mask_area: int
    adv_mask_area: int
    max_abs_delta: float
    degenerate_steps: int
    converged: bool
    blank_tol: float
    loss_history: list = field(default_factory=list, repr=False)
    blank_history: list = field(default_factory=list, repr=False)

    @property
    def attack_success(self):
        return self.adv_mask_area <= self.clean_mask_area

    def to_dict(self, include_history=False):
        out = asdict(self)
        if not include_history:
            out.pop("loss_history")
            out.pop("blank_history")
        out["attack_success"] = self.attack_success
        return out

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_trace(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss", "blank_fraction"])
            for i, (loss, blank) in enumerate(zip(self.loss_history, self.blank_history)):
                writer.writerow([i, repr(loss), repr(blank)])


def _blank(phi, C, tol):
    return float(np.mean(np.abs(phi - C) < tol))


class _Objective:
    """Differentiable total loss for one image, closed over the clean image."""

    def __init__(self, x, backend, cfg):
        self.backend = backend
        self.cfg = cfg
        self.x = torch.as_tensor(x, dtype=backend.dtype)
        self.edge = torch.from_numpy(canny_mask(x))
        self.prompts = cfg.prompt.split()

    def __call__(self, delta, with_grad=True):
        d = torch.as_tensor(delta, dtype=self.backend.dtype).requires_grad_(with_grad)
        x_tilde = self.x + d
        with torch.set_grad_enabled(with_grad):
            try:
                maps = [self.backend.forward_tensor(x_tilde, p) for p in self.prompts]
            except (RuntimeError, OSError) as exc:
                raise BackendUnavailable(self.backend.name, str(exc)) from exc
            loss = total_loss_t(self.x, x_tilde, maps, self.cfg, self.edge)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss {value}")
        phi = maps[0].detach().cpu().to(torch.float64).numpy()
        if not with_grad:
            return value, None, phi
        (grad,) = torch.autograd.grad(loss, d)
        grad = grad.detach().cpu().to(torch.float64).numpy()
        if not np.all(np.isfinite(grad)):
            raise DivergenceError("non-finite gradient")
        return value, grad, phi


def blank_tolerance(C):
    """Default blank-condition tolerance: a tenth of the gap to the mask threshold."""
    return 0.1 * abs(C)


def protect(x, backend, cfg=None, tol=None, callback=None):
    """Optimise an epsilon-bounded perturbation that blanks the oracle.

    Returns the protected image (on the 1/255 grid) and a
    :class:`ProtectionReport`.
    """
    cfg = cfg or AttackConfig()
    x = check_image(x)
    h, w, _ = x.shape
    cfg.prompt.validate(h, w)
    if not backend.supports_gradient:
        raise BackendUnavailable(backend.name, "protection needs a differentiable backend")
    tol = blank_tolerance(cfg.C) if tol is None else tol
    eps = cfg.epsilon

    objective = _Objective(x, backend, cfg)
    proj_mask = spectral_mask(h, w, cfg.cutoff_for(h, w)) if cfg.spectral_projection else None

    rng = np.random.default_rng(cfg.seed)
    delta0 = pgd_step(rng.uniform(-eps, eps, size=x.shape), np.zeros_like(x), 0.0, eps, x)
    state = AttackState(delta=delta0, momentum=np.zeros_like(x))

    clean_phi = backend.forward(x, cfg.prompt.split()[0])
    for t in range(cfg.T):
        value, grad, phi = objective(state.delta)
        state.loss_history.append(value)
        state.blank_history.append(_blank(phi, cfg.C, tol))
        # the update adds alpha * sign(m), so accumulate the descent direction
        g = -grad
        g_hat = spectral_project(g, proj_mask) if proj_mask is not None else g
        state.momentum, degenerate = momentum_update(state.momentum, g_hat, cfg.mu)
        state.degenerate_steps += degenerate
        alpha = adaptive_step(t, cfg.T, cfg.alpha0) if cfg.adaptive_step else cfg.alpha0
        state.delta = pgd_step(state.delta, state.momentum, alpha, eps, x)
        state.t = t + 1
        check_perturbation(state.delta, eps)
        if callback is not None:
            callback(state)

    float_phi = backend.forward(x + state.delta, cfg.prompt.split()[0])
    protected = quantize(x + state.delta)
    check_perturbation(protected - x, eps, QUANT_SLACK)
    final_loss, _, final_phi = objective(protected - x, with_grad=False)

    report = ProtectionReport(
        initial_loss=state.loss_history[0],
        final_loss=final_loss,
        blank_fraction=_blank(float_phi, cfg.C, tol),
        psnr_db=psnr(x, protected),
        iterations=cfg.T,
        post_quantization_blank_fraction=_blank(final_phi, cfg.C, tol),
        clean_attack_loss=attack_loss(clean_phi, cfg.C, cfg.attack_norm),
        final_attack_loss=attack_loss(final_phi, cfg.C, cfg.attack_norm),
        clean_mask_area=int(np.count_nonzero(clean_phi > 0)),
        adv_mask_area=int(np.count_nonzero(final_phi > 0)),
        max_abs_delta=float(np.abs(protected - x).max()),
        degenerate_steps=state.degenerate_steps,
        converged=final_loss <= state.loss_history[0],
        blank_tol=tol,
        loss_history=state.loss_history,
        blank_history=state.blank_history,
    )
    if not report.converged:
        log.warning("protection did not reduce the loss (%.4g -> %.4g)",
                    report.initial_loss, report.final_loss)
    return protected, report
