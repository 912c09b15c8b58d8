import numpy as np
import pytest
import torch

from blankcanvas.config import PromptSpec
from blankcanvas.exceptions import BackendUnavailable, DivergenceError
from blankcanvas.oracle import (OracleBackend, ToySegmenter, available_backends, forward,
                                get_backend, loss_value_and_grad, make_kernel_bank,
                                predicted_mask, sample_prompts)

P0 = PromptSpec()


def test_kernel_bank_is_seeded():
    a, b = make_kernel_bank(3), make_kernel_bank(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, make_kernel_bank(4))
    assert a.shape == (6, 5, 5)
    assert np.array_equal(a[0, 1:4, 1:4], [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]])
    assert np.array_equal(a[1], a[0].T)
    assert np.allclose(a[2:].sum(axis=(1, 2)), 0)
    with pytest.raises(ValueError):
        make_kernel_bank(0, size=4)


def test_toy_is_seeded_bit_for_bit():
    x = np.random.default_rng(1).random((32, 32, 3))
    assert np.array_equal(ToySegmenter(seed=5).forward(x, P0), ToySegmenter(seed=5).forward(x, P0))
    assert not np.array_equal(ToySegmenter(seed=5).forward(x, P0), ToySegmenter(seed=6).forward(x, P0))


def test_constant_image_gives_uniform_map(toy):
    for value in (0.0, 0.3, 1.0):
        for prompt in (P0, PromptSpec(points=((20, 7),))):
            phi = forward(toy, np.full((32, 32, 3), value), prompt)
            assert phi.shape == (32, 32)
            # kernels are zero-mean up to float roundoff
            assert np.ptp(phi) < 1e-9


def test_step_edge_raises_response(toy):
    x = np.zeros((32, 32, 3))
    x[:, 16:] = 1.0
    profile = np.abs(forward(toy, x, P0)).mean(axis=0)
    flat = np.concatenate([profile[:10], profile[22:]])
    # the Sobel pair straddles the step at columns 15 and 16
    assert profile[15:17].min() > flat.max()


def test_forward_deterministic_and_bounded(toy, rng):
    x = rng.random((32, 32, 3))
    a = forward(toy, x, P0)
    assert np.array_equal(a, forward(toy, x, P0))
    assert np.all(np.abs(a) <= toy.output_scale)
    with pytest.raises(Exception):
        forward(toy, x, PromptSpec(points=((40, 0),)))


def test_prompt_gate_matters(rng):
    toy = ToySegmenter(gate_sigma=4.0)
    x = rng.random((32, 32, 3))
    a = toy.forward(x, PromptSpec(points=((0, 0),)))
    b = toy.forward(x, PromptSpec(points=((31, 31),)))
    assert not np.allclose(a, b)
    gate = toy.gate(32, 32, PromptSpec(points=((0, 0),)))
    assert gate[0, 0] == 1.0 and gate[31, 31] < gate[0, 1]


def test_predicted_mask_is_strict():
    assert not predicted_mask(np.full((4, 4), -5.0)).any()
    assert predicted_mask(np.full((4, 4), 15.0)).all()
    phi = np.ones((4, 4))
    phi[1, 2] = 0.0
    mask = predicted_mask(phi)
    assert not mask[1, 2] and mask.sum() == 15


def test_constant_loss_has_zero_gradient(toy, rng):
    x = rng.random((16, 16, 3))
    value, grad = loss_value_and_grad(toy, x, P0, lambda phi: torch.tensor(3.0))
    assert value == 3.0
    assert grad.shape == x.shape and not grad.any()


def _fd_gradient(f, x, h=1e-4):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
    return grad


def test_mse_gradient_matches_finite_differences(toy):
    x = np.random.default_rng(7).uniform(0.1, 0.9, (16, 16, 3))
    C = toy.blank_constant

    def loss(phi):
        return ((phi - C) ** 2).mean()

    value, grad = loss_value_and_grad(toy, x, P0, loss)
    assert grad.shape == x.shape
    fd = _fd_gradient(lambda z: float(loss(torch.from_numpy(toy.forward(z, P0)))), x)
    err = np.max(np.abs(grad - fd)) / (np.max(np.abs(fd)) + 1e-12)
    assert err < 1e-3


class _Broken(OracleBackend):
    name = "broken"
    supports_gradient = True

    def forward_tensor(self, x, prompt):
        return x.mean(dim=2) * float("nan")


class _ForwardOnly(OracleBackend):
    name = "fwd"

    def forward_tensor(self, x, prompt):
        return x.mean(dim=2)


def test_gradient_errors(rng):
    x = rng.random((16, 16, 3))
    with pytest.raises(BackendUnavailable):
        loss_value_and_grad(_ForwardOnly(), x, P0, lambda p: p.sum())
    with pytest.raises(DivergenceError):
        loss_value_and_grad(_Broken(), x, P0, lambda p: p.sum())


def test_sample_prompts():
    assert sample_prompts(32, 32, 1).points == ((0, 0),)
    four = sample_prompts(32, 32, 4)
    assert four.mode == "grid"
    assert sorted({r for r, _ in four.points}) == [8, 24]
    assert sorted({c for _, c in four.points}) == [8, 24]
    assert len(four.points) == 4
    five = sample_prompts(32, 32, 5, seed=3)
    assert five == sample_prompts(32, 32, 5, seed=3)
    assert len(set(five.points)) == 5
    with pytest.raises(ValueError):
        sample_prompts(2, 2, 5)
    with pytest.raises(ValueError):
        sample_prompts(8, 8, 0)


def test_registry():
    assert {"toy", "sam-vith"} <= set(available_backends())
    assert isinstance(get_backend("toy", toy_seed=2), ToySegmenter)
    assert get_backend("toy", toy_seed=2).seed == 2
    with pytest.raises(BackendUnavailable, match="unknown"):
        get_backend("nope")


def test_sam_backend_reports_unavailable(monkeypatch, tmp_path):
    monkeypatch.delenv("BLANKCANVAS_SAM_WEIGHTS", raising=False)
    with pytest.raises(BackendUnavailable, match="sam-vith"):
        get_backend("sam-vith", weights=str(tmp_path / "missing.pth"))
