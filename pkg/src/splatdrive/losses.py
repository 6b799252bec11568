"""Photometric and depth losses with analytic gradients.

L1 on color, structural similarity (11x11 Gaussian window, sigma 1.5,
valid-mode windows), and masked L1 on depth. The SSIM backward returns the
exact gradient of the mean SSIM score with respect to the first image.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

from .errors import InvalidInputError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _gaussian_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    x = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(x ** 2) / (2.0 * SSIM_SIGMA ** 2))
    g /= g.sum()
    return np.outer(g, g)


_WINDOW = _gaussian_window()


def _filter_valid(img: np.ndarray) -> np.ndarray:
    return fftconvolve(img, _WINDOW, mode="valid")


def _scatter_full(coeff: np.ndarray) -> np.ndarray:
    # adjoint of _filter_valid: spread window-level values back to pixels
    return fftconvolve(coeff, _WINDOW, mode="full")


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise InvalidInputError(f"expected (H, W, 3) images, got {a.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise InvalidInputError(
            f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over valid windows and channels."""
    _check_pair(a, b)
    return _ssim_maps(a, b)[0]


def _ssim_maps(a: np.ndarray, b: np.ndarray):
    score = 0.0
    per_channel = []
    for c in range(3):
        x, y = a[:, :, c], b[:, :, c]
        mx, my = _filter_valid(x), _filter_valid(y)
        sxx = _filter_valid(x * x) - mx * mx
        syy = _filter_valid(y * y) - my * my
        sxy = _filter_valid(x * y) - mx * my
        a1 = 2.0 * mx * my + SSIM_C1
        a2 = 2.0 * sxy + SSIM_C2
        b1 = mx * mx + my * my + SSIM_C1
        b2 = sxx + syy + SSIM_C2
        s = (a1 * a2) / (b1 * b2)
        per_channel.append((s, mx, my, a1, a2, b1, b2))
        score += s.mean()
    return score / 3.0, per_channel


def ssim_with_grad(a: np.ndarray, b: np.ndarray):
    """SSIM score and its exact gradient with respect to image `a`."""
    _check_pair(a, b)
    score, maps = _ssim_maps(a, b)
    grad = np.zeros_like(a)
    for c, (s, mx, my, a1, a2, b1, b2) in enumerate(maps):
        x, y = a[:, :, c], b[:, :, c]
        n_windows = s.size
        inv = 1.0 / (b1 * b2)
        # dS_j/dx_i = 2 w_ij (F_j + G_j y_i + H_j x_i)
        g = a1 * inv
        h = -s / b2
        f = (a2 * my) * inv - s * mx / b1 - g * my - h * mx
        scale = 2.0 / (3.0 * n_windows)
        grad[:, :, c] = scale * (_scatter_full(f)
                                 + y * _scatter_full(g)
                                 + x * _scatter_full(h))
    return score, grad


def l1_with_grad(a: np.ndarray, b: np.ndarray):
    """Mean absolute error and its subgradient with respect to `a`."""
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    loss = float(np.abs(diff).mean())
    return loss, np.sign(diff) / diff.size


def masked_l1_with_grad(a: np.ndarray, b: np.ndarray, valid: np.ndarray):
    """Mean absolute error over `valid` pixels; zero when none are valid."""
    if a.shape != b.shape or a.shape != valid.shape:
        raise InvalidInputError("masked L1: shape mismatch")
    n = int(valid.sum())
    grad = np.zeros_like(a)
    if n == 0:
        return 0.0, grad
    diff = a - b
    loss = float(np.abs(diff[valid]).sum() / n)
    grad[valid] = np.sign(diff[valid]) / n
    return loss, grad
