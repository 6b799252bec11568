"""Shared test utilities: finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

FD_STEP = 1e-4


def central_diff(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar f at x, elementwise over x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, atol: float = 1e-7) -> np.ndarray:
    """Relative error with an absolute floor for near-zero entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), atol / 1e-3)
    return np.abs(a - b) / denom


def assert_grads_close(analytic, numeric, rtol=1e-3, atol=1e-7, frac=1.0, msg=""):
    """Assert the fraction of coordinates within rtol is at least frac."""
    err = rel_err(analytic, numeric, atol=atol)
    ok = err <= rtol
    if ok.mean() < frac:
        bad = np.argwhere(~ok)[:5]
        raise AssertionError(
            f"{msg} gradient mismatch on {(~ok).sum()}/{ok.size} coords "
            f"(worst {err.max():.3e}); first bad idx {bad.tolist()}"
        )
