"""Gaussian-primitive math: quaternions, covariance assembly, spherical harmonics.

Every forward operation has a matching ``*_backward`` companion returning
hand-derived gradients; the test suite checks them against central finite
differences. All functions broadcast over leading batch dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

# Real spherical-harmonics constants, bands 0..3 (common 3DGS convention:
# Condon-Shortley sign folded out of the odd-m terms).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_SH_DEGREE = 3


@dataclass
class Gaussian3D:
    """One anisotropic Gaussian primitive.

    position      meters, world or local object frame
    rotation      unit quaternion (w, x, y, z)
    log_scale     log meters per axis; exp() gives strictly positive scales
    opacity_logit sigmoid() gives opacity in (0, 1)
    sh_coeffs     ((degree+1)^2, 3) view-dependent color coefficients
    """

    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64)
        self.rotation = quat_normalize(np.asarray(self.rotation, dtype=np.float64))
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64)
        self.opacity_logit = float(self.opacity_logit)
        self.sh_coeffs = np.atleast_2d(np.asarray(self.sh_coeffs, dtype=np.float64))
        sh_degree_for_count(self.sh_coeffs.shape[-2])

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)


def sh_degree_for_count(count: int) -> int:
    """Map a coefficient count (degree+1)^2 back to its degree, validating it."""
    degree = int(round(np.sqrt(count))) - 1
    if degree < 0 or (degree + 1) ** 2 != count or degree > MAX_SH_DEGREE:
        raise InvalidInputError(
            f"sh coefficient count {count} is not (d+1)^2 for a degree d <= {MAX_SH_DEGREE}"
        )
    return degree


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(y):
    y = np.asarray(y)
    return np.log(y / (1.0 - y))


def quat_normalize(q: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Return q / |q|; raises on (near-)zero quaternions."""
    q = np.asarray(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < eps):
        raise InvalidInputError("zero-norm quaternion cannot be normalized")
    return q / norm


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit-quaternion (w,x,y,z) to a proper rotation matrix. Renormalizes internally."""
    q = quat_normalize(q)
    w, x, y, z = (q[..., i] for i in range(4))
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat_backward(q: np.ndarray, grad_R: np.ndarray) -> np.ndarray:
    """dL/dq given dL/dR, chained through the internal renormalization."""
    q = np.asarray(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qh = q / norm
    w, x, y, z = (qh[..., i] for i in range(4))
    G = grad_R

    dw = 2 * (
        -z * G[..., 0, 1] + y * G[..., 0, 2]
        + z * G[..., 1, 0] - x * G[..., 1, 2]
        - y * G[..., 2, 0] + x * G[..., 2, 1]
    )
    dx = 2 * (
        y * G[..., 0, 1] + z * G[..., 0, 2]
        + y * G[..., 1, 0] - 2 * x * G[..., 1, 1] - w * G[..., 1, 2]
        + z * G[..., 2, 0] + w * G[..., 2, 1] - 2 * x * G[..., 2, 2]
    )
    dy = 2 * (
        -2 * y * G[..., 0, 0] + x * G[..., 0, 1] + w * G[..., 0, 2]
        + x * G[..., 1, 0] + z * G[..., 1, 2]
        - w * G[..., 2, 0] + z * G[..., 2, 1] - 2 * y * G[..., 2, 2]
    )
    dz = 2 * (
        -2 * z * G[..., 0, 0] - w * G[..., 0, 1] + x * G[..., 0, 2]
        + w * G[..., 1, 0] - 2 * z * G[..., 1, 1] + y * G[..., 1, 2]
        + x * G[..., 2, 0] + y * G[..., 2, 1]
    )
    grad_qh = np.stack([dw, dx, dy, dz], axis=-1)
    # chain through q_hat = q / |q|
    radial = np.sum(qh * grad_qh, axis=-1, keepdims=True)
    return (grad_qh - qh * radial) / norm


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Proper rotation matrix to unit quaternion (w >= 0 canonical form)."""
    R = np.asarray(R)
    batch = R.shape[:-2]
    Rf = R.reshape((-1, 3, 3))
    n = Rf.shape[0]
    q = np.empty((n, 4), dtype=R.dtype)

    tr = Rf[:, 0, 0] + Rf[:, 1, 1] + Rf[:, 2, 2]
    # pick, per matrix, the numerically dominant branch
    cand = np.stack([tr, Rf[:, 0, 0], Rf[:, 1, 1], Rf[:, 2, 2]], axis=1)
    branch = np.argmax(cand, axis=1)

    m = branch == 0
    if np.any(m):
        s = np.sqrt(tr[m] + 1.0) * 2
        q[m, 0] = 0.25 * s
        q[m, 1] = (Rf[m, 2, 1] - Rf[m, 1, 2]) / s
        q[m, 2] = (Rf[m, 0, 2] - Rf[m, 2, 0]) / s
        q[m, 3] = (Rf[m, 1, 0] - Rf[m, 0, 1]) / s
    m = branch == 1
    if np.any(m):
        s = np.sqrt(1.0 + Rf[m, 0, 0] - Rf[m, 1, 1] - Rf[m, 2, 2]) * 2
        q[m, 0] = (Rf[m, 2, 1] - Rf[m, 1, 2]) / s
        q[m, 1] = 0.25 * s
        q[m, 2] = (Rf[m, 0, 1] + Rf[m, 1, 0]) / s
        q[m, 3] = (Rf[m, 0, 2] + Rf[m, 2, 0]) / s
    m = branch == 2
    if np.any(m):
        s = np.sqrt(1.0 + Rf[m, 1, 1] - Rf[m, 0, 0] - Rf[m, 2, 2]) * 2
        q[m, 0] = (Rf[m, 0, 2] - Rf[m, 2, 0]) / s
        q[m, 1] = (Rf[m, 0, 1] + Rf[m, 1, 0]) / s
        q[m, 2] = 0.25 * s
        q[m, 3] = (Rf[m, 1, 2] + Rf[m, 2, 1]) / s
    m = branch == 3
    if np.any(m):
        s = np.sqrt(1.0 + Rf[m, 2, 2] - Rf[m, 0, 0] - Rf[m, 1, 1]) * 2
        q[m, 0] = (Rf[m, 1, 0] - Rf[m, 0, 1]) / s
        q[m, 1] = (Rf[m, 0, 2] + Rf[m, 2, 0]) / s
        q[m, 2] = (Rf[m, 1, 2] + Rf[m, 2, 1]) / s
        q[m, 3] = 0.25 * s

    q = quat_normalize(q)
    flip = q[:, 0] < 0
    q[flip] *= -1
    return q.reshape(batch + (4,))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b, both (w,x,y,z)."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_left_matrix(a: np.ndarray) -> np.ndarray:
    """Matrix Q so that quat_multiply(a, b) == Q @ b (linear in b)."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    rows = [
        [aw, -ax, -ay, -az],
        [ax, aw, -az, ay],
        [ay, az, aw, -ax],
        [az, -ay, ax, aw],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def rot_quat(R_t: np.ndarray, q_o: np.ndarray) -> np.ndarray:
    """Rotate quaternion q_o by rotation matrix R_t: returns q with
    quat_to_rotmat(q) == R_t @ quat_to_rotmat(q_o)."""
    q_t = rotmat_to_quat(R_t)
    return quat_normalize(quat_multiply(q_t, q_o))


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Sign-canonicalized copy (w >= 0) for comparisons only."""
    q = np.asarray(q)
    sign = np.where(q[..., :1] < 0, -1.0, 1.0)
    return q * sign


def build_covariance(rotation: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    """Sigma = R diag(exp(2*log_scale)) R^T; symmetric PSD by construction."""
    R = quat_to_rotmat(rotation)
    d = np.exp(2.0 * np.asarray(log_scale))
    return np.einsum("...ik,...k,...jk->...ij", R, d, R)


def build_covariance_backward(
    rotation: np.ndarray, log_scale: np.ndarray, grad_sigma: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (dL/dq, dL/dlog_scale) for build_covariance.

    grad_sigma holds dL/dSigma treating all nine entries as independent.
    """
    R = quat_to_rotmat(rotation)
    d = np.exp(2.0 * np.asarray(log_scale))
    Gs = 0.5 * (grad_sigma + np.swapaxes(grad_sigma, -1, -2))
    grad_R = 2.0 * np.einsum("...ij,...jk,...k->...ik", Gs, R, d)
    grad_d = np.einsum("...ij,...ik,...jk->...k", Gs, R, R)
    grad_log_scale = grad_d * 2.0 * d
    grad_q = quat_to_rotmat_backward(rotation, grad_R)
    return grad_q, grad_log_scale


def gaussian_covariance(g: Gaussian3D) -> np.ndarray:
    return build_covariance(g.rotation, g.log_scale)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real-SH basis values for unit directions; shape (..., (degree+1)^2)."""
    x, y, z = (dirs[..., i] for i in range(3))
    out = [np.full(x.shape, SH_C0, dtype=dirs.dtype)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(out, axis=-1)


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis_k)/d(dir); shape (..., (degree+1)^2, 3)."""
    x, y, z = (dirs[..., i] for i in range(3))
    zero = np.zeros_like(x)
    g = [np.stack([zero, zero, zero], axis=-1)]
    if degree >= 1:
        g += [
            np.stack([zero, np.full_like(x, -SH_C1), zero], axis=-1),
            np.stack([zero, zero, np.full_like(x, SH_C1)], axis=-1),
            np.stack([np.full_like(x, -SH_C1), zero, zero], axis=-1),
        ]
    if degree >= 2:
        g += [
            np.stack([SH_C2[0] * y, SH_C2[0] * x, zero], axis=-1),
            np.stack([zero, SH_C2[1] * z, SH_C2[1] * y], axis=-1),
            np.stack([-2 * SH_C2[2] * x, -2 * SH_C2[2] * y, 4 * SH_C2[2] * z], axis=-1),
            np.stack([SH_C2[3] * z, zero, SH_C2[3] * x], axis=-1),
            np.stack([2 * SH_C2[4] * x, -2 * SH_C2[4] * y, zero], axis=-1),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        g += [
            np.stack([6 * SH_C3[0] * x * y, 3 * SH_C3[0] * (xx - yy), zero], axis=-1),
            np.stack([SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y], axis=-1),
            np.stack(
                [-2 * SH_C3[2] * x * y, SH_C3[2] * (4 * zz - xx - 3 * yy), 8 * SH_C3[2] * y * z],
                axis=-1,
            ),
            np.stack(
                [-6 * SH_C3[3] * x * z, -6 * SH_C3[3] * y * z, SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)],
                axis=-1,
            ),
            np.stack(
                [SH_C3[4] * (4 * zz - 3 * xx - yy), -2 * SH_C3[4] * x * y, 8 * SH_C3[4] * x * z],
                axis=-1,
            ),
            np.stack([2 * SH_C3[5] * x * z, -2 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)], axis=-1),
            np.stack([3 * SH_C3[6] * (xx - yy), -6 * SH_C3[6] * x * y, zero], axis=-1),
        ]
    return np.stack(g, axis=-2)


def sh_to_color(sh_coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """Evaluate view-dependent RGB: clamp(0.5 + sum_k basis_k * sh_k, 0, 1)."""
    sh_coeffs = np.asarray(sh_coeffs)
    degree = sh_degree_for_count(sh_coeffs.shape[-2])
    basis = sh_basis(np.asarray(view_dir), degree)
    raw = 0.5 + np.einsum("...k,...kc->...c", basis, sh_coeffs)
    return np.clip(raw, 0.0, 1.0)


def sh_to_color_backward(
    sh_coeffs: np.ndarray, view_dir: np.ndarray, grad_rgb: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (dL/dsh, dL/ddir). Clamped channels receive zero gradient."""
    sh_coeffs = np.asarray(sh_coeffs)
    view_dir = np.asarray(view_dir)
    degree = sh_degree_for_count(sh_coeffs.shape[-2])
    basis = sh_basis(view_dir, degree)
    raw = 0.5 + np.einsum("...k,...kc->...c", basis, sh_coeffs)
    live = ((raw > 0.0) & (raw < 1.0)).astype(grad_rgb.dtype)
    g = grad_rgb * live
    grad_sh = basis[..., :, None] * g[..., None, :]
    bgrad = sh_basis_grad(view_dir, degree)
    grad_dir = np.einsum("...kc,...kd->...d", sh_coeffs * g[..., None, :], bgrad)
    return grad_sh, grad_dir


def normalize_dir(v: np.ndarray, eps: float = 1e-12):
    """Unit vector and norm of v along the last axis."""
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    n = np.maximum(n, eps)
    return v / n, n


def normalize_dir_backward(v: np.ndarray, grad_unit: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """dL/dv for unit = v/|v|."""
    n = np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), eps)
    u = v / n
    radial = np.sum(u * grad_unit, axis=-1, keepdims=True)
    return (grad_unit - u * radial) / n
