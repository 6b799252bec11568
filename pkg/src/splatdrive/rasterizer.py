"""Tile-based differentiable rasterizer for 3D Gaussians.

Forward pass: perspective-project each Gaussian to a 2D splat (EWA
approximation with a first-order Jacobian at the mean), bin splats into
16x16 pixel tiles, then composite front to back per tile with early
termination. Backward pass: hand-derived analytic gradients through
compositing, the 2D covariance, the projection Jacobian, and spherical
harmonics, back to every Gaussian parameter. No autograd anywhere.

Conventions:
  - camera frame: x right, y down, z forward; x_cam = R @ x_world + t
  - pixel (i, j) has center (j + 0.5, i + 0.5) in projected coordinates
  - depth of a splat is its camera-space z at the mean
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .gauss import (
    build_covariance,
    build_covariance_backward,
    normalize_dir,
    normalize_dir_backward,
    sh_to_color,
    sh_to_color_backward,
    sigmoid,
)
from .gset import GaussianGrads, GaussianSet

TILE = 16
# transmittance floor: compositing stops once T drops below this
T_EPS = 1e-4
# per-splat alpha ceiling keeps (1 - alpha) bounded away from zero
ALPHA_MAX = 0.99
# screen-space low-pass: added to cov2d diagonal so every splat covers a pixel
LOWPASS = 0.3
# splats contribute inside 3 standard deviations of the projected footprint
FOOTPRINT_SIGMA = 3.0
# alpha mass below this renders depth as 0 (background)
DEPTH_ALPHA_EPS = 1e-12


@dataclass
class CameraPose:
    """Pinhole camera: world-to-camera rotation R, translation t, intrinsics."""

    R: np.ndarray                # (3, 3)
    t: np.ndarray                # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.05
    far: float = 200.0

    def __post_init__(self) -> None:
        self.R = np.ascontiguousarray(self.R, dtype=np.float64)
        self.t = np.ascontiguousarray(self.t, dtype=np.float64)
        if self.R.shape != (3, 3):
            raise InvalidInputError(f"camera R: expected (3, 3), got {self.R.shape}")
        if self.t.shape != (3,):
            raise InvalidInputError(f"camera t: expected (3,), got {self.t.shape}")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("image dimensions must be positive")
        if not (0 < self.near < self.far):
            raise InvalidInputError("require 0 < near < far")

    @property
    def camera_center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return -self.R.T @ self.t

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.R.T + self.t

    def key_values(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "near": self.near, "far": self.far,
        }


@dataclass
class Splat2D:
    mean: np.ndarray       # (2,) pixel coordinates
    cov2d: np.ndarray      # (2, 2) screen-space covariance (low-pass included)
    depth: float
    color: np.ndarray      # (3,) view-dependent RGB in [0, 1]
    alpha_base: float      # opacity after sigmoid, before the Gaussian falloff


@dataclass
class RenderOutput:
    color: np.ndarray      # (H, W, 3)
    depth: np.ndarray      # (H, W) alpha-normalized mean splat depth
    alpha: np.ndarray      # (H, W) accumulated opacity in [0, 1]


@dataclass
class _Projection:
    """Visible splats after culling, in original input order."""

    idx: np.ndarray        # (M,) indices into the input set
    xcam: np.ndarray       # (M, 3)
    mean2d: np.ndarray     # (M, 2)
    cov_a: np.ndarray      # (M,) cov2d[0, 0]
    cov_b: np.ndarray      # (M,) cov2d[0, 1]
    cov_c: np.ndarray      # (M,) cov2d[1, 1]
    inv_a: np.ndarray
    inv_b: np.ndarray
    inv_c: np.ndarray
    depth: np.ndarray      # (M,)
    color: np.ndarray      # (M, 3)
    gamma: np.ndarray      # (M,) sigmoid(opacity_logit)
    tx0: np.ndarray
    tx1: np.ndarray
    ty0: np.ndarray
    ty1: np.ndarray


@dataclass
class RenderState:
    """Everything the backward pass needs to avoid re-projecting."""

    proj: _Projection
    order: np.ndarray        # (M,) projection rows sorted front to back
    pair_rank: np.ndarray    # (n_pairs,) rank (= position in order) per tile pair
    tile_starts: np.ndarray  # (n_tiles + 1,) run boundaries into pair_rank
    out: RenderOutput
    dtype: np.dtype
    n_input: int
    sh_k: int


def _project(gs: GaussianSet, cam: CameraPose, dtype) -> _Projection:
    pos = gs.positions.astype(dtype, copy=False)
    W = cam.R.astype(dtype)
    t = cam.t.astype(dtype)

    xcam_all = pos @ W.T + t
    near_mask = xcam_all[:, 2] > cam.near
    idx = np.flatnonzero(near_mask)

    def _empty() -> _Projection:
        e = np.zeros(0, dtype)
        ei = np.zeros(0, np.int64)
        return _Projection(
            ei, np.zeros((0, 3), dtype), np.zeros((0, 2), dtype),
            e, e, e, e, e, e, e, np.zeros((0, 3), dtype), e, ei, ei, ei, ei,
        )

    if idx.size == 0:
        return _empty()

    xcam = xcam_all[idx]
    x, y, z = xcam[:, 0], xcam[:, 1], xcam[:, 2]
    fx, fy = dtype(cam.fx), dtype(cam.fy)

    mean2d = np.stack([fx * x / z + dtype(cam.cx), fy * y / z + dtype(cam.cy)], axis=1)

    rot = gs.rotations[idx].astype(dtype, copy=False)
    log_scale = gs.log_scales[idx].astype(dtype, copy=False)
    sigma = build_covariance(rot, log_scale)

    # JW rows: d(pixel)/d(x_world); J is the projection Jacobian at the mean
    zinv = 1.0 / z
    zinv2 = zinv * zinv
    n = idx.size
    J = np.zeros((n, 2, 3), dtype)
    J[:, 0, 0] = fx * zinv
    J[:, 0, 2] = -fx * x * zinv2
    J[:, 1, 1] = fy * zinv
    J[:, 1, 2] = -fy * y * zinv2
    JW = J @ W
    cov2d = np.einsum("nij,njk,nlk->nil", JW, sigma, JW, optimize=True)
    a = cov2d[:, 0, 0] + dtype(LOWPASS)
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + dtype(LOWPASS)

    # 3-sigma footprint from the larger eigenvalue
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = FOOTPRINT_SIGMA * np.sqrt(lam_max)

    mx, my = mean2d[:, 0], mean2d[:, 1]
    visible = (
        (mx + radius > 0.0) & (mx - radius < cam.width)
        & (my + radius > 0.0) & (my - radius < cam.height)
    )
    keep = np.flatnonzero(visible)
    if keep.size == 0:
        return _empty()

    idx = idx[keep]
    xcam = xcam[keep]
    mean2d = mean2d[keep]
    a, b, c = a[keep], b[keep], c[keep]
    radius = radius[keep]
    mx, my = mean2d[:, 0], mean2d[:, 1]

    det = a * c - b * b
    inv_a = c / det
    inv_b = -b / det
    inv_c = a / det

    origin = cam.camera_center.astype(dtype)
    dirs, _ = normalize_dir(gs.positions[idx].astype(dtype, copy=False) - origin)
    color = sh_to_color(gs.sh_coeffs[idx].astype(dtype, copy=False), dirs)

    gamma = sigmoid(gs.opacity_logits[idx].astype(dtype, copy=False))

    n_tx = (cam.width + TILE - 1) // TILE
    n_ty = (cam.height + TILE - 1) // TILE
    tx0 = np.clip(np.floor((mx - radius) / TILE).astype(np.int64), 0, n_tx - 1)
    tx1 = np.clip(np.floor((mx + radius) / TILE).astype(np.int64), 0, n_tx - 1)
    ty0 = np.clip(np.floor((my - radius) / TILE).astype(np.int64), 0, n_ty - 1)
    ty1 = np.clip(np.floor((my + radius) / TILE).astype(np.int64), 0, n_ty - 1)

    return _Projection(
        idx, xcam, mean2d, a, b, c, inv_a, inv_b, inv_c,
        xcam[:, 2].copy(), color, gamma, tx0, tx1, ty0, ty1,
    )


def project_gaussian(gs_or_single, cam: CameraPose, index: int = 0,
                     dtype=np.float64) -> Splat2D | None:
    """Project one Gaussian; returns None when culled."""
    if isinstance(gs_or_single, GaussianSet):
        gs = gs_or_single.take([index])
    else:
        gs = GaussianSet.from_gaussians([gs_or_single])
    proj = _project(gs, cam, np.dtype(dtype).type)
    if proj.idx.size == 0:
        return None
    cov = np.array([[proj.cov_a[0], proj.cov_b[0]], [proj.cov_b[0], proj.cov_c[0]]])
    return Splat2D(proj.mean2d[0], cov, float(proj.depth[0]), proj.color[0],
                   float(proj.gamma[0]))


def _build_pairs(proj: _Projection, n_tx: int, n_ty: int):
    """Depth-sort splats, then expand each into (tile, rank) pairs.

    Ranks index into the sorted order, so every per-tile run is already
    front to back. Stable sort keeps equal depths in input order.
    """
    order = np.argsort(proj.depth, kind="stable")
    tx0, tx1 = proj.tx0[order], proj.tx1[order]
    ty0, ty1 = proj.ty0[order], proj.ty1[order]

    w = tx1 - tx0 + 1
    counts = w * (ty1 - ty0 + 1)
    total = int(counts.sum())
    rank = np.repeat(np.arange(order.size, dtype=np.int64), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    wr = w[rank]
    tx = tx0[rank] + local % wr
    ty = ty0[rank] + local // wr
    tile_id = ty * n_tx + tx

    perm = np.argsort(tile_id, kind="stable")
    tile_id = tile_id[perm]
    rank = rank[perm]
    tile_starts = np.searchsorted(tile_id, np.arange(n_tx * n_ty + 1))
    return order, rank, tile_starts


def _tile_pixels(r0: int, r1: int, c0: int, c1: int, dtype):
    cols = np.arange(c0, c1, dtype=dtype) + dtype(0.5)
    rows = np.arange(r0, r1, dtype=dtype) + dtype(0.5)
    px = np.tile(cols, r1 - r0)
    py = np.repeat(rows, c1 - c0)
    return px, py


def _composite_tile(proj, ranks, order, px, py, dtype):
    """Front-to-back alpha blending for one tile.

    Returns (color (P, 3), depth_acc (P,), T_final (P,)).
    """
    rows = order[ranks]
    mean = proj.mean2d[rows]
    dx = px[None, :] - mean[:, 0][:, None]
    dy = py[None, :] - mean[:, 1][:, None]
    ia = proj.inv_a[rows][:, None]
    ib = proj.inv_b[rows][:, None]
    ic = proj.inv_c[rows][:, None]
    power = 0.5 * (ia * dx * dx + ic * dy * dy) + ib * dx * dy
    g = np.exp(-np.maximum(power, 0.0))
    alpha = np.minimum(proj.gamma[rows][:, None] * g, dtype(ALPHA_MAX))

    n, p = alpha.shape
    trans = np.empty((n + 1, p), dtype)
    trans[0] = 1.0
    np.cumprod(1.0 - alpha, axis=0, out=trans[1:])
    live = trans[:-1] >= T_EPS
    weight = alpha * trans[:-1] * live

    color = weight.T @ proj.color[rows]
    depth_acc = proj.depth[rows] @ weight
    processed = live.sum(axis=0)
    t_final = np.take_along_axis(trans, processed[None, :], axis=0)[0]
    return color, depth_acc, t_final


def render(gs: GaussianSet, cam: CameraPose, *, dtype=np.float64,
           workers: int = 1, return_state: bool = False):
    """Rasterize a GaussianSet into color, depth, and alpha images.

    With return_state=True also returns the RenderState consumed by
    render_backward, which reuses the projection and tile binning.
    """
    dt = np.dtype(dtype).type
    h, w = cam.height, cam.width
    out = RenderOutput(
        np.zeros((h, w, 3), dt), np.zeros((h, w), dt), np.zeros((h, w), dt),
    )
    proj = _project(gs, cam, dt)
    n_tx = (w + TILE - 1) // TILE
    n_ty = (h + TILE - 1) // TILE

    if proj.idx.size == 0:
        order = np.zeros(0, np.int64)
        rank = np.zeros(0, np.int64)
        tile_starts = np.zeros(n_tx * n_ty + 1, np.int64)
    else:
        order, rank, tile_starts = _build_pairs(proj, n_tx, n_ty)

    tiles = np.flatnonzero(np.diff(tile_starts) > 0)

    def run_tile(tid: int) -> None:
        ranks = rank[tile_starts[tid]:tile_starts[tid + 1]]
        ty, tx = divmod(tid, n_tx)
        r0, c0 = ty * TILE, tx * TILE
        r1, c1 = min(r0 + TILE, h), min(c0 + TILE, w)
        px, py = _tile_pixels(r0, r1, c0, c1, dt)
        color, depth_acc, t_final = _composite_tile(proj, ranks, order, px, py, dt)
        th, tw = r1 - r0, c1 - c0
        alpha_img = 1.0 - t_final
        valid = alpha_img > DEPTH_ALPHA_EPS
        depth = np.where(valid, depth_acc / np.where(valid, alpha_img, 1.0), 0.0)
        out.color[r0:r1, c0:c1] = color.reshape(th, tw, 3)
        out.depth[r0:r1, c0:c1] = depth.reshape(th, tw)
        out.alpha[r0:r1, c0:c1] = alpha_img.reshape(th, tw)

    if workers > 1 and tiles.size > 1:
        # tiles write disjoint image regions, so threads need no locking
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_tile, tiles.tolist()))
    else:
        for tid in tiles.tolist():
            run_tile(tid)

    if not return_state:
        return out
    state = RenderState(proj, order, rank, tile_starts, out, np.dtype(dtype),
                        len(gs), gs.sh_coeffs.shape[1])
    return out, state


def _backward_tile(proj, ranks, order, px, py, g_color, g_depth_acc, g_tfinal,
                   dtype, acc):
    """Accumulate parameter gradients for one tile into acc arrays.

    acc holds (g_mean2d, g_cov, g_color, g_gamma, g_depth) indexed by
    projection row. Within a tile each splat appears once, so fancy-index
    += is safe.
    """
    rows = order[ranks]
    mean = proj.mean2d[rows]
    dx = px[None, :] - mean[:, 0][:, None]
    dy = py[None, :] - mean[:, 1][:, None]
    ia = proj.inv_a[rows][:, None]
    ib = proj.inv_b[rows][:, None]
    ic = proj.inv_c[rows][:, None]
    power = 0.5 * (ia * dx * dx + ic * dy * dy) + ib * dx * dy
    unclamped = power > 0.0
    g = np.exp(-np.maximum(power, 0.0))
    gamma = proj.gamma[rows][:, None]
    raw_alpha = gamma * g
    not_ceiling = raw_alpha < ALPHA_MAX
    alpha = np.minimum(raw_alpha, dtype(ALPHA_MAX))

    n, p = alpha.shape
    trans = np.empty((n + 1, p), dtype)
    trans[0] = 1.0
    om = 1.0 - alpha
    np.cumprod(om, axis=0, out=trans[1:])
    live = trans[:-1] >= T_EPS
    weight = alpha * trans[:-1] * live

    colors = proj.color[rows]
    z = proj.depth[rows]
    processed = live.sum(axis=0)
    t_final = np.take_along_axis(trans, processed[None, :], axis=0)[0]

    # dL/dcolor and dL/ddepth are linear in the weights
    acc[2][rows] += weight @ g_color
    acc[4][rows] += weight @ g_depth_acc

    # u[k, p]: payload gradient of pixel p against splat k's contribution
    u = colors @ g_color.T + z[:, None] * g_depth_acc[None, :]
    uw = u * weight
    suffix = np.flip(np.cumsum(np.flip(uw, 0), axis=0), 0) - uw

    # dL/dalpha_k = T_k u_k - suffix_k / (1 - alpha_k)
    #             + g_tfinal * dT_final/dalpha_k, all gated on live;
    # dT_final/dalpha_k = -T_final / (1 - alpha_k) for processed splats
    d_alpha = live * (u * trans[:-1] - suffix / om
                      - g_tfinal[None, :] * t_final[None, :] / om)

    mask = d_alpha * not_ceiling
    acc[3][rows] += (mask * g).sum(axis=1)

    d_power = -(mask * raw_alpha) * unclamped
    gx = d_power * (ia * dx + ib * dy)
    gy = d_power * (ib * dx + ic * dy)
    acc[0][rows, 0] += -gx.sum(axis=1)
    acc[0][rows, 1] += -gy.sum(axis=1)

    # gradients w.r.t. the inverse covariance entries
    g_ia = 0.5 * (d_power * dx * dx).sum(axis=1)
    g_ib = (d_power * dx * dy).sum(axis=1)
    g_ic = 0.5 * (d_power * dy * dy).sum(axis=1)

    # map back through matrix inversion: dL/dM = -M^-1 G M^-1 (symmetric)
    iav = proj.inv_a[rows]
    ibv = proj.inv_b[rows]
    icv = proj.inv_c[rows]
    h_ib = 0.5 * g_ib
    # G M^-1 rows
    m00 = g_ia * iav + h_ib * ibv
    m01 = g_ia * ibv + h_ib * icv
    m10 = h_ib * iav + g_ic * ibv
    m11 = h_ib * ibv + g_ic * icv
    acc[1][rows, 0] += -(iav * m00 + ibv * m10)
    acc[1][rows, 1] += -2.0 * (iav * m01 + ibv * m11)
    acc[1][rows, 2] += -(ibv * m01 + icv * m11)


def render_backward(gs: GaussianSet, cam: CameraPose, state: RenderState,
                    grad_color: np.ndarray, grad_depth: np.ndarray | None = None,
                    grad_alpha: np.ndarray | None = None,
                    workers: int = 1) -> GaussianGrads:
    """Analytic gradients of the rendered images w.r.t. Gaussian parameters.

    grad_depth applies to the alpha-normalized depth image; pixels whose
    alpha mass is below threshold contribute nothing.
    """
    proj = state.proj
    dt = state.dtype.type
    h, w = cam.height, cam.width
    grad_color = np.ascontiguousarray(grad_color, dtype=dt)
    if grad_color.shape != (h, w, 3):
        raise InvalidInputError(
            f"grad_color: expected {(h, w, 3)}, got {grad_color.shape}")
    if grad_depth is None:
        grad_depth = np.zeros((h, w), dt)
    else:
        grad_depth = np.ascontiguousarray(grad_depth, dtype=dt)
    if grad_alpha is None:
        grad_alpha = np.zeros((h, w), dt)
    else:
        grad_alpha = np.ascontiguousarray(grad_alpha, dtype=dt)

    grads = GaussianGrads.zeros_like(gs, dt)
    m = proj.idx.size
    if m == 0:
        return grads

    # depth normalization: D = Zacc / A on valid pixels
    alpha_img = state.out.alpha
    valid = alpha_img > DEPTH_ALPHA_EPS
    safe_a = np.where(valid, alpha_img, 1.0)
    g_depth_acc_img = np.where(valid, grad_depth / safe_a, 0.0)
    g_alpha_img = grad_alpha + np.where(
        valid, -grad_depth * state.out.depth / safe_a, 0.0)
    # alpha image = 1 - T_final
    g_tfinal_img = -g_alpha_img

    n_tx = (w + TILE - 1) // TILE
    tiles = np.flatnonzero(np.diff(state.tile_starts) > 0)

    def make_acc():
        return (
            np.zeros((m, 2), dt), np.zeros((m, 3), dt), np.zeros((m, 3), dt),
            np.zeros((m,), dt), np.zeros((m,), dt),
        )

    def run_tiles(tile_list, acc):
        for tid in tile_list:
            ranks = state.pair_rank[state.tile_starts[tid]:state.tile_starts[tid + 1]]
            ty, tx = divmod(int(tid), n_tx)
            r0, c0 = ty * TILE, tx * TILE
            r1, c1 = min(r0 + TILE, h), min(c0 + TILE, w)
            px, py = _tile_pixels(r0, r1, c0, c1, dt)
            gc = grad_color[r0:r1, c0:c1].reshape(-1, 3)
            gz = g_depth_acc_img[r0:r1, c0:c1].reshape(-1)
            gt = g_tfinal_img[r0:r1, c0:c1].reshape(-1)
            _backward_tile(proj, ranks, state.order, px, py, gc, gz, gt, dt, acc)

    if workers > 1 and tiles.size > 1:
        # per-worker buffers, reduced in worker order for determinism
        chunks = np.array_split(tiles, workers)
        accs = [make_acc() for _ in chunks]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda pair: run_tiles(pair[0].tolist(), pair[1]),
                          zip(chunks, accs)))
        acc = make_acc()
        for a in accs:
            for dst, src in zip(acc, a):
                dst += src
    else:
        acc = make_acc()
        run_tiles(tiles.tolist(), acc)

    g_mean2d, g_cov, g_col, g_gamma, g_z = acc
    return _chain_to_params(gs, cam, proj, g_mean2d, g_cov, g_col, g_gamma,
                            g_z, grads, dt)


def _chain_to_params(gs, cam, proj, g_mean2d, g_cov, g_col, g_gamma, g_z,
                     grads, dt):
    idx = proj.idx
    x, y, z = proj.xcam[:, 0], proj.xcam[:, 1], proj.xcam[:, 2]
    fx, fy = dt(cam.fx), dt(cam.fy)
    W = cam.R.astype(dt)
    m = idx.size

    # opacity: gamma = sigmoid(logit)
    gamma = proj.gamma
    grads.opacity_logits[idx] = g_gamma * gamma * (1.0 - gamma)

    # color -> SH coefficients and view direction -> position
    origin = cam.camera_center.astype(dt)
    raw_dir = gs.positions[idx].astype(dt, copy=False) - origin
    dirs, _ = normalize_dir(raw_dir)
    sh = gs.sh_coeffs[idx].astype(dt, copy=False)
    g_sh, g_dir = sh_to_color_backward(sh, dirs, g_col)
    g_pos = normalize_dir_backward(raw_dir, g_dir)
    grads.sh_coeffs[idx] = g_sh

    # cov2d = (JW) Sigma (JW)^T + lowpass
    rot = gs.rotations[idx].astype(dt, copy=False)
    log_scale = gs.log_scales[idx].astype(dt, copy=False)
    sigma = build_covariance(rot, log_scale)

    zinv = 1.0 / z
    zinv2 = zinv * zinv
    J = np.zeros((m, 2, 3), dt)
    J[:, 0, 0] = fx * zinv
    J[:, 0, 2] = -fx * x * zinv2
    J[:, 1, 1] = fy * zinv
    J[:, 1, 2] = -fy * y * zinv2
    JW = J @ W

    gam = np.empty((m, 2, 2), dt)
    gam[:, 0, 0] = g_cov[:, 0]
    gam[:, 0, 1] = 0.5 * g_cov[:, 1]
    gam[:, 1, 0] = 0.5 * g_cov[:, 1]
    gam[:, 1, 1] = g_cov[:, 2]

    g_sigma = np.einsum("nji,njk,nkl->nil", JW, gam, JW, optimize=True)
    g_rot, g_log_scale = build_covariance_backward(rot, log_scale, g_sigma)
    grads.rotations[idx] = g_rot
    grads.log_scales[idx] = g_log_scale

    # dL/dJ = 2 Gamma J V with V = W Sigma W^T (Gamma symmetric)
    V = np.einsum("ij,njk,lk->nil", W, sigma, W, optimize=True)
    g_J = 2.0 * np.einsum("nij,njk,nkl->nil", gam, J, V, optimize=True)

    # J depends on x_cam
    g_xcam = np.zeros((m, 3), dt)
    g_xcam[:, 0] = g_J[:, 0, 2] * (-fx * zinv2)
    g_xcam[:, 1] = g_J[:, 1, 2] * (-fy * zinv2)
    g_xcam[:, 2] = (
        g_J[:, 0, 0] * (-fx * zinv2) + g_J[:, 1, 1] * (-fy * zinv2)
        + g_J[:, 0, 2] * (2.0 * fx * x * zinv2 * zinv)
        + g_J[:, 1, 2] * (2.0 * fy * y * zinv2 * zinv)
    )

    # pixel mean
    g_xcam[:, 0] += g_mean2d[:, 0] * fx * zinv
    g_xcam[:, 1] += g_mean2d[:, 1] * fy * zinv
    g_xcam[:, 2] += (g_mean2d[:, 0] * (-fx * x * zinv2)
                     + g_mean2d[:, 1] * (-fy * y * zinv2))

    # depth payload is camera z
    g_xcam[:, 2] += g_z

    grads.positions[idx] = g_xcam @ W + g_pos
    grads.mean2d_norm[idx] = np.sqrt(g_mean2d[:, 0] ** 2 + g_mean2d[:, 1] ** 2)
    grads.visible[idx] = True
    return grads
