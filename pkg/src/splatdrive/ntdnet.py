"""Trajectory-deformation network for novel-view Gaussian correction.

Two MLP branches: a pose branch consuming the normalized delta pose
between the rendering trajectory and the recorded one, and a field branch
consuming positional encodings of Gaussian position and timestep. Branch
outputs are summed and mapped by a zero-initialized linear head to
per-Gaussian parameter deltas. On the recorded trajectory the network is
bypassed entirely, so original-view renders are bitwise unaffected by it.

All forward/backward math is hand-written numpy; weights live in float64
and the compute dtype is a parameter, matching the rasterizer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidInputError
from .gauss import quat_normalize, normalize_dir_backward
from .gset import GaussianGrads, GaussianSet
from .se3 import RigidPose, rotmat_to_axis_angle

# delta layout: position 3 + rotation 4 + log_scale 3 + opacity_logit 1
DELTA_WIDTH = 11


def positional_encode(v: np.ndarray, bands: int) -> np.ndarray:
    """[v, sin(2^k pi v), cos(2^k pi v)] for k = 0..bands-1, per component."""
    v = np.asarray(v)
    if bands < 0:
        raise InvalidInputError("bands must be >= 0")
    parts = [v]
    for k in range(bands):
        arg = (2.0 ** k) * np.pi * v
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


def positional_encode_backward(v: np.ndarray, bands: int,
                               grad_out: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    d = v.shape[-1]
    grad = grad_out[..., :d].copy()
    for k in range(bands):
        f = (2.0 ** k) * np.pi
        arg = f * v
        gs = grad_out[..., (1 + 2 * k) * d:(2 + 2 * k) * d]
        gc = grad_out[..., (2 + 2 * k) * d:(3 + 2 * k) * d]
        grad += gs * f * np.cos(arg) - gc * f * np.sin(arg)
    return grad


def encoded_width(dim: int, bands: int) -> int:
    return dim * (1 + 2 * bands)


def delta_pose(p_novel: RigidPose, p_ori: RigidPose, L: float) -> np.ndarray:
    """Normalized 6-vector pose difference: translation and axis-angle / L."""
    if not L > 0:
        raise InvalidInputError("delta-pose normalization length L must be > 0")
    dt = (p_novel.t - p_ori.t) / L
    daa = rotmat_to_axis_angle(p_ori.R.T @ p_novel.R) / L
    return np.concatenate([dt, daa])


def _init_layers(rng: np.random.Generator, widths: list[int]) -> list:
    layers = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_out, n_in))
        layers.append((w, np.zeros(n_out)))
    return layers


@dataclass
class NTDNetParams:
    """Weights and hyperparameters of the deformation network.

    pose_layers / field_layers: list of (W, b) with ReLU between layers
    and a linear final layer; out_w/out_b map the summed 'hidden'-wide
    features to DELTA_WIDTH and start at zero so training begins from the
    identity deformation.
    """

    pose_layers: list
    field_layers: list
    out_w: np.ndarray
    out_b: np.ndarray
    pe_bands_x: int
    pe_bands_t: int
    L: float

    def __post_init__(self) -> None:
        if not self.L > 0:
            raise ConfigError("L must be > 0")
        if self.pe_bands_x < 0 or self.pe_bands_t < 0:
            raise ConfigError("positional encoding band counts must be >= 0")
        if not self.pose_layers or not self.field_layers:
            raise ConfigError("both MLP branches need at least one layer")
        for name, layers, n_in in [
            ("pose_mlp", self.pose_layers, 6),
            ("field_mlp", self.field_layers,
             encoded_width(3, self.pe_bands_x) + encoded_width(1, self.pe_bands_t)),
        ]:
            for i, (w, b) in enumerate(layers):
                if w.ndim != 2 or w.shape[1] != n_in:
                    raise ConfigError(
                        f"{name} layer {i}: weight {w.shape} does not accept "
                        f"input width {n_in}")
                if b.shape != (w.shape[0],):
                    raise ConfigError(f"{name} layer {i}: bias shape {b.shape}")
                n_in = w.shape[0]
        hidden = self.pose_layers[-1][0].shape[0]
        if self.field_layers[-1][0].shape[0] != hidden:
            raise ConfigError("branch output widths differ; cannot sum features")
        if self.out_w.shape != (DELTA_WIDTH, hidden):
            raise ConfigError(
                f"output layer: expected {(DELTA_WIDTH, hidden)}, got {self.out_w.shape}")
        if self.out_b.shape != (DELTA_WIDTH,):
            raise ConfigError("output bias shape mismatch")

    @classmethod
    def create(cls, seed: int = 0, n_layers: int = 8, hidden: int = 256,
               pe_bands_x: int = 10, pe_bands_t: int = 6,
               L: float = 6.0) -> "NTDNetParams":
        rng = np.random.default_rng(seed)
        in_field = encoded_width(3, pe_bands_x) + encoded_width(1, pe_bands_t)
        pose = _init_layers(rng, [6] + [hidden] * n_layers)
        fld = _init_layers(rng, [in_field] + [hidden] * n_layers)
        return cls(pose, fld, np.zeros((DELTA_WIDTH, hidden)), np.zeros(DELTA_WIDTH),
                   pe_bands_x, pe_bands_t, L)

    @property
    def hidden(self) -> int:
        return self.pose_layers[-1][0].shape[0]

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Stable (name, array) listing for serialization and optimizers."""
        out = []
        for branch, layers in [("pose", self.pose_layers), ("field", self.field_layers)]:
            for i, (w, b) in enumerate(layers):
                out.append((f"{branch}.{i}.w", w))
                out.append((f"{branch}.{i}.b", b))
        out.append(("out.w", self.out_w))
        out.append(("out.b", self.out_b))
        return out

    def load_named_arrays(self, arrays: dict) -> None:
        for name, arr in self.named_arrays():
            if name not in arrays:
                raise InvalidInputError(f"missing network array {name!r}")
            src = arrays[name]
            if src.shape != arr.shape:
                raise InvalidInputError(
                    f"network array {name!r}: shape {src.shape} != {arr.shape}")
            arr[...] = src

    @classmethod
    def from_named_arrays(cls, arrays: dict, pe_bands_x: int,
                          pe_bands_t: int, L: float) -> "NTDNetParams":
        """Rebuild a network purely from its serialized arrays; the layer
        count and width come from the array shapes."""
        def branch(prefix: str):
            layers = []
            i = 0
            while f"{prefix}.{i}.w" in arrays:
                layers.append((np.ascontiguousarray(arrays[f"{prefix}.{i}.w"],
                                                    dtype=np.float64),
                               np.ascontiguousarray(arrays[f"{prefix}.{i}.b"],
                                                    dtype=np.float64)))
                i += 1
            if not layers:
                raise InvalidInputError(f"no '{prefix}' layers in arrays")
            return layers

        for key in ("out.w", "out.b"):
            if key not in arrays:
                raise InvalidInputError(f"missing network array {key!r}")
        return cls(branch("pose"), branch("field"),
                   np.ascontiguousarray(arrays["out.w"], dtype=np.float64),
                   np.ascontiguousarray(arrays["out.b"], dtype=np.float64),
                   pe_bands_x, pe_bands_t, L)


@dataclass
class DeltaSet:
    """Per-Gaussian parameter deltas, the network's output."""

    d_position: np.ndarray      # (N, 3)
    d_rotation: np.ndarray      # (N, 4)
    d_log_scale: np.ndarray     # (N, 3)
    d_opacity_logit: np.ndarray  # (N,)

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "DeltaSet":
        if flat.ndim != 2 or flat.shape[1] != DELTA_WIDTH:
            raise InvalidInputError(f"deltas: expected (N, {DELTA_WIDTH}), got {flat.shape}")
        return cls(flat[:, 0:3], flat[:, 3:7], flat[:, 7:10], flat[:, 10])

    @classmethod
    def zeros(cls, n: int, dtype=np.float64) -> "DeltaSet":
        return cls.from_flat(np.zeros((n, DELTA_WIDTH), dtype))

    def to_flat(self) -> np.ndarray:
        return np.concatenate(
            [self.d_position, self.d_rotation, self.d_log_scale,
             self.d_opacity_logit[:, None]], axis=1)

    def __len__(self) -> int:
        return len(self.d_opacity_logit)


def _mlp_forward(layers, x, dtype):
    """Returns (output, cache of per-layer inputs). ReLU between layers,
    final layer linear."""
    cache = []
    h = x.astype(dtype, copy=False)
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        cache.append(h)
        h = h @ w.T.astype(dtype) + b.astype(dtype)
        if i != last:
            h = np.maximum(h, 0.0)
    return h, cache


def _mlp_backward(layers, cache, out, grad_out, dtype):
    """Returns (per-layer (gw, gb), grad_input).

    cache holds layer inputs; post-ReLU activations are the cached inputs
    of the following layer, so the ReLU mask is reconstructed from them.
    """
    grads = [None] * len(layers)
    g = grad_out
    last = len(layers) - 1
    for i in range(last, -1, -1):
        w, _ = layers[i]
        if i != last:
            # cache[i+1] is this layer's post-ReLU output
            g = g * (cache[i + 1] > 0.0)
        x = cache[i]
        if x.ndim == 1:
            gw = np.outer(g, x)
            gb = g.copy()
        else:
            gw = g.T @ x
            gb = g.sum(axis=0)
        grads[i] = (gw, gb)
        g = g @ w.astype(dtype)
    return grads, g


@dataclass
class NTDNetGrads:
    pose_layers: list
    field_layers: list
    out_w: np.ndarray
    out_b: np.ndarray

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for branch, layers in [("pose", self.pose_layers), ("field", self.field_layers)]:
            for i, (w, b) in enumerate(layers):
                out.append((f"{branch}.{i}.w", w))
                out.append((f"{branch}.{i}.b", b))
        out.append(("out.w", self.out_w))
        out.append(("out.b", self.out_b))
        return out


@dataclass
class _ForwardCache:
    dp: np.ndarray
    positions: np.ndarray
    t: float
    pose_cache: list
    pose_out: np.ndarray
    field_cache: list
    field_out: np.ndarray
    feat: np.ndarray
    enc_x: np.ndarray
    enc_t: np.ndarray


def ntd_forward(params: NTDNetParams, dp: np.ndarray, positions: np.ndarray,
                t: float, dtype=np.float64, return_cache: bool = False):
    """Per-Gaussian deltas for one frame on a novel trajectory.

    dp: 6-vector from delta_pose; positions: (N, 3) canonical Gaussian
    positions; t: timestep normalized to [0, 1].
    """
    dp = np.asarray(dp, dtype=np.float64)
    if dp.shape != (6,):
        raise InvalidInputError(f"delta pose: expected (6,), got {dp.shape}")
    positions = np.asarray(positions)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise InvalidInputError(f"positions: expected (N, 3), got {positions.shape}")
    dt = np.dtype(dtype).type
    n = positions.shape[0]

    pose_out, pose_cache = _mlp_forward(params.pose_layers, dp.astype(dt), dt)

    enc_x = positional_encode(positions.astype(dt, copy=False), params.pe_bands_x)
    enc_t = positional_encode(np.full((n, 1), t, dt), params.pe_bands_t)
    field_in = np.concatenate([enc_x, enc_t], axis=1)
    field_out, field_cache = _mlp_forward(params.field_layers, field_in, dt)

    feat = field_out + pose_out[None, :]
    flat = feat @ params.out_w.T.astype(dt) + params.out_b.astype(dt)
    deltas = DeltaSet.from_flat(flat)
    if not return_cache:
        return deltas
    cache = _ForwardCache(dp, positions, t, pose_cache, pose_out, field_cache,
                          field_out, feat, enc_x, enc_t)
    return deltas, cache


def ntd_backward(params: NTDNetParams, cache: _ForwardCache,
                 grad_deltas: np.ndarray, dtype=np.float64):
    """Gradients of a scalar loss w.r.t. weights and Gaussian positions.

    grad_deltas: (N, DELTA_WIDTH) upstream gradient in flat delta layout.
    """
    dt = np.dtype(dtype).type
    g = np.asarray(grad_deltas, dtype=dt)
    n = g.shape[0]
    if g.shape != (n, DELTA_WIDTH):
        raise InvalidInputError(f"grad_deltas: expected (N, {DELTA_WIDTH}), got {g.shape}")

    g_out_w = g.T @ cache.feat
    g_out_b = g.sum(axis=0)
    g_feat = g @ params.out_w.astype(dt)

    field_grads, g_field_in = _mlp_backward(
        params.field_layers, cache.field_cache, cache.field_out, g_feat, dt)
    pose_grads, _ = _mlp_backward(
        params.pose_layers, cache.pose_cache, cache.pose_out,
        g_feat.sum(axis=0), dt)

    nx = cache.enc_x.shape[1]
    g_positions = positional_encode_backward(
        cache.positions.astype(dt, copy=False), params.pe_bands_x,
        g_field_in[:, :nx])

    grads = NTDNetGrads(pose_grads, field_grads, g_out_w, g_out_b)
    return grads, g_positions


def apply_deformation(gs: GaussianSet, deltas: DeltaSet) -> GaussianSet:
    """Additive parameter update; quaternions renormalized after the add.

    Callers rendering the recorded trajectory must not call this at all:
    the bypass, not a zero delta, is what guarantees bitwise equality.
    """
    if len(deltas) != len(gs):
        raise InvalidInputError(
            f"deformation: {len(deltas)} deltas for {len(gs)} Gaussians")
    return GaussianSet(
        gs.positions + deltas.d_position,
        quat_normalize(gs.rotations + deltas.d_rotation),
        gs.log_scales + deltas.d_log_scale,
        gs.opacity_logits + deltas.d_opacity_logit,
        gs.sh_coeffs,
    )


def apply_deformation_backward(gs: GaussianSet, deltas: DeltaSet,
                               grads_deformed: GaussianGrads):
    """Splits gradients w.r.t. deformed parameters into gradients w.r.t.
    the originals and w.r.t. the flat deltas."""
    raw_q = gs.rotations + deltas.d_rotation
    g_raw_q = normalize_dir_backward(raw_q, grads_deformed.rotations)

    grad_deltas = np.concatenate([
        grads_deformed.positions,
        g_raw_q,
        grads_deformed.log_scales,
        grads_deformed.opacity_logits[:, None],
    ], axis=1)

    grads = GaussianGrads(
        grads_deformed.positions.copy(),
        g_raw_q.copy(),
        grads_deformed.log_scales.copy(),
        grads_deformed.opacity_logits.copy(),
        grads_deformed.sh_coeffs.copy(),
        None if grads_deformed.mean2d_norm is None else grads_deformed.mean2d_norm.copy(),
        None if grads_deformed.visible is None else grads_deformed.visible.copy(),
    )
    return grads, grad_deltas
