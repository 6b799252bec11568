"""Adam updates over named parameter groups, plus density control.

Parameters live in named float64 arrays mutated in place. A group is
skipped wholesale when any of its gradients is non-finite; the caller
counts the returned warnings. Density control (clone, split, prune)
returns an index mapping so the optimizer moments can follow row moves.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .gauss import quat_to_rotmat, sigmoid
from .gset import GaussianSet

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15
PRUNE_OPACITY = 0.005
SPLIT_SHRINK = 1.6


@dataclass
class AdamState:
    """Per-array first/second moments and step counters, keyed by name."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for key in sorted(self.m):
            out[f"m.{key}"] = self.m[key]
            out[f"v.{key}"] = self.v[key]
            out[f"t.{key}"] = np.array([self.t[key]], dtype=np.int64)
        return out

    @staticmethod
    def from_named_arrays(arrays: dict[str, np.ndarray]) -> "AdamState":
        state = AdamState()
        for name, arr in arrays.items():
            kind, key = name.split(".", 1)
            if kind == "m":
                state.m[key] = arr.astype(np.float64)
            elif kind == "v":
                state.v[key] = arr.astype(np.float64)
            elif kind == "t":
                state.t[key] = int(arr[0])
            else:
                raise InvalidInputError(f"unknown optimizer array {name}")
        return state


def adam_update(state: AdamState, key: str, param: np.ndarray,
                grad: np.ndarray, lr: float) -> None:
    """One in-place Adam step on a single named array."""
    if param.shape != grad.shape:
        raise InvalidInputError(
            f"{key}: parameter shape {param.shape} != grad {grad.shape}")
    if key not in state.m:
        state.m[key] = np.zeros_like(param)
        state.v[key] = np.zeros_like(param)
        state.t[key] = 0
    state.t[key] += 1
    t = state.t[key]
    m = state.m[key]
    v = state.v[key]
    m *= ADAM_BETA1
    m += (1.0 - ADAM_BETA1) * grad
    v *= ADAM_BETA2
    v += (1.0 - ADAM_BETA2) * grad * grad
    mh = m / (1.0 - ADAM_BETA1 ** t)
    vh = v / (1.0 - ADAM_BETA2 ** t)
    param -= lr * mh / (np.sqrt(vh) + ADAM_EPS)


def update_group(state: AdamState, group: str,
                 arrays: dict[str, np.ndarray],
                 grads: dict[str, np.ndarray],
                 lrs: dict[str, float],
                 frozen: tuple[str, ...] = ()) -> bool:
    """Adam-step every non-frozen array; False if skipped (non-finite)."""
    for key in sorted(arrays):
        g = grads[key]
        if not np.all(np.isfinite(g)):
            return False
    for key in sorted(arrays):
        if key in frozen:
            continue
        adam_update(state, f"{group}.{key}", arrays[key], grads[key],
                    lrs[key])
    return True


def remap_group_rows(state: AdamState, group: str, keep: np.ndarray,
                     n_added: int) -> None:
    """Track density-control row moves: survivors keep moments, new rows
    start from zero. Step counters are preserved."""
    prefix = f"{group}."
    for key in list(state.m):
        if not key.startswith(prefix):
            continue
        for table in (state.m, state.v):
            old = table[key]
            fresh = np.zeros((n_added,) + old.shape[1:], dtype=old.dtype)
            table[key] = np.concatenate([old[keep], fresh], axis=0)


@dataclass
class DensifyConfig:
    grad_threshold: float = 0.05
    split_scale: float = 0.8
    max_points: int = 40000


@dataclass
class GradAccum:
    """Mean positional-gradient statistics between density-control events."""

    total: np.ndarray
    count: np.ndarray

    @staticmethod
    def empty(n: int) -> "GradAccum":
        return GradAccum(np.zeros(n), np.zeros(n))

    def add(self, norms: np.ndarray, visible: np.ndarray) -> None:
        if norms.shape != self.total.shape:
            raise InvalidInputError("gradient statistics shape mismatch")
        self.total[visible] += norms[visible]
        self.count[visible] += 1.0

    def mean(self) -> np.ndarray:
        return self.total / np.maximum(self.count, 1.0)


def densify_and_prune(gs: GaussianSet, accum: GradAccum, cfg: DensifyConfig,
                      rng: np.random.Generator):
    """Clone small high-gradient Gaussians, split large ones, prune faint
    ones. Returns (new set, kept source rows, rows added) for moment remaps.
    """
    n = len(gs)
    mean_grad = accum.mean()
    over = mean_grad > cfg.grad_threshold
    scales_max = np.exp(gs.log_scales).max(axis=1)
    split_mask = over & (scales_max > cfg.split_scale)
    clone_mask = over & ~split_mask
    prune_mask = sigmoid(gs.opacity_logits) < PRUNE_OPACITY

    grow = int(clone_mask.sum() + 2 * split_mask.sum())
    if n + grow > cfg.max_points:
        split_mask[:] = False
        clone_mask[:] = False

    keep = np.flatnonzero(~prune_mask & ~split_mask)
    clone_idx = np.flatnonzero(clone_mask & ~prune_mask)
    split_idx = np.flatnonzero(split_mask & ~prune_mask)

    parts = [gs.take(keep)]
    if len(clone_idx):
        parts.append(gs.take(clone_idx))
    if len(split_idx):
        twice = np.repeat(split_idx, 2)
        children = gs.take(twice)
        rot = quat_to_rotmat(children.rotations)
        local = rng.standard_normal((len(twice), 3)) * np.exp(
            children.log_scales)
        children.positions += np.einsum("nij,nj->ni", rot, local)
        children.log_scales -= np.log(SPLIT_SHRINK)
        parts.append(children)

    out = GaussianSet.concatenate(parts) if len(parts) > 1 else parts[0]
    n_added = len(out) - len(keep)
    return out, keep, n_added
