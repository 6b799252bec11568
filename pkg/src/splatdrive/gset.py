"""Structure-of-arrays batch of Gaussian primitives.

The flat world-frame list handed to the rasterizer, and the per-component
storage inside the scene model, are both GaussianSets. float64 master copy;
compute paths cast on entry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .gauss import Gaussian3D, quat_normalize, sh_degree_for_count


@dataclass
class GaussianSet:
    positions: np.ndarray      # (N, 3)
    rotations: np.ndarray      # (N, 4) unit quaternions
    log_scales: np.ndarray     # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    sh_coeffs: np.ndarray      # (N, K, 3)

    def __post_init__(self) -> None:
        n = len(self.positions)
        shapes = {
            "positions": (n, 3),
            "rotations": (n, 4),
            "log_scales": (n, 3),
            "opacity_logits": (n,),
        }
        for name, want in shapes.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != want:
                raise InvalidInputError(f"{name}: expected {want}, got {arr.shape}")
            setattr(self, name, arr)
        self.sh_coeffs = np.ascontiguousarray(self.sh_coeffs, dtype=np.float64)
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[0] != n or self.sh_coeffs.shape[2] != 3:
            raise InvalidInputError(f"sh_coeffs: expected (N, K, 3), got {self.sh_coeffs.shape}")
        sh_degree_for_count(self.sh_coeffs.shape[1])

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def sh_degree(self) -> int:
        return sh_degree_for_count(self.sh_coeffs.shape[1])

    @classmethod
    def empty(cls, sh_degree: int = 3) -> "GaussianSet":
        k = (sh_degree + 1) ** 2
        return cls(
            np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
            np.zeros((0,)), np.zeros((0, k, 3)),
        )

    @classmethod
    def from_gaussians(cls, gaussians: list[Gaussian3D]) -> "GaussianSet":
        if not gaussians:
            return cls.empty()
        return cls(
            np.stack([g.position for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.sh_coeffs for g in gaussians]),
        )

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            self.positions[i], self.rotations[i], self.log_scales[i],
            self.opacity_logits[i], self.sh_coeffs[i],
        )

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            self.positions.copy(), self.rotations.copy(), self.log_scales.copy(),
            self.opacity_logits.copy(), self.sh_coeffs.copy(),
        )

    def take(self, idx) -> "GaussianSet":
        return GaussianSet(
            self.positions[idx], self.rotations[idx], self.log_scales[idx],
            self.opacity_logits[idx], self.sh_coeffs[idx],
        )

    def normalize_rotations(self) -> None:
        self.rotations = quat_normalize(self.rotations)

    @staticmethod
    def concatenate(sets: list["GaussianSet"]) -> "GaussianSet":
        sets = [s for s in sets]
        if not sets:
            return GaussianSet.empty()
        return GaussianSet(
            np.concatenate([s.positions for s in sets]),
            np.concatenate([s.rotations for s in sets]),
            np.concatenate([s.log_scales for s in sets]),
            np.concatenate([s.opacity_logits for s in sets]),
            np.concatenate([s.sh_coeffs for s in sets]),
        )


@dataclass
class GaussianGrads:
    """Per-Gaussian parameter gradients, aligned with a GaussianSet."""

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    # screen-space positional gradient norms + visibility, for density control
    mean2d_norm: np.ndarray | None = None
    visible: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, gs: GaussianSet, dtype=np.float64) -> "GaussianGrads":
        n, k = len(gs), gs.sh_coeffs.shape[1]
        return cls(
            np.zeros((n, 3), dtype), np.zeros((n, 4), dtype), np.zeros((n, 3), dtype),
            np.zeros((n,), dtype), np.zeros((n, k, 3), dtype),
            np.zeros((n,), dtype), np.zeros((n,), dtype=bool),
        )

    def add(self, other: "GaussianGrads") -> None:
        self.positions += other.positions
        self.rotations += other.rotations
        self.log_scales += other.log_scales
        self.opacity_logits += other.opacity_logits
        self.sh_coeffs += other.sh_coeffs
