"""LiDAR depth supervision: static-point fusion across frames, z-buffered
projection into a target camera, and dynamic-region invalidation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .rasterizer import CameraPose


@dataclass
class LidarFrame:
    """One sweep, already transformed to the world frame."""

    points: np.ndarray  # (N, 3)
    timestep: int
    colors: np.ndarray | None = None       # (N, 3) in [0, 1], optional
    is_dynamic: np.ndarray | None = None   # (N,) bool ground-truth label, optional

    def __post_init__(self) -> None:
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise InvalidInputError(
                f"lidar points: expected (N, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise InvalidInputError("lidar points must be finite")
        if self.colors is not None:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
            if self.colors.shape != self.points.shape:
                raise InvalidInputError("lidar colors shape mismatch")
        if self.is_dynamic is not None:
            self.is_dynamic = np.ascontiguousarray(self.is_dynamic, dtype=bool)
            if self.is_dynamic.shape != (len(self.points),):
                raise InvalidInputError("is_dynamic shape mismatch")


@dataclass
class DepthMap:
    depth: np.ndarray  # (H, W) meters; 0 where invalid
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self) -> None:
        if self.depth.shape != self.valid.shape:
            raise InvalidInputError("depth/valid shape mismatch")


def fuse_static(frames: list, is_static) -> np.ndarray:
    """Union of per-frame points passing the predicate; no deduplication.

    is_static(points (N, 3), timestep) -> (N,) bool mask.
    """
    if not frames:
        raise InvalidInputError("fuse_static needs at least one frame")
    kept = []
    for frame in frames:
        mask = np.asarray(is_static(frame.points, frame.timestep), dtype=bool)
        if mask.shape != (len(frame.points),):
            raise InvalidInputError("is_static returned a wrong-shaped mask")
        kept.append(frame.points[mask])
    return np.concatenate(kept, axis=0) if kept else np.zeros((0, 3))


def project_depth(points: np.ndarray, cam: CameraPose,
                  mask: np.ndarray | None = None) -> DepthMap:
    """Pinhole projection with nearest-z-wins per pixel; masked pixels
    (mask = 1, dynamic) are invalidated."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    h, w = cam.height, cam.width
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (h, w):
            raise InvalidInputError(
                f"dynamic mask: expected {(h, w)}, got {mask.shape}")

    depth = np.full((h, w), np.inf)
    if len(points):
        xcam = points @ cam.R.T + cam.t
        z = xcam[:, 2]
        keep = (z > cam.near) & (z < cam.far)
        xcam = xcam[keep]
        z = z[keep]
        col = np.floor(cam.fx * xcam[:, 0] / z + cam.cx).astype(np.int64)
        row = np.floor(cam.fy * xcam[:, 1] / z + cam.cy).astype(np.int64)
        inside = (col >= 0) & (col < w) & (row >= 0) & (row < h)
        np.minimum.at(depth, (row[inside], col[inside]), z[inside])

    valid = np.isfinite(depth)
    if mask is not None:
        valid &= (mask == 0)
    depth = np.where(valid, depth, 0.0)
    return DepthMap(depth, valid)


def depth_residual(rendered: np.ndarray, target: DepthMap) -> np.ndarray:
    """rendered - target over the target's valid pixels, flattened."""
    rendered = np.asarray(rendered)
    if rendered.shape != target.depth.shape:
        raise InvalidInputError(
            f"rendered depth {rendered.shape} vs target {target.depth.shape}")
    return (rendered - target.depth)[target.valid]
