"""Quantitative evaluation: PSNR, SSIM, and geometric stand-ins for the
novel-trajectory agent and lane scores.

Learned detectors are out of scope at this scale; agent boxes come from
projecting fitted 3D boxes (ground truth on one side, boxes fitted to the
trained object Gaussians on the other) and lane masks come from projecting
the known lane polygons versus color-thresholding the render.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .gauss import sigmoid
from .gset import GaussianSet
from .losses import ssim  # noqa: F401  (re-exported as the metric)
from .rasterizer import CameraPose
from .se3 import RigidPose

PSNR_CAP = 100.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] images; capped at 100."""
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 10.0 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return -10.0 * math.log10(mse)


@dataclass
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidInputError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2.0,
                         (self.y_min + self.y_max) / 2.0])


def box_iou(a: Box2D, b: Box2D) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def nta_iou(candidate_boxes: list[Box2D], gt_boxes: list[Box2D]):
    """Mean IoU of each GT box against its nearest candidate (by center).

    Returns (score, matched_flag); unmatched GT boxes score 0, and the
    flag is False when either side is empty.
    """
    if not gt_boxes or not candidate_boxes:
        return 0.0, False
    total = 0.0
    for gt in gt_boxes:
        dists = [np.linalg.norm(gt.center - c.center) for c in candidate_boxes]
        total += box_iou(gt, candidate_boxes[int(np.argmin(dists))])
    return total / len(gt_boxes), True


def project_box_corners(pose: RigidPose, dims: np.ndarray,
                        cam: CameraPose) -> Box2D | None:
    """2D bounding box of a 3D oriented box's projected corners.

    None when every corner is behind the near plane or the projection
    collapses outside the image entirely.
    """
    half = np.asarray(dims, float) / 2.0
    signs = np.array([[sx, sy, sz] for sx in (-1, 1)
                      for sy in (-1, 1) for sz in (-1, 1)], float)
    world = pose.transform(signs * half)
    cam_pts = world @ cam.R.T + cam.t
    front = cam_pts[:, 2] > cam.near
    if not front.any():
        return None
    pts = cam_pts[front]
    us = cam.fx * pts[:, 0] / pts[:, 2] + cam.cx
    vs = cam.fy * pts[:, 1] / pts[:, 2] + cam.cy
    x0 = max(float(us.min()), 0.0)
    x1 = min(float(us.max()), float(cam.width))
    y0 = max(float(vs.min()), 0.0)
    y1 = min(float(vs.max()), float(cam.height))
    if x0 >= x1 or y0 >= y1:
        return None
    return Box2D(x0, y0, x1, y1)


def fit_object_box(gaussians: GaussianSet, min_opacity: float = 0.5):
    """Axis-aligned box, in the object's local frame, around the Gaussians
    carrying at least `min_opacity`. Falls back to all points when none
    qualify. Returns (center (3,), dims (3,)) or None for an empty set."""
    if len(gaussians) == 0:
        return None
    w = sigmoid(gaussians.opacity_logits)
    sel = w >= min_opacity
    pts = gaussians.positions[sel] if sel.any() else gaussians.positions
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    dims = np.maximum(hi - lo, 1e-3)
    return (lo + hi) / 2.0, dims


def _pixel_ground_points(cam: CameraPose):
    """Ground-plane (z=0) intersection of each pixel ray; (H, W, 2) xy and
    a validity mask for rays that actually reach the plane in front."""
    h, w = cam.height, cam.width
    us = (np.arange(w) + 0.5 - cam.cx) / cam.fx
    vs = (np.arange(h) + 0.5 - cam.cy) / cam.fy
    uu, vv = np.meshgrid(us, vs)
    dirs_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    dirs = dirs_cam @ cam.R  # world directions, row-wise R^T d
    origin = cam.camera_center
    dz = dirs[..., 2]
    safe = np.where(np.abs(dz) < 1e-15, -1e-15, dz)
    t = -origin[2] / safe
    valid = (t > cam.near) & (t < cam.far) & (dz < 0)
    xy = origin[:2] + t[..., None] * dirs[..., :2]
    return xy, valid


def raster_lanes_gt(lane_polygons, cam: CameraPose) -> np.ndarray:
    """Project lane polygons onto the image: exact per-pixel membership of
    the pixel ray's ground intersection."""
    xy, valid = _pixel_ground_points(cam)
    flat = xy.reshape(-1, 2)
    mask = np.zeros(len(flat), bool)
    for entry in lane_polygons:
        poly = entry[1] if isinstance(entry, tuple) else entry
        inside = np.ones(len(flat), bool)
        n = len(poly)
        for i in range(n):
            v0, v1 = poly[i], poly[(i + 1) % n]
            cross = ((v1[0] - v0[0]) * (flat[:, 1] - v0[1])
                     - (v1[1] - v0[1]) * (flat[:, 0] - v0[0]))
            inside &= cross >= 0.0
        mask |= inside
    return (mask.reshape(cam.height, cam.width)) & valid


def lane_mask_from_render(image: np.ndarray, marking_color: np.ndarray,
                          threshold: float = 0.15) -> np.ndarray:
    """Detector stand-in: pixels within `threshold` (euclidean RGB) of the
    shaded marking color."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"expected (H, W, 3) image, got {image.shape}")
    d = np.linalg.norm(image - np.asarray(marking_color), axis=2)
    return d < threshold


def ntl_iou(rendered_lanes: np.ndarray, gt_lanes: np.ndarray) -> float:
    """Mean IoU over the two classes {lane, background}."""
    if rendered_lanes.shape != gt_lanes.shape:
        raise InvalidInputError(
            f"mask shapes differ: {rendered_lanes.shape} vs {gt_lanes.shape}")
    a = rendered_lanes.astype(bool)
    b = gt_lanes.astype(bool)
    scores = []
    for cls_a, cls_b in ((a, b), (~a, ~b)):
        union = (cls_a | cls_b).sum()
        if union == 0:
            scores.append(1.0)  # class absent from both: perfect agreement
        else:
            scores.append((cls_a & cls_b).sum() / union)
    return float(np.mean(scores))
