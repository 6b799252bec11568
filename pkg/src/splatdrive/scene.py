"""Decomposed driving-scene model: ground, static background, rigid objects.

The ground keeps a frozen Gaussian count and frozen positions for the whole
training run; dynamic objects carry their Gaussians in a local frame plus a
per-timestep rigid pose. assemble_frame flattens everything into one
world-frame GaussianSet for the rasterizer, with provenance bookkeeping so
gradients route back to the owning component.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    InvalidInputError,
    MissingPoseError,
    SegmentationFailedError,
)
from .gauss import (
    Gaussian3D,
    inverse_sigmoid,
    quat_left_matrix,
    quat_multiply,
    quat_normalize,
    rot_quat,
    rotmat_to_quat,
    normalize_dir_backward,
)
from .gset import GaussianGrads, GaussianSet
from .lidar_depth import LidarFrame
from .se3 import RigidPose

GROUND, BACKGROUND, OBJECT = 0, 1, 2


@dataclass
class ObjectTrack:
    """Ground-truth track: box extents and local-to-world pose per timestep."""

    id: str
    dims: np.ndarray  # (3,) full extents (x, y, z) in the local frame
    poses: dict  # timestep -> RigidPose

    def __post_init__(self) -> None:
        self.dims = np.ascontiguousarray(self.dims, dtype=np.float64)
        if self.dims.shape != (3,) or not np.all(self.dims > 0):
            raise InvalidInputError(f"track {self.id}: bad box dims {self.dims}")

    def pose_at(self, t: int) -> RigidPose:
        if t not in self.poses:
            raise MissingPoseError(f"track {self.id} has no pose at timestep {t}")
        return self.poses[t]

    def contains(self, points: np.ndarray, t: int, margin: float = 0.0) -> np.ndarray:
        """Box-membership mask for world-frame points at timestep t."""
        local = self.pose_at(t).inverse().transform(points)
        half = self.dims / 2.0 + margin
        return np.all(np.abs(local) <= half, axis=1)


def dynamic_mask_for_frame(tracks: list, points: np.ndarray, t: int,
                           margin: float = 0.0) -> np.ndarray:
    """1 where a point falls inside any track's box at timestep t."""
    mask = np.zeros(len(points), dtype=bool)
    for track in tracks:
        if t in track.poses:
            mask |= track.contains(points, t, margin)
    return mask


@dataclass
class ObjectModel:
    id: str
    gaussians: GaussianSet  # local object frame
    poses: dict  # timestep -> RigidPose

    def pose_at(self, t: int) -> RigidPose:
        if t not in self.poses:
            raise MissingPoseError(f"object {self.id} has no pose at timestep {t}")
        return self.poses[t]


@dataclass
class Trajectory:
    timesteps: list
    poses: list  # RigidPose per timestep (ego/camera pose, camera-to-world)
    tag: str = "original"

    def __post_init__(self) -> None:
        if len(self.timesteps) < 1:
            raise InvalidInputError("trajectory needs at least one pose")
        if len(self.timesteps) != len(self.poses):
            raise InvalidInputError("trajectory timesteps/poses length mismatch")
        steps = list(self.timesteps)
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise InvalidInputError("trajectory timesteps must strictly increase")
        if self.tag not in ("original", "novel"):
            raise InvalidInputError(f"unknown trajectory tag {self.tag!r}")

    def pose_at(self, t: int) -> RigidPose:
        try:
            return self.poses[self.timesteps.index(t)]
        except ValueError:
            raise MissingPoseError(f"trajectory has no pose at timestep {t}") from None

    def __len__(self) -> int:
        return len(self.timesteps)


@dataclass
class SceneModel:
    ground: GaussianSet
    background: GaussianSet
    objects: list  # of ObjectModel
    world_bounds: np.ndarray  # (2, 3) min/max corners

    def component_sizes(self) -> tuple:
        return (len(self.ground), len(self.background),
                tuple(len(o.gaussians) for o in self.objects))

    def total_gaussians(self) -> int:
        return (len(self.ground) + len(self.background)
                + sum(len(o.gaussians) for o in self.objects))


@dataclass
class SceneInitConfig:
    extra_random_points: int = 20000
    knn_neighbors: int = 3
    init_opacity: float = 0.1
    sh_degree: int = 3
    tau_ground: float = 0.15
    ransac_iterations: int = 1000
    min_inlier_fraction: float = 0.2
    voxel_size: float = 0.0  # 0 disables downsampling
    bounds_pad: float = 2.0
    box_margin: float = 0.15
    seed: int = 0


def fit_plane_lsq(points: np.ndarray) -> tuple:
    """Least-squares plane through points: (unit normal, offset d) with
    n.p + d = 0."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    if s[1] < 1e-12:
        raise SegmentationFailedError("points are collinear; no unique plane")
    return normal, -normal @ centroid


def segment_ground_mask(points: np.ndarray, tau_g: float = 0.15,
                        iterations: int = 1000,
                        min_inlier_fraction: float = 0.2,
                        seed: int = 0) -> tuple:
    """RANSAC plane fit with a least-squares refit; returns (mask, plane).

    plane is (normal, d) with normal.p + d = 0 for points on the plane.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = len(points)
    if n < 50:
        raise InvalidInputError(f"ground segmentation needs >= 50 points, got {n}")
    rng = np.random.default_rng(seed)

    best_count = -1
    best_plane = None
    batch = 64
    done = 0
    while done < iterations:
        m = min(batch, iterations - done)
        done += m
        tri = rng.integers(0, n, size=(m, 3))
        p0 = points[tri[:, 0]]
        normals = np.cross(points[tri[:, 1]] - p0, points[tri[:, 2]] - p0)
        norms = np.linalg.norm(normals, axis=1)
        ok = norms > 1e-12
        if not ok.any():
            continue
        normals = normals[ok] / norms[ok][:, None]
        d = -np.einsum("ij,ij->i", normals, p0[ok])
        dist = np.abs(points @ normals.T + d[None, :])
        counts = (dist <= tau_g).sum(axis=0)
        i = int(np.argmax(counts))
        if counts[i] > best_count:
            best_count = int(counts[i])
            best_plane = (normals[i].copy(), float(d[i]))

    if best_plane is None or best_count < min_inlier_fraction * n:
        raise SegmentationFailedError(
            f"no plane with >= {min_inlier_fraction:.0%} inliers "
            f"(best {max(best_count, 0)}/{n})")

    normal, d = best_plane
    mask = np.abs(points @ normal + d) <= tau_g
    # refit on inliers and re-threshold once for a stabler boundary
    normal, d = fit_plane_lsq(points[mask])
    mask = np.abs(points @ normal + d) <= tau_g
    if mask.sum() < min_inlier_fraction * n:
        raise SegmentationFailedError("plane refit lost the inlier majority")
    return mask, (normal, d)


def segment_ground(points: np.ndarray, tau_g: float = 0.15,
                   iterations: int = 1000, min_inlier_fraction: float = 0.2,
                   seed: int = 0) -> tuple:
    """Partition a point cloud into (ground_points, nonground_points)."""
    mask, _ = segment_ground_mask(points, tau_g, iterations,
                                  min_inlier_fraction, seed)
    return points[mask], points[~mask]


def voxel_downsample(points: np.ndarray, colors: np.ndarray,
                     voxel: float) -> tuple:
    """Keep the first point (by input order) of every occupied voxel."""
    if voxel <= 0 or len(points) == 0:
        return points, colors
    ids = np.floor(points / voxel).astype(np.int64)
    # lexsort is stable: within a voxel the lowest original index survives
    order = np.lexsort((np.arange(len(points)), ids[:, 2], ids[:, 1], ids[:, 0]))
    sorted_ids = ids[order]
    first = np.ones(len(points), dtype=bool)
    first[1:] = np.any(sorted_ids[1:] != sorted_ids[:-1], axis=1)
    keep = np.sort(order[first])
    return points[keep], colors[keep]


def knn_log_scales(points: np.ndarray, k: int = 3) -> np.ndarray:
    """Isotropic log-scales from mean k-nearest-neighbor distance."""
    n = len(points)
    if n == 0:
        return np.zeros((0, 3))
    if n == 1:
        return np.log(np.full((1, 3), 0.1))
    kq = min(k + 1, n)
    dist, _ = cKDTree(points).query(points, k=kq, workers=1)
    mean_d = dist[:, 1:].mean(axis=1)
    mean_d = np.clip(mean_d, 1e-4, None)
    return np.log(np.tile(mean_d[:, None], (1, 3)))


def gaussians_from_points(points: np.ndarray, colors: np.ndarray,
                          cfg: SceneInitConfig) -> GaussianSet:
    """Point cloud -> Gaussians: identity rotations, kNN scales, flat SH."""
    n = len(points)
    k = (cfg.sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    from .gauss import SH_C0

    sh[:, 0, :] = (np.clip(colors, 0.0, 1.0) - 0.5) / SH_C0
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianSet(
        positions=points.copy(),
        rotations=rot,
        log_scales=knn_log_scales(points, cfg.knn_neighbors),
        opacity_logits=np.full(n, inverse_sigmoid(cfg.init_opacity)),
        sh_coeffs=sh,
    )


def init_scene(lidar_frames: list, object_tracks: list,
               cfg: SceneInitConfig | None = None) -> SceneModel:
    """Build the decomposed scene from posed LiDAR sweeps and object tracks.

    Every input point lands in exactly one of: ground, background, or an
    object's local cloud (dynamic points outside every box at their own
    timestep are impossible by construction of the split).
    """
    cfg = cfg or SceneInitConfig()
    if not lidar_frames:
        raise InvalidInputError("scene initialization needs at least one LiDAR frame")

    static_pts, static_cols = [], []
    object_pts = {tr.id: [] for tr in object_tracks}
    object_cols = {tr.id: [] for tr in object_tracks}

    for frame in lidar_frames:
        pts = frame.points
        cols = frame.colors if frame.colors is not None \
            else np.full((len(pts), 3), 0.5)
        claimed = np.zeros(len(pts), dtype=bool)
        for tr in object_tracks:
            if frame.timestep not in tr.poses:
                continue
            inside = tr.contains(pts, frame.timestep, cfg.box_margin) & ~claimed
            if inside.any():
                local = tr.pose_at(frame.timestep).inverse().transform(pts[inside])
                object_pts[tr.id].append(local)
                object_cols[tr.id].append(cols[inside])
                claimed |= inside
        static_pts.append(pts[~claimed])
        static_cols.append(cols[~claimed])

    static = np.concatenate(static_pts, axis=0)
    colors = np.concatenate(static_cols, axis=0)
    if len(static) == 0:
        raise SegmentationFailedError("no static points to segment")
    static, colors = voxel_downsample(static, colors, cfg.voxel_size)

    mask, _ = segment_ground_mask(
        static, cfg.tau_ground, cfg.ransac_iterations,
        cfg.min_inlier_fraction, cfg.seed)

    lo = static.min(axis=0) - cfg.bounds_pad
    hi = static.max(axis=0) + cfg.bounds_pad
    world_bounds = np.stack([lo, hi])

    ground = gaussians_from_points(static[mask], colors[mask], cfg)

    bg_points = static[~mask]
    bg_colors = colors[~mask]
    if cfg.extra_random_points > 0:
        rng = np.random.default_rng(cfg.seed + 1)
        extra = rng.uniform(lo, hi, (cfg.extra_random_points, 3))
        bg_points = np.concatenate([bg_points, extra])
        bg_colors = np.concatenate(
            [bg_colors, np.full((cfg.extra_random_points, 3), 0.5)])
    background = gaussians_from_points(bg_points, bg_colors, cfg)

    objects = []
    for tr in object_tracks:
        if object_pts[tr.id]:
            pts = np.concatenate(object_pts[tr.id])
            cols = np.concatenate(object_cols[tr.id])
            pts, cols = voxel_downsample(pts, cols, cfg.voxel_size)
        else:
            pts = np.zeros((0, 3))
            cols = np.zeros((0, 3))
        objects.append(ObjectModel(tr.id, gaussians_from_points(pts, cols, cfg),
                                   dict(tr.poses)))
    return SceneModel(ground, background, objects, world_bounds)


def object_to_world(g: Gaussian3D, R_t: np.ndarray, T_t: np.ndarray) -> Gaussian3D:
    """Rigid transform of one Gaussian: position affinely, orientation by
    quaternion composition; scales, opacity, SH unchanged."""
    R_t = np.asarray(R_t, dtype=np.float64)
    T_t = np.asarray(T_t, dtype=np.float64)
    return Gaussian3D(
        position=R_t @ g.position + T_t,
        rotation=rot_quat(R_t, g.rotation),
        log_scale=g.log_scale.copy(),
        opacity_logit=float(g.opacity_logit),
        sh_coeffs=g.sh_coeffs.copy(),
    )


def transform_set(gs: GaussianSet, pose: RigidPose) -> GaussianSet:
    """Batched object_to_world over a whole GaussianSet."""
    q_pose = rotmat_to_quat(pose.R)
    return GaussianSet(
        positions=gs.positions @ pose.R.T + pose.t,
        rotations=quat_normalize(quat_multiply(q_pose, gs.rotations)),
        log_scales=gs.log_scales.copy(),
        opacity_logits=gs.opacity_logits.copy(),
        sh_coeffs=gs.sh_coeffs.copy(),
    )


def transform_set_backward(gs: GaussianSet, pose: RigidPose,
                           grads_world: GaussianGrads) -> GaussianGrads:
    """Pull world-frame gradients back into the object's local frame."""
    q_pose = rotmat_to_quat(pose.R)
    raw = quat_multiply(q_pose, gs.rotations)
    g_raw = normalize_dir_backward(raw, grads_world.rotations)
    # raw = L(q_pose) @ q_local is linear in q_local
    g_rot = g_raw @ quat_left_matrix(q_pose)
    return GaussianGrads(
        positions=grads_world.positions @ pose.R,
        rotations=g_rot,
        log_scales=grads_world.log_scales.copy(),
        opacity_logits=grads_world.opacity_logits.copy(),
        sh_coeffs=grads_world.sh_coeffs.copy(),
        mean2d_norm=None if grads_world.mean2d_norm is None
        else grads_world.mean2d_norm.copy(),
        visible=None if grads_world.visible is None else grads_world.visible.copy(),
    )


@dataclass
class FrameAssembly:
    """Flat world-frame Gaussians plus provenance for gradient routing."""

    gaussians: GaussianSet
    component: np.ndarray     # (N,) int8: GROUND / BACKGROUND / OBJECT
    object_index: np.ndarray  # (N,) int32, -1 outside objects
    source_row: np.ndarray    # (N,) row in the owning component's set
    timestep: int

    def rows_of(self, component: int, object_index: int = -1) -> np.ndarray:
        sel = self.component == component
        if component == OBJECT:
            sel &= self.object_index == object_index
        return np.flatnonzero(sel)


def assemble_frame(scene: SceneModel, t: int) -> FrameAssembly:
    """Concatenate ground, background, and posed objects, in that order."""
    parts = [scene.ground, scene.background]
    comp = [np.full(len(scene.ground), GROUND, np.int8),
            np.full(len(scene.background), BACKGROUND, np.int8)]
    obj_idx = [np.full(len(scene.ground), -1, np.int32),
               np.full(len(scene.background), -1, np.int32)]
    src = [np.arange(len(scene.ground), dtype=np.int64),
           np.arange(len(scene.background), dtype=np.int64)]
    for i, obj in enumerate(scene.objects):
        world = transform_set(obj.gaussians, obj.pose_at(t))
        parts.append(world)
        comp.append(np.full(len(world), OBJECT, np.int8))
        obj_idx.append(np.full(len(world), i, np.int32))
        src.append(np.arange(len(world), dtype=np.int64))
    return FrameAssembly(
        GaussianSet.concatenate(parts),
        np.concatenate(comp), np.concatenate(obj_idx), np.concatenate(src), t,
    )


@dataclass
class SceneGrads:
    """Per-component gradients matching a SceneModel's layout."""

    ground: GaussianGrads
    background: GaussianGrads
    objects: list


def split_frame_grads(scene: SceneModel, assembly: FrameAssembly,
                      flat: GaussianGrads) -> SceneGrads:
    """Route flat per-Gaussian gradients back to their owning components,
    pulling object gradients through the frame's rigid pose."""
    n_g = len(scene.ground)
    n_b = len(scene.background)

    def slice_grads(rows) -> GaussianGrads:
        return GaussianGrads(
            flat.positions[rows], flat.rotations[rows], flat.log_scales[rows],
            flat.opacity_logits[rows], flat.sh_coeffs[rows],
            None if flat.mean2d_norm is None else flat.mean2d_norm[rows],
            None if flat.visible is None else flat.visible[rows],
        )

    ground = slice_grads(slice(0, n_g))
    background = slice_grads(slice(n_g, n_g + n_b))
    objects = []
    start = n_g + n_b
    for obj in scene.objects:
        n_o = len(obj.gaussians)
        world = slice_grads(slice(start, start + n_o))
        start += n_o
        objects.append(
            transform_set_backward(obj.gaussians, obj.pose_at(assembly.timestep),
                                   world))
    return SceneGrads(ground, background, objects)
