"""Procedural driving scene with analytic ground truth.

A toy world made of one textured ground plane (asphalt, shoulder, painted
lane markings), a few static building boxes, and moving vehicle boxes on
waypoint paths. Everything is an analytic primitive, so the module can
raytrace exact reference images and depth maps, simulate labeled LiDAR
sweeps, and export the lot as an on-disk dataset.

The raytracer here is the independent oracle for the splat renderer: it
shares no projection or compositing code with the rasterizer module.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DatasetError, InvalidInputError
from .imgio import read_ppm, write_ppm
from .lidar_depth import DepthMap, LidarFrame
from .ply import read_ply, write_ply
from .rasterizer import CameraPose
from .scene import ObjectTrack
from .se3 import RigidPose, rotation_about_z

ASPHALT = np.array([0.23, 0.23, 0.24])
SHOULDER = np.array([0.33, 0.37, 0.30])
MARKING = np.array([0.92, 0.91, 0.85])
SKY = np.array([0.62, 0.74, 0.92])
SUN_DIR = np.array([0.35, 0.25, 0.88]) / np.linalg.norm([0.35, 0.25, 0.88])
AMBIENT = 0.35


def shade(albedo: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Flat lambertian shading; albedo (...,3), normal (...,3)."""
    lam = np.maximum(normal @ SUN_DIR, 0.0)
    return albedo * (AMBIENT + (1.0 - AMBIENT) * lam)[..., None]


@dataclass
class BuildingSpec:
    center_x: float
    center_y: float
    dims: tuple[float, float, float]
    albedo: tuple[float, float, float]


@dataclass
class VehicleSpec:
    vid: str
    dims: tuple[float, float, float]
    # rows (frame_time, x, y); piecewise-linear path, yaw from travel direction
    waypoints: list[tuple[float, float, float]]
    albedo: tuple[float, float, float]


@dataclass
class LidarSpec:
    channels: int = 12
    elev_min_deg: float = -14.0
    elev_max_deg: float = 1.5
    azimuth_step_deg: float = 0.8
    max_range: float = 50.0
    height: float = 1.9


@dataclass
class CameraRig:
    width: int = 96
    height: int = 64
    fx: float = 78.0
    fy: float = 78.0
    cx: float = 48.0
    cy: float = 32.0
    cam_height: float = 1.8
    pitch: float = 0.10
    near: float = 0.1
    far: float = 120.0


@dataclass
class SynthSceneSpec:
    road_length: float = 80.0
    road_width: float = 7.0
    ground_half_width: float = 16.0
    dash_length: float = 3.0
    dash_gap: float = 3.0
    marking_width: float = 0.15
    edge_lines: bool = True
    arrow_x: float = 10.0
    arrow_y: float = -1.75
    buildings: list[BuildingSpec] = field(default_factory=list)
    vehicles: list[VehicleSpec] = field(default_factory=list)
    rig: CameraRig = field(default_factory=CameraRig)
    lidar: LidarSpec = field(default_factory=LidarSpec)
    frame_count: int = 40
    ego_start_x: float = 4.0
    ego_speed: float = 1.5
    ego_lane_y: float = -1.75
    seed: int = 0

    def __post_init__(self):
        if self.frame_count < 2:
            raise ConfigError("frame_count must be >= 2")
        if self.road_length <= 0 or self.road_width <= 0:
            raise ConfigError("road dimensions must be positive")
        if self.ground_half_width < self.road_width / 2:
            raise ConfigError("ground narrower than the road")
        for v in self.vehicles:
            for _, x, y in v.waypoints:
                if not (0.0 <= x <= self.road_length
                        and abs(y) <= self.ground_half_width):
                    raise ConfigError(
                        f"vehicle {v.vid} waypoint ({x}, {y}) outside world")

    @staticmethod
    def default() -> "SynthSceneSpec":
        """The acceptance scene: 80 m road, 2 lanes, 3 buildings, 2 cars."""
        buildings = [
            BuildingSpec(20.0, 10.5, (10.0, 6.0, 7.0), (0.62, 0.52, 0.44)),
            BuildingSpec(42.0, -10.0, (12.0, 6.0, 9.0), (0.50, 0.55, 0.62)),
            BuildingSpec(60.0, 11.0, (9.0, 7.0, 6.0), (0.66, 0.60, 0.50)),
        ]
        vehicles = [
            # same-direction car ahead in the right lane
            VehicleSpec("lead", (4.2, 1.9, 1.6),
                        [(0.0, 18.0, -1.75), (39.0, 72.0, -1.75)],
                        (0.75, 0.20, 0.18)),
            # oncoming car in the left lane
            VehicleSpec("oncoming", (4.2, 1.9, 1.6),
                        [(0.0, 72.0, 1.75), (39.0, 14.0, 1.75)],
                        (0.18, 0.32, 0.70)),
        ]
        return SynthSceneSpec(buildings=buildings, vehicles=vehicles)


def _spec_to_dict(spec: SynthSceneSpec) -> dict:
    d = {
        k: getattr(spec, k)
        for k in ("road_length", "road_width", "ground_half_width",
                  "dash_length", "dash_gap", "marking_width", "edge_lines",
                  "arrow_x", "arrow_y", "frame_count", "ego_start_x",
                  "ego_speed", "ego_lane_y", "seed")
    }
    d["rig"] = vars(spec.rig).copy()
    d["lidar"] = vars(spec.lidar).copy()
    d["buildings"] = [
        {"center_x": b.center_x, "center_y": b.center_y,
         "dims": list(b.dims), "albedo": list(b.albedo)}
        for b in spec.buildings
    ]
    d["vehicles"] = [
        {"vid": v.vid, "dims": list(v.dims),
         "waypoints": [list(w) for w in v.waypoints],
         "albedo": list(v.albedo)}
        for v in spec.vehicles
    ]
    return d


def _spec_from_dict(d: dict) -> SynthSceneSpec:
    kw = {k: v for k, v in d.items()
          if k not in ("rig", "lidar", "buildings", "vehicles")}
    kw["rig"] = CameraRig(**d["rig"])
    kw["lidar"] = LidarSpec(**d["lidar"])
    kw["buildings"] = [
        BuildingSpec(b["center_x"], b["center_y"],
                     tuple(b["dims"]), tuple(b["albedo"]))
        for b in d["buildings"]
    ]
    kw["vehicles"] = [
        VehicleSpec(v["vid"], tuple(v["dims"]),
                    [tuple(w) for w in v["waypoints"]], tuple(v["albedo"]))
        for v in d["vehicles"]
    ]
    return SynthSceneSpec(**kw)


@dataclass
class SynthScene:
    """Generated analytic world, ready to raytrace at any timestep."""

    spec: SynthSceneSpec
    # convex CCW polygons on z=0, painted in MARKING color
    markings: list[tuple[str, np.ndarray]]
    buildings: list[tuple[RigidPose, np.ndarray, np.ndarray]]
    vehicles: list[tuple[str, np.ndarray, dict[int, RigidPose], np.ndarray]]
    cam_poses: list[CameraPose]
    lidar_poses: list[RigidPose]
    azimuth_phase: np.ndarray

    def vehicle_tracks(self) -> list[ObjectTrack]:
        return [ObjectTrack(vid, dims.copy(), dict(poses))
                for vid, dims, poses, _ in self.vehicles]


def _rect(x0, x1, y0, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def _build_markings(spec: SynthSceneSpec) -> list[tuple[str, np.ndarray]]:
    w = spec.marking_width
    out: list[tuple[str, np.ndarray]] = []
    x = 0.0
    k = 0
    while x < spec.road_length:
        x1 = min(x + spec.dash_length, spec.road_length)
        out.append((f"center_dash_{k}", _rect(x, x1, -w / 2, w / 2)))
        x = x1 + spec.dash_gap
        k += 1
    if spec.edge_lines:
        ye = spec.road_width / 2 - 0.15
        out.append(("edge_left", _rect(0.0, spec.road_length, ye, ye + w)))
        out.append(("edge_right", _rect(0.0, spec.road_length, -ye - w, -ye)))
    ax, ay = spec.arrow_x, spec.arrow_y
    out.append(("arrow_stem", _rect(ax, ax + 2.0, ay - 0.12, ay + 0.12)))
    out.append(("arrow_branch", _rect(ax + 1.6, ax + 2.0, ay, ay + 0.5)))
    out.append(("arrow_head", np.array([
        [ax + 1.5, ay + 0.5], [ax + 2.1, ay + 0.5], [ax + 1.8, ay + 1.0]])))
    return out


def _camera_rotation(pitch: float) -> np.ndarray:
    # base: forward +x, right -y, down -z (world z-up), then pitch down
    base = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    c, s = math.cos(pitch), math.sin(pitch)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    return rx @ base


def _interp_vehicle_poses(v: VehicleSpec, frame_count: int) -> dict[int, RigidPose]:
    wp = np.asarray(v.waypoints, float)
    if len(wp) < 1:
        raise ConfigError(f"vehicle {v.vid}: no waypoints")
    order = np.argsort(wp[:, 0])
    wp = wp[order]
    times = np.arange(frame_count, dtype=float)
    xs = np.interp(times, wp[:, 0], wp[:, 1])
    ys = np.interp(times, wp[:, 0], wp[:, 2])
    poses: dict[int, RigidPose] = {}
    for t in range(frame_count):
        t2 = min(t + 1, frame_count - 1)
        t1 = t2 - 1
        dx, dy = xs[t2] - xs[t1], ys[t2] - ys[t1]
        yaw = math.atan2(dy, dx) if (dx * dx + dy * dy) > 1e-18 else 0.0
        pos = np.array([xs[t], ys[t], v.dims[2] / 2.0])
        poses[t] = RigidPose(rotation_about_z(yaw), pos)
    return poses


def generate(spec: SynthSceneSpec) -> SynthScene:
    """Build the analytic world; deterministic under spec.seed."""
    markings = _build_markings(spec)
    buildings = []
    for b in spec.buildings:
        pose = RigidPose(np.eye(3),
                         np.array([b.center_x, b.center_y, b.dims[2] / 2.0]))
        buildings.append((pose, np.asarray(b.dims, float),
                          np.asarray(b.albedo, float)))
    vehicles = []
    for v in spec.vehicles:
        vehicles.append((v.vid, np.asarray(v.dims, float),
                         _interp_vehicle_poses(v, spec.frame_count),
                         np.asarray(v.albedo, float)))

    rig = spec.rig
    rot = _camera_rotation(rig.pitch)
    cam_poses, lidar_poses = [], []
    for t in range(spec.frame_count):
        center = np.array([spec.ego_start_x + spec.ego_speed * t,
                           spec.ego_lane_y, rig.cam_height])
        cam_poses.append(CameraPose(
            rot, -rot @ center, fx=rig.fx, fy=rig.fy, cx=rig.cx, cy=rig.cy,
            width=rig.width, height=rig.height, near=rig.near, far=rig.far))
        lidar_poses.append(RigidPose(
            np.eye(3), np.array([center[0], center[1], spec.lidar.height])))

    # per-frame azimuth phase decorrelates ring sampling between sweeps
    rng = np.random.default_rng(spec.seed)
    phase = rng.uniform(0.0, spec.lidar.azimuth_step_deg, spec.frame_count)
    return SynthScene(spec, markings, buildings, vehicles,
                      cam_poses, lidar_poses, phase)


def _points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Membership of (N,2) points in one convex CCW polygon."""
    inside = np.ones(len(pts), bool)
    for i in range(len(poly)):
        v0 = poly[i]
        v1 = poly[(i + 1) % len(poly)]
        cross = ((v1[0] - v0[0]) * (pts[:, 1] - v0[1])
                 - (v1[1] - v0[1]) * (pts[:, 0] - v0[0]))
        inside &= cross >= 0.0
    return inside


def ground_albedo(scene: SynthScene, xy: np.ndarray) -> np.ndarray:
    """Texture lookup for (N,2) ground-plane coordinates."""
    spec = scene.spec
    albedo = np.where((np.abs(xy[:, 1]) <= spec.road_width / 2.0)[:, None],
                      ASPHALT, SHOULDER)
    for _, poly in scene.markings:
        albedo[_points_in_polygon(xy, poly)] = MARKING
    return albedo


def _boxes_at(scene: SynthScene, timestep: int | None):
    boxes = [(pose, dims, alb, False) for pose, dims, alb in scene.buildings]
    if timestep is not None:
        for _, dims, poses, alb in scene.vehicles:
            if timestep in poses:
                boxes.append((poses[timestep], dims, alb, True))
    return boxes


def _ray_box(origin: np.ndarray, dirs: np.ndarray, pose: RigidPose,
             dims: np.ndarray):
    """Slab intersection; returns (t, local face normals) with inf misses."""
    o = pose.R.T @ (origin - pose.t)
    d = dirs @ pose.R  # row-wise R^T @ dir
    half = dims / 2.0
    safe = np.where(np.abs(d) < 1e-15, 1e-15, d)
    ta = (-half - o) / safe
    tb = (half - o) / safe
    tlo = np.minimum(ta, tb)
    thi = np.maximum(ta, tb)
    tmin = tlo.max(axis=1)
    tmax = thi.min(axis=1)
    hit = (tmax >= tmin) & (tmin > 1e-9)
    t = np.where(hit, tmin, np.inf)
    axis = tlo.argmax(axis=1)
    local_n = np.zeros_like(dirs)
    rows = np.arange(len(dirs))
    local_n[rows, axis] = -np.sign(d[rows, axis])
    return t, local_n @ pose.R.T  # world-frame normals


def _trace(scene: SynthScene, origin: np.ndarray, dirs: np.ndarray,
           timestep: int | None, extent_pad: float = 8.0):
    """Nearest-hit ray cast. Returns (t, color, is_dynamic) per ray;

    t is the ray parameter (camera depth when dirs have unit z-component),
    inf where nothing is hit. Colors are shaded; misses get SKY.
    """
    spec = scene.spec
    n = len(dirs)
    t_best = np.full(n, np.inf)
    color = np.tile(SKY, (n, 1))
    dynamic = np.zeros(n, bool)

    dz = np.where(np.abs(dirs[:, 2]) < 1e-15, 1e-15, dirs[:, 2])
    t_g = -origin[2] / dz
    px = origin[0] + t_g * dirs[:, 0]
    py = origin[1] + t_g * dirs[:, 1]
    ok = ((t_g > 1e-9)
          & (px >= -extent_pad) & (px <= spec.road_length + extent_pad)
          & (np.abs(py) <= spec.ground_half_width))
    if ok.any():
        xy = np.stack([px[ok], py[ok]], axis=1)
        shaded = shade(ground_albedo(scene, xy), np.array([0.0, 0.0, 1.0]))
        t_best[ok] = t_g[ok]
        color[ok] = shaded

    for pose, dims, albedo, is_vehicle in _boxes_at(scene, timestep):
        t_b, normals = _ray_box(origin, dirs, pose, dims)
        closer = t_b < t_best
        if closer.any():
            t_best[closer] = t_b[closer]
            color[closer] = shade(np.tile(albedo, (closer.sum(), 1)),
                                  normals[closer])
            dynamic[closer] = is_vehicle
    return t_best, color, dynamic


def raytrace_gt(scene: SynthScene, cam: CameraPose,
                timestep: int | None = None):
    """Exact reference render: (image HxWx3, DepthMap of camera-z depth)."""
    h, w = cam.height, cam.width
    us = (np.arange(w) + 0.5 - cam.cx) / cam.fx
    vs = (np.arange(h) + 0.5 - cam.cy) / cam.fy
    uu, vv = np.meshgrid(us, vs)
    dirs_cam = np.stack([uu.ravel(), vv.ravel(), np.ones(h * w)], axis=1)
    dirs = dirs_cam @ cam.R  # rows R^T @ d: camera to world
    origin = cam.camera_center

    t, color, _ = _trace(scene, origin, dirs, timestep)
    valid = np.isfinite(t) & (t > cam.near) & (t < cam.far)
    depth = np.where(valid, t, 0.0).reshape(h, w)
    image = np.clip(color, 0.0, 1.0).reshape(h, w, 3)
    return image, DepthMap(depth, valid.reshape(h, w))


def simulate_lidar(scene: SynthScene, ego_pose: RigidPose, spec: LidarSpec,
                   timestep: int | None = None) -> LidarFrame:
    """Spin a channel/azimuth ray grid; hits on vehicles labeled dynamic."""
    elev = np.deg2rad(np.linspace(spec.elev_min_deg, spec.elev_max_deg,
                                  spec.channels))
    phase = 0.0
    if timestep is not None and timestep < len(scene.azimuth_phase):
        phase = scene.azimuth_phase[timestep]
    azim = np.deg2rad(np.arange(phase, 360.0, spec.azimuth_step_deg))
    ee, aa = np.meshgrid(elev, azim, indexing="ij")
    dirs_s = np.stack([np.cos(ee) * np.cos(aa),
                       np.cos(ee) * np.sin(aa),
                       np.sin(ee)], axis=-1).reshape(-1, 3)
    dirs = dirs_s @ ego_pose.R.T
    origin = ego_pose.t

    t, color, dynamic = _trace(scene, origin, dirs, timestep)
    hit = np.isfinite(t) & (t <= spec.max_range)
    points = origin + t[hit, None] * dirs[hit]
    ts = int(timestep) if timestep is not None else 0
    return LidarFrame(points, ts, colors=np.clip(color[hit], 0.0, 1.0),
                      is_dynamic=dynamic[hit])


@dataclass
class Dataset:
    """A loaded on-disk dataset; one entry per frame in every list."""

    spec: SynthSceneSpec
    cam_poses: list[CameraPose]
    images: list[np.ndarray]
    lidar: list[LidarFrame]
    tracks: list[ObjectTrack]
    lane_polygons: list[tuple[str, np.ndarray]]

    @property
    def frame_count(self) -> int:
        return len(self.images)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export(scene: SynthScene, out_dir: str | os.PathLike) -> None:
    """Write the dataset layout; images come from the raytracer."""
    out = str(out_dir)
    os.makedirs(os.path.join(out, "images"), exist_ok=True)
    os.makedirs(os.path.join(out, "lidar"), exist_ok=True)
    spec = scene.spec
    rig = spec.rig

    with open(os.path.join(out, "calib.txt"), "w") as f:
        for k in ("fx", "fy", "cx", "cy", "near", "far"):
            f.write(f"{k} {_fmt(getattr(rig, k))}\n")
        f.write(f"width {rig.width}\nheight {rig.height}\n")

    with open(os.path.join(out, "poses.csv"), "w") as f:
        f.write("frame," + ",".join(f"r{i}{j}" for i in range(3)
                                    for j in range(3)) + ",tx,ty,tz\n")
        for t, cam in enumerate(scene.cam_poses):
            vals = list(cam.R.ravel()) + list(cam.t)
            f.write(f"{t}," + ",".join(_fmt(v) for v in vals) + "\n")

    with open(os.path.join(out, "tracks.csv"), "w") as f:
        f.write("frame,object_id,"
                + ",".join(f"r{i}{j}" for i in range(3) for j in range(3))
                + ",tx,ty,tz,dx,dy,dz\n")
        for vid, dims, poses, _ in scene.vehicles:
            for t in sorted(poses):
                p = poses[t]
                vals = list(p.R.ravel()) + list(p.t) + list(dims)
                f.write(f"{t},{vid},"
                        + ",".join(_fmt(v) for v in vals) + "\n")

    with open(os.path.join(out, "lanes.csv"), "w") as f:
        f.write("lane_id,vertex_index,x,y,z\n")
        for lane_id, poly in scene.markings:
            for i, (x, y) in enumerate(poly):
                f.write(f"{lane_id},{i},{_fmt(x)},{_fmt(y)},0\n")

    with open(os.path.join(out, "scene.json"), "w") as f:
        json.dump({"spec": _spec_to_dict(spec),
                   "marking_color": list(MARKING),
                   "format_version": 1}, f, indent=1)

    for t in range(spec.frame_count):
        image, _ = raytrace_gt(scene, scene.cam_poses[t], t)
        write_ppm(os.path.join(out, "images", f"{t:04d}.ppm"), image)

        frame = simulate_lidar(scene, scene.lidar_poses[t], spec.lidar, t)
        n = len(frame.points)
        rec = np.zeros(n, dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                                 ("red", "<f4"), ("green", "<f4"),
                                 ("blue", "<f4"), ("is_dynamic", "u1")])
        rec["x"], rec["y"], rec["z"] = frame.points.T
        rec["red"], rec["green"], rec["blue"] = frame.colors.T.astype(np.float32)
        rec["is_dynamic"] = frame.is_dynamic.astype(np.uint8)
        write_ply(os.path.join(out, "lidar", f"{t:04d}.ply"),
                  [("vertex", rec)])


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise DatasetError(f"missing dataset file: {path}")
    return path


def load(data_dir: str | os.PathLike) -> Dataset:
    """Inverse of export; descriptive DatasetError naming any bad file."""
    root = str(data_dir)
    scene_path = _require(os.path.join(root, "scene.json"))
    try:
        with open(scene_path) as f:
            meta = json.load(f)
        spec = _spec_from_dict(meta["spec"])
    except (json.JSONDecodeError, KeyError, TypeError, ConfigError) as e:
        raise DatasetError(f"malformed scene description {scene_path}: {e}")

    calib_path = _require(os.path.join(root, "calib.txt"))
    calib: dict[str, float] = {}
    with open(calib_path) as f:
        for line in f:
            parts = line.split()
            if len(parts) == 2:
                calib[parts[0]] = float(parts[1])
    for key in ("fx", "fy", "cx", "cy", "width", "height", "near", "far"):
        if key not in calib:
            raise DatasetError(f"calibration {calib_path} lacks '{key}'")

    poses_path = _require(os.path.join(root, "poses.csv"))
    rows = np.genfromtxt(poses_path, delimiter=",", skip_header=1, ndmin=2)
    if rows.shape[1] != 13:
        raise DatasetError(f"poses file {poses_path}: expected 13 columns")
    frames = rows[:, 0].astype(int)
    if not np.array_equal(frames, np.arange(len(frames))):
        raise DatasetError(f"poses file {poses_path}: frame indices not "
                           f"dense 0..{len(frames) - 1}")
    cam_poses = []
    for row in rows:
        cam_poses.append(CameraPose(
            row[1:10].reshape(3, 3), row[10:13],
            fx=calib["fx"], fy=calib["fy"], cx=calib["cx"], cy=calib["cy"],
            width=int(calib["width"]), height=int(calib["height"]),
            near=calib["near"], far=calib["far"]))

    images, lidar = [], []
    for t in range(len(frames)):
        img_path = _require(os.path.join(root, "images", f"{t:04d}.ppm"))
        try:
            images.append(read_ppm(img_path))
        except InvalidInputError as e:
            raise DatasetError(f"bad image {img_path}: {e}")
        ply_path = _require(os.path.join(root, "lidar", f"{t:04d}.ply"))
        try:
            rec = read_ply(ply_path)["vertex"]
        except (InvalidInputError, KeyError) as e:
            raise DatasetError(f"bad lidar frame {ply_path}: {e}")
        pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
        cols = None
        if "red" in rec.dtype.names:
            cols = np.stack([rec["red"], rec["green"], rec["blue"]],
                            axis=1).astype(np.float64)
        dyn = rec["is_dynamic"].astype(bool) if "is_dynamic" in rec.dtype.names else None
        lidar.append(LidarFrame(pts, t, colors=cols, is_dynamic=dyn))

    tracks_path = _require(os.path.join(root, "tracks.csv"))
    by_id: dict[str, tuple[np.ndarray, dict[int, RigidPose]]] = {}
    with open(tracks_path) as f:
        header = f.readline()
        if not header.startswith("frame,object_id"):
            raise DatasetError(f"tracks file {tracks_path}: bad header")
        for line in f:
            parts = line.strip().split(",")
            if len(parts) != 17:
                raise DatasetError(f"tracks file {tracks_path}: bad row "
                                   f"{line.strip()!r}")
            t, vid = int(parts[0]), parts[1]
            vals = np.array([float(v) for v in parts[2:]])
            pose = RigidPose(vals[:9].reshape(3, 3), vals[9:12])
            dims = vals[12:15]
            if vid not in by_id:
                by_id[vid] = (dims, {})
            by_id[vid][1][t] = pose
    tracks = [ObjectTrack(vid, dims, poses)
              for vid, (dims, poses) in by_id.items()]

    lanes_path = _require(os.path.join(root, "lanes.csv"))
    lane_rows: dict[str, list[tuple[int, float, float]]] = {}
    with open(lanes_path) as f:
        f.readline()
        for line in f:
            parts = line.strip().split(",")
            if len(parts) != 5:
                raise DatasetError(f"lanes file {lanes_path}: bad row")
            lane_rows.setdefault(parts[0], []).append(
                (int(parts[1]), float(parts[2]), float(parts[3])))
    lane_polygons = []
    for lane_id, verts in lane_rows.items():
        verts.sort()
        lane_polygons.append(
            (lane_id, np.array([[x, y] for _, x, y in verts])))

    return Dataset(spec, cam_poses, images, lidar, tracks, lane_polygons)


def lateral_shift_pose(cam: CameraPose, shift: float) -> CameraPose:
    """Shift the camera center sideways (camera-left, ground-parallel)."""
    left = -cam.R.T[:, 0]  # world direction of the camera's -x axis
    left[2] = 0.0
    norm = np.linalg.norm(left)
    if norm < 1e-12:
        raise InvalidInputError("camera left axis is vertical")
    center = cam.camera_center + shift * (left / norm)
    return CameraPose(cam.R, -cam.R @ center, fx=cam.fx, fy=cam.fy,
                      cx=cam.cx, cy=cam.cy, width=cam.width,
                      height=cam.height, near=cam.near, far=cam.far)
