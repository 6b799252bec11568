"""The optimization loop.

Composite photometric + depth loss, Adam updates honoring the frozen
ground positions, a two-phase schedule (original-trajectory warmup, then
mixed original/novel sampling with periodically refreshed novel-view
targets through a pluggable restorer), density control for the non-ground
components, and checkpointing.
"""
from __future__ import annotations

import logging
import os
import subprocess
import tempfile
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import ConfigError, InvalidInputError, RestorationFailedError
from .gset import GaussianGrads, GaussianSet
from .imgio import read_ppm, write_ppm
from .lidar_depth import DepthMap, fuse_static, project_depth
from .losses import l1_with_grad, masked_l1_with_grad, ssim_with_grad
from .metrics import project_box_corners, psnr
from .ntdnet import (
    NTDNetParams,
    apply_deformation,
    apply_deformation_backward,
    delta_pose,
    ntd_backward,
    ntd_forward,
)
from .optim import (
    AdamState,
    DensifyConfig,
    GradAccum,
    densify_and_prune,
    remap_group_rows,
    update_group,
)
from .rasterizer import CameraPose, RenderOutput, render, render_backward
from .scene import (
    SceneInitConfig,
    SceneModel,
    Trajectory,
    assemble_frame,
    init_scene,
    split_frame_grads,
)
from .se3 import RigidPose
from .synth import Dataset, lateral_shift_pose

log = logging.getLogger("splatdrive.trainer")


@dataclass
class TrainConfig:
    total_steps: int = 3000
    lambda_rgb: float = 0.8
    lambda_ssim: float = 0.2
    lambda_depth: float = 0.05
    lr_position: float = 2e-3
    lr_rotation: float = 2e-3
    lr_log_scale: float = 4e-3
    lr_opacity: float = 0.05
    lr_sh: float = 4e-3
    lr_ntdnet: float = 2e-4
    warmup_fraction: float = 0.2
    novel_view_ratio: float = 0.3
    novel_shift: float = 2.0
    novel_frame_stride: int = 4
    restore_interval: int = 500
    restorer: str = "identity"
    densify_interval: int = 300
    densify_grad_threshold: float = 0.03
    densify_split_scale: float = 0.8
    densify_stop_fraction: float = 0.7
    max_points: int = 40000
    checkpoint_interval: int = 1000
    holdout_frame: int = 20
    ntd_layers: int = 4
    ntd_hidden: int = 48
    ntd_pe_x: int = 6
    ntd_pe_t: int = 4
    ntd_L: float = 6.0
    init_extra_points: int = 2000
    init_voxel: float = 0.5
    init_sh_degree: int = 1
    init_opacity: float = 0.1
    tau_ground: float = 0.15
    ransac_iterations: int = 1000
    min_inlier_fraction: float = 0.2
    box_margin: float = 0.15
    bounds_pad: float = 2.0
    seed: int = 42
    workers: int = 1

    def __post_init__(self):
        for lam in ("lambda_rgb", "lambda_ssim", "lambda_depth"):
            if getattr(self, lam) < 0:
                raise ConfigError(f"{lam} must be >= 0")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if not 0.0 <= self.novel_view_ratio <= 1.0:
            raise ConfigError("novel_view_ratio must be in [0, 1]")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must be in [0, 1]")
        if self.novel_frame_stride < 1:
            raise ConfigError("novel_frame_stride must be >= 1")
        if self.restore_interval < 1 or self.densify_interval < 1:
            raise ConfigError("intervals must be >= 1")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not (self.restorer == "identity"
                or self.restorer.startswith("command:")):
            raise ConfigError(
                "restorer must be 'identity' or 'command:<executable>'")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name)
                for f in dataclass_fields(self)}


def parse_config(path: str | os.PathLike) -> TrainConfig:
    """Key-value text file, one `name value` pair per line, '#' comments."""
    types = {f.name: f.type for f in dataclass_fields(TrainConfig)}
    kw = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'key value'")
            key, value = parts
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            ann = str(types[key])
            try:
                if ann == "int":
                    kw[key] = int(value)
                elif ann == "float":
                    kw[key] = float(value)
                else:
                    kw[key] = value
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: bad value {value!r} for {key}")
    return TrainConfig(**kw)


@dataclass
class FrameBundle:
    """One supervision target: an image (plus optional depth) at a camera."""

    image: np.ndarray | None
    cam: CameraPose
    timestep: int
    tag: str  # original | novel
    provenance: str = "recorded"  # recorded | restored
    depth_target: DepthMap | None = None
    dynamic_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.tag not in ("original", "novel"):
            raise InvalidInputError(f"unknown trajectory tag {self.tag!r}")
        if self.provenance not in ("recorded", "restored"):
            raise InvalidInputError(f"unknown provenance {self.provenance!r}")
        if self.image is not None and self.image.shape != (
                self.cam.height, self.cam.width, 3):
            raise InvalidInputError(
                f"bundle image {self.image.shape} does not match camera "
                f"({self.cam.height}, {self.cam.width}, 3)")


def compute_loss(out: RenderOutput, bundle: FrameBundle, cfg: TrainConfig):
    """Weighted L1 + (1 - SSIM) + masked depth L1 and upstream gradients.

    Returns (total, terms, grad_color, grad_depth); grad_depth is None
    when no depth supervision applies to this bundle.
    """
    color = out.color.astype(np.float64)
    target = bundle.image
    l_rgb, g_rgb = l1_with_grad(color, target)
    grad_color = cfg.lambda_rgb * g_rgb
    l_ssim = 0.0
    if cfg.lambda_ssim > 0.0:
        score, g_ssim = ssim_with_grad(color, target)
        l_ssim = 1.0 - score
        grad_color -= cfg.lambda_ssim * g_ssim

    l_depth = 0.0
    grad_depth = None
    if cfg.lambda_depth > 0.0 and bundle.depth_target is not None:
        l_depth, g_depth = masked_l1_with_grad(
            out.depth.astype(np.float64), bundle.depth_target.depth,
            bundle.depth_target.valid)
        grad_depth = cfg.lambda_depth * g_depth

    total = (cfg.lambda_rgb * l_rgb + cfg.lambda_ssim * l_ssim
             + cfg.lambda_depth * l_depth)
    terms = {"l_rgb": l_rgb, "l_ssim": l_ssim, "l_depth": l_depth}
    return total, terms, grad_color, grad_depth


class IdentityRestorer:
    def restore(self, images: list[np.ndarray]) -> list[np.ndarray]:
        return list(images)


@dataclass
class CommandRestorer:
    """Writes frames as PPM into a work directory, runs `command <dir>`,
    reads back the same file names."""

    command: str
    workdir: str | None = None

    def restore(self, images: list[np.ndarray]) -> list[np.ndarray]:
        wd = self.workdir or tempfile.mkdtemp(prefix="splatdrive_restore_")
        os.makedirs(wd, exist_ok=True)
        names = []
        for i, img in enumerate(images):
            name = os.path.join(wd, f"{i:04d}.ppm")
            write_ppm(name, img)
            names.append(name)
        try:
            proc = subprocess.run([self.command, wd], capture_output=True,
                                  timeout=300)
        except (OSError, subprocess.TimeoutExpired) as e:
            raise RestorationFailedError(f"restorer {self.command!r}: {e}")
        if proc.returncode != 0:
            raise RestorationFailedError(
                f"restorer {self.command!r} exited {proc.returncode}: "
                f"{proc.stderr.decode(errors='replace')[:500]}")
        out = []
        for name in names:
            if not os.path.exists(name):
                raise RestorationFailedError(
                    f"restorer {self.command!r} did not produce {name}")
            out.append(read_ppm(name))
        return out


def make_restorer(setting: str):
    if setting == "identity":
        return IdentityRestorer()
    if setting.startswith("command:"):
        return CommandRestorer(setting[len("command:"):])
    raise ConfigError(f"unknown restorer {setting!r}")


def restore_frames(images: list[np.ndarray], restorer) -> list[np.ndarray]:
    return restorer.restore(images)


GAUSS_ARRAY_NAMES = ("positions", "rotations", "log_scales",
                     "opacity_logits", "sh_coeffs")


def _arrays_of(obj) -> dict[str, np.ndarray]:
    return {name: getattr(obj, name) for name in GAUSS_ARRAY_NAMES}


def _gauss_lrs(cfg: TrainConfig) -> dict[str, float]:
    return {
        "positions": cfg.lr_position,
        "rotations": cfg.lr_rotation,
        "log_scales": cfg.lr_log_scale,
        "opacity_logits": cfg.lr_opacity,
        "sh_coeffs": cfg.lr_sh,
    }


def optimizer_step(scene: SceneModel, ntd: NTDNetParams, scene_grads,
                   ntd_grads, opt: AdamState, cfg: TrainConfig) -> int:
    """One Adam step over every parameter group; returns groups skipped
    because of non-finite gradients. Ground positions are never updated."""
    skipped = 0
    lrs = _gauss_lrs(cfg)
    jobs = [("ground", scene.ground, scene_grads.ground, ("positions",)),
            ("background", scene.background, scene_grads.background, ())]
    for i, obj in enumerate(scene.objects):
        jobs.append((f"object_{i}", obj.gaussians, scene_grads.objects[i], ()))
    for name, gs, gr, frozen in jobs:
        if update_group(opt, name, _arrays_of(gs), _arrays_of(gr), lrs,
                        frozen):
            gs.normalize_rotations()
        else:
            skipped += 1
            log.warning("skipped %s update: non-finite gradient", name)
    if ntd_grads is not None:
        arrays = dict(ntd.named_arrays())
        grads = dict(ntd_grads.named_arrays())
        if update_group(opt, "ntdnet", arrays, grads,
                        {k: cfg.lr_ntdnet for k in arrays}):
            pass
        else:
            skipped += 1
            log.warning("skipped ntdnet update: non-finite gradient")
    return skipped


def fused_static_points(ds: Dataset) -> np.ndarray:
    frames_by_t = {f.timestep: f for f in ds.lidar}

    def is_static(points, t):
        frame = frames_by_t[t]
        if frame.is_dynamic is None:
            return np.ones(len(points), bool)
        return ~frame.is_dynamic

    return fuse_static(ds.lidar, is_static)


def dynamic_box_mask(tracks, t: int, cam: CameraPose,
                     margin: float = 0.2) -> np.ndarray:
    """1 where a tracked object's projected box covers the pixel."""
    mask = np.zeros((cam.height, cam.width), np.uint8)
    for tr in tracks:
        if t not in tr.poses:
            continue
        box = project_box_corners(tr.poses[t], tr.dims + 2.0 * margin, cam)
        if box is None:
            continue
        r0 = max(int(np.floor(box.y_min)), 0)
        r1 = min(int(np.ceil(box.y_max)), cam.height)
        c0 = max(int(np.floor(box.x_min)), 0)
        c1 = min(int(np.ceil(box.x_max)), cam.width)
        mask[r0:r1, c0:c1] = 1
    return mask


def build_original_bundles(ds: Dataset) -> list[FrameBundle]:
    return [FrameBundle(ds.images[t], ds.cam_poses[t], t, "original")
            for t in range(ds.frame_count)]


def build_novel_bundles(ds: Dataset, cfg: TrainConfig) -> list[FrameBundle]:
    """Novel-view shells: shifted cameras with fused-LiDAR depth targets;
    photometric targets get filled in by the restorer during training."""
    if cfg.novel_view_ratio <= 0.0:
        return []
    fused = fused_static_points(ds)
    bundles = []
    for t in range(0, ds.frame_count, cfg.novel_frame_stride):
        cam = lateral_shift_pose(ds.cam_poses[t], cfg.novel_shift)
        mask = dynamic_box_mask(ds.tracks, t, cam)
        depth = project_depth(fused, cam, mask=mask)
        bundles.append(FrameBundle(None, cam, t, "novel", "restored",
                                   depth, mask))
    return bundles


def render_frame(scene: SceneModel, ntd: NTDNetParams, traj: Trajectory,
                 bundle: FrameBundle, cfg: TrainConfig, workers: int = 1,
                 return_state: bool = False):
    """Assemble and render one frame. Novel-tagged bundles route through
    the deformation network; original ones bypass it entirely."""
    asm = assemble_frame(scene, bundle.timestep)
    deformed = asm.gaussians
    deltas = cache = None
    if bundle.tag == "novel":
        ori = traj.pose_at(bundle.timestep)
        novel = RigidPose(bundle.cam.R, bundle.cam.t)
        dp = delta_pose(novel, ori, cfg.ntd_L)
        t_norm = bundle.timestep / max(1, len(traj.timesteps) - 1)
        deltas, cache = ntd_forward(ntd, dp, asm.gaussians.positions, t_norm,
                                    return_cache=True)
        deformed = apply_deformation(asm.gaussians, deltas)
    out, state = render(deformed, bundle.cam, dtype=np.float32,
                        workers=workers, return_state=True)
    if return_state:
        return out, (asm, deformed, deltas, cache, state)
    return out


def backward_frame(scene: SceneModel, ntd: NTDNetParams, bundle: FrameBundle,
                   forward_ctx, grad_color, grad_depth, workers: int = 1):
    """Chain image-space gradients to component parameters and the
    deformation network. Returns (SceneGrads, NTDNetGrads | None, flat)."""
    asm, deformed, deltas, cache, state = forward_ctx
    flat = render_backward(deformed, bundle.cam, state, grad_color,
                           grad_depth, workers=workers)
    if cache is None:
        return split_frame_grads(scene, asm, flat), None, flat
    g_orig, grad_deltas = apply_deformation_backward(asm.gaussians, deltas,
                                                     flat)
    ntd_grads, g_pos = ntd_backward(ntd, cache,
                                    grad_deltas.astype(np.float64))
    g_orig.positions = g_orig.positions + g_pos
    return split_frame_grads(scene, asm, g_orig), ntd_grads, flat


def _scene_init_config(cfg: TrainConfig) -> SceneInitConfig:
    return SceneInitConfig(
        extra_random_points=cfg.init_extra_points,
        init_opacity=cfg.init_opacity,
        sh_degree=cfg.init_sh_degree,
        tau_ground=cfg.tau_ground,
        ransac_iterations=cfg.ransac_iterations,
        min_inlier_fraction=cfg.min_inlier_fraction,
        voxel_size=cfg.init_voxel,
        bounds_pad=cfg.bounds_pad,
        box_margin=cfg.box_margin,
        seed=cfg.seed,
    )


def _calib_of(ds: Dataset) -> dict[str, float]:
    rig = ds.spec.rig
    return {k: float(getattr(rig, k))
            for k in ("fx", "fy", "cx", "cy", "width", "height",
                      "near", "far")}


def initialize(ds: Dataset, cfg: TrainConfig):
    """Decomposed scene + zero-deformation network from a dataset."""
    scene = init_scene(ds.lidar, ds.tracks, _scene_init_config(cfg))
    traj = Trajectory(list(range(ds.frame_count)),
                      [RigidPose(c.R, c.t) for c in ds.cam_poses],
                      "original")
    ntd = NTDNetParams.create(seed=cfg.seed, n_layers=cfg.ntd_layers,
                              hidden=cfg.ntd_hidden, pe_bands_x=cfg.ntd_pe_x,
                              pe_bands_t=cfg.ntd_pe_t, L=cfg.ntd_L)
    return scene, traj, ntd


METRICS_COLUMNS = ("step", "tag", "loss", "l_rgb", "l_ssim", "l_depth",
                   "psnr", "skipped", "holdout_psnr")


def write_metrics(path: str | os.PathLike, rows: list[dict]) -> None:
    with open(path, "w") as f:
        f.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in METRICS_COLUMNS:
                v = row.get(col, "")
                if isinstance(v, float):
                    cells.append(format(v, ".10g"))
                else:
                    cells.append(str(v))
            f.write(",".join(cells) + "\n")


def train(ds: Dataset, cfg: TrainConfig, ckpt_path=None, metrics_path=None,
          resume=None):
    """Run the full schedule; returns (Checkpoint, metrics rows)."""
    warnings = 0
    if resume is not None:
        start = load_checkpoint(resume)
        scene, ntd, traj = start.scene, start.ntd, start.trajectory
        opt = start.opt_state or AdamState()
        step0 = start.step
        calib = start.calib
    else:
        scene, traj, ntd = initialize(ds, cfg)
        opt = AdamState()
        step0 = 0
        calib = _calib_of(ds)
    rng = np.random.default_rng([cfg.seed, step0])

    originals = build_original_bundles(ds)
    holdout = min(cfg.holdout_frame, ds.frame_count - 1)
    train_frames = [t for t in range(ds.frame_count) if t != holdout]
    novels = build_novel_bundles(ds, cfg)
    restorer = make_restorer(cfg.restorer)

    warmup_steps = int(round(cfg.warmup_fraction * cfg.total_steps))
    densify_stop = int(cfg.densify_stop_fraction * cfg.total_steps)

    accums = {"background": GradAccum.empty(len(scene.background))}
    for i, obj in enumerate(scene.objects):
        accums[f"object_{i}"] = GradAccum.empty(len(obj.gaussians))
    dcfg = DensifyConfig(cfg.densify_grad_threshold, cfg.densify_split_scale,
                         cfg.max_points)

    def refresh_novel_targets():
        nonlocal warnings
        renders = []
        for b in novels:
            out = render_frame(scene, ntd, traj, b, cfg, cfg.workers)
            renders.append(np.clip(out.color.astype(np.float64), 0.0, 1.0))
        try:
            restored = restore_frames(renders, restorer)
        except RestorationFailedError as e:
            log.warning("restoration failed, using renders as-is: %s", e)
            warnings += 1
            restored = renders
        for b, img in zip(novels, restored):
            b.image = img
            b.provenance = "restored"

    def holdout_psnr() -> float:
        b = originals[holdout]
        out = render_frame(scene, ntd, traj, b, cfg, cfg.workers)
        return psnr(np.clip(out.color.astype(np.float64), 0, 1), b.image)

    def make_checkpoint(step: int) -> Checkpoint:
        return Checkpoint(scene, ntd, traj, calib, step, opt,
                          meta={"config": cfg.as_dict(),
                                "warnings": warnings})

    rows: list[dict] = []
    novel_ready = False
    for step in range(step0, cfg.total_steps):
        use_novel = False
        if novels and step >= warmup_steps:
            if (not novel_ready
                    or (step - warmup_steps) % cfg.restore_interval == 0):
                refresh_novel_targets()
                novel_ready = True
            use_novel = rng.uniform() < cfg.novel_view_ratio
        if use_novel:
            bundle = novels[int(rng.integers(len(novels)))]
        else:
            bundle = originals[
                train_frames[int(rng.integers(len(train_frames)))]]

        out, ctx = render_frame(scene, ntd, traj, bundle, cfg, cfg.workers,
                                return_state=True)
        total, terms, g_color, g_depth = compute_loss(out, bundle, cfg)
        if not np.isfinite(total):
            log.warning("non-finite loss at step %d, skipping", step)
            warnings += 1
            continue
        scene_grads, ntd_grads, flat = backward_frame(
            scene, ntd, bundle, ctx, g_color, g_depth, cfg.workers)
        skipped = optimizer_step(scene, ntd, scene_grads, ntd_grads, opt,
                                 cfg)
        warnings += skipped

        if flat.mean2d_norm is not None:
            accums["background"].add(
                np.asarray(scene_grads.background.mean2d_norm, np.float64),
                scene_grads.background.visible)
            for i in range(len(scene.objects)):
                accums[f"object_{i}"].add(
                    np.asarray(scene_grads.objects[i].mean2d_norm,
                               np.float64),
                    scene_grads.objects[i].visible)

        if (cfg.densify_interval > 0 and step > 0 and step < densify_stop
                and (step + 1) % cfg.densify_interval == 0):
            comps = [("background", scene.background)] + [
                (f"object_{i}", obj.gaussians)
                for i, obj in enumerate(scene.objects)]
            for name, gs in comps:
                new_gs, keep, added = densify_and_prune(
                    gs, accums[name], dcfg, rng)
                remap_group_rows(opt, name, keep, added)
                accums[name] = GradAccum.empty(len(new_gs))
                if name == "background":
                    scene.background = new_gs
                else:
                    scene.objects[int(name.split("_")[1])].gaussians = new_gs

        row = {"step": step, "tag": bundle.tag, "loss": total,
               "psnr": psnr(np.clip(out.color.astype(np.float64), 0, 1),
                            bundle.image),
               "skipped": skipped, **terms}
        is_ckpt_step = (step + 1) % cfg.checkpoint_interval == 0
        if is_ckpt_step or step + 1 == cfg.total_steps:
            row["holdout_psnr"] = holdout_psnr()
        rows.append(row)

        if is_ckpt_step and ckpt_path is not None:
            save_checkpoint(ckpt_path, make_checkpoint(step + 1))
            if metrics_path is not None:
                write_metrics(metrics_path, rows)

    final = make_checkpoint(cfg.total_steps)
    if ckpt_path is not None:
        save_checkpoint(ckpt_path, final)
    if metrics_path is not None:
        write_metrics(metrics_path, rows)
    return final, rows
