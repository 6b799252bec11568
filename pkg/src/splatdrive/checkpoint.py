"""Single-file checkpoint: every trained quantity in one PLY container.

Gaussian components are ordinary PLY elements (double precision, so the
frozen ground positions survive save/load bitwise). Everything else --
deformation network weights, optimizer moments, trajectories, calibration,
configuration -- rides in one packed byte blob element.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .gset import GaussianSet
from .ntdnet import NTDNetParams
from .optim import AdamState
from .ply import pack_named_arrays, read_ply, unpack_named_arrays, write_ply
from .rasterizer import CameraPose
from .scene import ObjectModel, SceneModel, Trajectory
from .se3 import RigidPose


def _gs_to_struct(gs: GaussianSet) -> np.ndarray:
    k = gs.sh_coeffs.shape[1]
    fields = ([(n, "<f8") for n in ("x", "y", "z", "qw", "qx", "qy", "qz",
                                    "s0", "s1", "s2", "opacity")]
              + [(f"sh{i}", "<f8") for i in range(3 * k)])
    rec = np.zeros(len(gs), dtype=fields)
    rec["x"], rec["y"], rec["z"] = gs.positions.T
    rec["qw"], rec["qx"], rec["qy"], rec["qz"] = gs.rotations.T
    rec["s0"], rec["s1"], rec["s2"] = gs.log_scales.T
    rec["opacity"] = gs.opacity_logits
    flat = gs.sh_coeffs.reshape(len(gs), 3 * k)
    for i in range(3 * k):
        rec[f"sh{i}"] = flat[:, i]
    return rec


def _struct_to_gs(rec: np.ndarray) -> GaussianSet:
    sh_cols = [n for n in rec.dtype.names if n.startswith("sh")]
    k = len(sh_cols) // 3
    n = len(rec)
    sh = np.stack([rec[f"sh{i}"] for i in range(3 * k)],
                  axis=1).reshape(n, k, 3)
    return GaussianSet(
        np.stack([rec["x"], rec["y"], rec["z"]], axis=1),
        np.stack([rec["qw"], rec["qx"], rec["qy"], rec["qz"]], axis=1),
        np.stack([rec["s0"], rec["s1"], rec["s2"]], axis=1),
        rec["opacity"].copy(),
        sh,
    )


def _poses_to_arrays(poses: dict[int, RigidPose]):
    ts = np.array(sorted(poses), dtype=np.int64)
    mats = np.stack([np.concatenate([poses[int(t)].R.ravel(),
                                     poses[int(t)].t]) for t in ts])
    return ts, mats


def _arrays_to_poses(ts: np.ndarray, mats: np.ndarray) -> dict[int, RigidPose]:
    return {int(t): RigidPose(row[:9].reshape(3, 3), row[9:12])
            for t, row in zip(ts, mats)}


@dataclass
class Checkpoint:
    scene: SceneModel
    ntd: NTDNetParams
    trajectory: Trajectory
    calib: dict[str, float]
    step: int = 0
    opt_state: AdamState | None = None
    meta: dict = field(default_factory=dict)

    def camera_at(self, t: int) -> CameraPose:
        pose = self.trajectory.pose_at(t)
        c = self.calib
        return CameraPose(pose.R, pose.t, fx=c["fx"], fy=c["fy"],
                          cx=c["cx"], cy=c["cy"], width=int(c["width"]),
                          height=int(c["height"]), near=c["near"],
                          far=c["far"])


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    elements = [("ground", _gs_to_struct(ckpt.scene.ground)),
                ("background", _gs_to_struct(ckpt.scene.background))]
    blob_arrays: dict[str, np.ndarray] = {}
    object_ids = []
    for i, obj in enumerate(ckpt.scene.objects):
        elements.append((f"object_{i}", _gs_to_struct(obj.gaussians)))
        object_ids.append(obj.id)
        ts, mats = _poses_to_arrays(obj.poses)
        blob_arrays[f"objpose.{i}.t"] = ts
        blob_arrays[f"objpose.{i}.mats"] = mats

    for name, arr in ckpt.ntd.named_arrays():
        blob_arrays[f"ntdnet.{name}"] = arr
    blob_arrays["ntdnet.pe"] = np.array(
        [ckpt.ntd.pe_bands_x, ckpt.ntd.pe_bands_t], dtype=np.int64)
    blob_arrays["ntdnet.L"] = np.array([ckpt.ntd.L])

    ts, mats = _poses_to_arrays(
        {int(t): p for t, p in zip(ckpt.trajectory.timesteps,
                                   ckpt.trajectory.poses)})
    blob_arrays["traj.t"] = ts
    blob_arrays["traj.mats"] = mats
    blob_arrays["bounds"] = ckpt.scene.world_bounds
    calib_keys = sorted(ckpt.calib)
    blob_arrays["calib.values"] = np.array(
        [ckpt.calib[k] for k in calib_keys])

    if ckpt.opt_state is not None:
        for name, arr in ckpt.opt_state.named_arrays().items():
            blob_arrays[f"optim.{name}"] = arr

    meta = dict(ckpt.meta)
    meta["step"] = ckpt.step
    meta["object_ids"] = object_ids
    meta["calib_keys"] = calib_keys
    meta["trajectory_tag"] = ckpt.trajectory.tag
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    blob_arrays["meta.json"] = np.frombuffer(meta_bytes, dtype=np.uint8)

    blob = np.frombuffer(pack_named_arrays(blob_arrays), dtype=np.uint8)
    elements.append(("blob", blob.view([("byte", "u1")])))
    write_ply(path, elements, comments=["splatdrive checkpoint v1"])


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    raw = read_ply(path)
    if "blob" not in raw or "ground" not in raw or "background" not in raw:
        raise InvalidInputError(f"{path}: not a checkpoint file")
    blob_arrays = unpack_named_arrays(raw["blob"]["byte"].tobytes())
    meta = json.loads(blob_arrays.pop("meta.json").tobytes().decode())

    objects = []
    for i, oid in enumerate(meta["object_ids"]):
        gs = _struct_to_gs(raw[f"object_{i}"])
        poses = _arrays_to_poses(blob_arrays[f"objpose.{i}.t"],
                                 blob_arrays[f"objpose.{i}.mats"])
        objects.append(ObjectModel(oid, gs, poses))
    scene = SceneModel(_struct_to_gs(raw["ground"]),
                       _struct_to_gs(raw["background"]),
                       objects, blob_arrays["bounds"])

    pe = blob_arrays["ntdnet.pe"]
    ntd_named = {name[len("ntdnet."):]: arr
                 for name, arr in blob_arrays.items()
                 if name.startswith("ntdnet.") and name not in
                 ("ntdnet.pe", "ntdnet.L")}
    ntd = NTDNetParams.from_named_arrays(
        ntd_named, pe_bands_x=int(pe[0]), pe_bands_t=int(pe[1]),
        L=float(blob_arrays["ntdnet.L"][0]))

    traj_poses = _arrays_to_poses(blob_arrays["traj.t"],
                                  blob_arrays["traj.mats"])
    keys = sorted(traj_poses)
    trajectory = Trajectory(keys, [traj_poses[k] for k in keys],
                            meta.pop("trajectory_tag"))

    calib = dict(zip(meta.pop("calib_keys"),
                     blob_arrays["calib.values"].tolist()))

    opt_arrays = {name[len("optim."):]: arr
                  for name, arr in blob_arrays.items()
                  if name.startswith("optim.")}
    opt_state = AdamState.from_named_arrays(opt_arrays) if opt_arrays else None

    step = int(meta.pop("step"))
    meta.pop("object_ids")
    return Checkpoint(scene, ntd, trajectory, calib, step, opt_state, meta)
