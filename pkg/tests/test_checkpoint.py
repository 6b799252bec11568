import numpy as np
import pytest

from splatdrive.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from splatdrive.errors import InvalidInputError
from splatdrive.gset import GaussianSet
from splatdrive.ntdnet import NTDNetParams
from splatdrive.optim import AdamState, adam_update
from splatdrive.scene import ObjectModel, SceneModel, Trajectory
from splatdrive.se3 import RigidPose, rotation_about_z


def make_set(rng, n, k=4):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianSet(rng.normal(size=(n, 3)), q, rng.normal(size=(n, 3)),
                       rng.normal(size=n), rng.normal(size=(n, k, 3)))


def make_checkpoint(rng, with_opt=True):
    poses = {0: RigidPose(np.eye(3), np.array([1.0, 0, 0])),
             1: RigidPose(rotation_about_z(0.4), np.array([2.0, 1.0, 0]))}
    obj = ObjectModel("car_a", make_set(rng, 7), poses)
    scene = SceneModel(make_set(rng, 20), make_set(rng, 15), [obj],
                       np.array([[-5.0, -5.0, -1.0], [5.0, 5.0, 4.0]]))
    ntd = NTDNetParams.create(seed=3, n_layers=2, hidden=8,
                              pe_bands_x=2, pe_bands_t=1, L=4.0)
    ntd.out_w[:] = rng.normal(0, 0.01, ntd.out_w.shape)
    traj = Trajectory([0, 1], [poses[0], poses[1]], "original")
    calib = {"fx": 60.0, "fy": 61.0, "cx": 32.0, "cy": 24.0,
             "width": 64.0, "height": 48.0, "near": 0.1, "far": 90.0}
    opt = None
    if with_opt:
        opt = AdamState()
        p = rng.normal(size=(20, 3))
        adam_update(opt, "ground.rotations", p, rng.normal(size=(20, 3)),
                    0.01)
    return Checkpoint(scene, ntd, traj, calib, step=123, opt_state=opt,
                      meta={"config": {"total_steps": 500}})


class TestRoundTrip:
    def test_everything_survives(self, tmp_path):
        rng = np.random.default_rng(0)
        ck = make_checkpoint(rng)
        path = tmp_path / "model.ply"
        save_checkpoint(path, ck)
        back = load_checkpoint(path)

        for name in ("positions", "rotations", "log_scales",
                     "opacity_logits", "sh_coeffs"):
            np.testing.assert_array_equal(getattr(back.scene.ground, name),
                                          getattr(ck.scene.ground, name))
            np.testing.assert_array_equal(
                getattr(back.scene.background, name),
                getattr(ck.scene.background, name))
            np.testing.assert_array_equal(
                getattr(back.scene.objects[0].gaussians, name),
                getattr(ck.scene.objects[0].gaussians, name))
        assert back.scene.objects[0].id == "car_a"
        for t in (0, 1):
            np.testing.assert_array_equal(
                back.scene.objects[0].poses[t].R,
                ck.scene.objects[0].poses[t].R)
        np.testing.assert_array_equal(back.scene.world_bounds,
                                      ck.scene.world_bounds)

        for (na, a), (nb, b) in zip(back.ntd.named_arrays(),
                                    ck.ntd.named_arrays()):
            assert na == nb
            np.testing.assert_array_equal(a, b)
        assert back.ntd.pe_bands_x == ck.ntd.pe_bands_x
        assert back.ntd.L == ck.ntd.L

        assert back.trajectory.tag == "original"
        assert back.trajectory.timesteps == [0, 1]
        np.testing.assert_array_equal(back.trajectory.poses[1].R,
                                      ck.trajectory.poses[1].R)
        assert back.calib == ck.calib
        assert back.step == 123
        assert back.meta["config"] == {"total_steps": 500}

        np.testing.assert_array_equal(
            back.opt_state.m["ground.rotations"],
            ck.opt_state.m["ground.rotations"])
        assert back.opt_state.t["ground.rotations"] == 1

    def test_ground_positions_bitwise(self, tmp_path):
        # the freeze rule depends on save/load not perturbing a single bit
        rng = np.random.default_rng(1)
        ck = make_checkpoint(rng)
        p1 = tmp_path / "a.ply"
        p2 = tmp_path / "b.ply"
        save_checkpoint(p1, ck)
        mid = load_checkpoint(p1)
        save_checkpoint(p2, mid)
        final = load_checkpoint(p2)
        assert np.array_equal(final.scene.ground.positions.tobytes(),
                              ck.scene.ground.positions.tobytes())

    def test_optimizer_optional(self, tmp_path):
        rng = np.random.default_rng(2)
        ck = make_checkpoint(rng, with_opt=False)
        save_checkpoint(tmp_path / "m.ply", ck)
        back = load_checkpoint(tmp_path / "m.ply")
        assert back.opt_state is None

    def test_camera_at(self, tmp_path):
        rng = np.random.default_rng(3)
        ck = make_checkpoint(rng)
        cam = ck.camera_at(1)
        assert cam.fx == 60.0 and cam.width == 64
        np.testing.assert_array_equal(cam.R, ck.trajectory.poses[1].R)

    def test_not_a_checkpoint(self, tmp_path):
        from splatdrive.ply import write_ply
        rec = np.zeros(3, dtype=[("x", "<f8")])
        path = tmp_path / "points.ply"
        write_ply(path, [("vertex", rec)])
        with pytest.raises(InvalidInputError):
            load_checkpoint(path)
