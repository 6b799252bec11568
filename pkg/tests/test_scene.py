import numpy as np
import pytest

from splatdrive.errors import (
    InvalidInputError,
    MissingPoseError,
    SegmentationFailedError,
)
from splatdrive.gauss import Gaussian3D, build_covariance, quat_to_rotmat
from splatdrive.gset import GaussianGrads, GaussianSet
from splatdrive.lidar_depth import LidarFrame
from splatdrive.scene import (
    BACKGROUND,
    GROUND,
    OBJECT,
    ObjectModel,
    ObjectTrack,
    SceneInitConfig,
    SceneModel,
    Trajectory,
    assemble_frame,
    dynamic_mask_for_frame,
    init_scene,
    object_to_world,
    segment_ground,
    segment_ground_mask,
    split_frame_grads,
    transform_set,
    transform_set_backward,
    voxel_downsample,
)
from splatdrive.se3 import RigidPose, rotation_about_z


def plane_cloud(rng, n, extent=10.0, noise=0.0):
    pts = np.zeros((n, 3))
    pts[:, 0] = rng.uniform(-extent, extent, n)
    pts[:, 1] = rng.uniform(-extent, extent, n)
    if noise:
        pts[:, 2] = rng.normal(0.0, noise, n)
    return pts


class TestSegmentGround:
    def test_separable_plane(self):
        rng = np.random.default_rng(0)
        plane = plane_cloud(rng, 400)
        high = plane_cloud(rng, 10)
        high[:, 2] = 5.0
        pts = np.concatenate([plane, high])
        ground, nonground = segment_ground(pts)
        assert len(ground) == 400
        assert len(nonground) == 10
        assert np.abs(ground[:, 2]).max() <= 0.15 + 1e-12
        assert np.all(nonground[:, 2] == 5.0)

    def test_noisy_plane_monte_carlo(self):
        # >= 99% of sigma=0.02 plane points recovered at tau=0.1, 100 seeds
        hit_rates = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            plane = plane_cloud(rng, 300, noise=0.02)
            walls = rng.uniform([-10, -10, 1.0], [10, 10, 6.0], (60, 3))
            pts = np.concatenate([plane, walls])
            mask, _ = segment_ground_mask(pts, tau_g=0.1, seed=seed)
            hit_rates.append(mask[:300].mean())
        assert np.mean(hit_rates) >= 0.99
        assert min(hit_rates) >= 0.97

    def test_collinear_points_fail(self):
        t = np.linspace(0, 1, 80)
        pts = np.stack([t, 2 * t, 3 * t], axis=1)
        with pytest.raises(SegmentationFailedError):
            segment_ground(pts)

    def test_too_few_points(self):
        with pytest.raises(InvalidInputError):
            segment_ground(np.zeros((20, 3)))

    def test_no_dominant_plane(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-10, 10, (500, 3))  # volumetric, no 20% plane
        with pytest.raises(SegmentationFailedError):
            segment_ground(pts, tau_g=0.01)


class TestVoxelDownsample:
    def test_keeps_first_per_voxel(self):
        pts = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [1.5, 0.0, 0.0]])
        cols = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        out_p, out_c = voxel_downsample(pts, cols, 1.0)
        np.testing.assert_array_equal(out_p, [[0.1, 0.1, 0.1], [1.5, 0.0, 0.0]])
        np.testing.assert_array_equal(out_c, [[1, 0, 0], [0, 0, 1]])

    def test_disabled(self):
        pts = np.random.default_rng(0).normal(size=(10, 3))
        out_p, _ = voxel_downsample(pts, np.zeros((10, 3)), 0.0)
        assert out_p is pts


def make_object_track(tid="car", t0=0, t1=1):
    poses = {
        t0: RigidPose(np.eye(3), np.array([5.0, 0.0, 0.5])),
        t1: RigidPose(rotation_about_z(0.3), np.array([7.0, 1.0, 0.5])),
    }
    return ObjectTrack(tid, np.array([4.0, 2.0, 1.5]), poses)


class TestObjectToWorld:
    def g(self):
        rng = np.random.default_rng(3)
        return Gaussian3D(
            position=np.array([0.5, -0.2, 0.3]),
            rotation=rng.normal(size=4),
            log_scale=np.array([-1.0, -0.5, -2.0]),
            opacity_logit=0.3,
            sh_coeffs=rng.normal(size=(4, 3)),
        )

    def test_identity_pose(self):
        g = self.g()
        out = object_to_world(g, np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(out.position, g.position)
        np.testing.assert_allclose(out.rotation, g.rotation, atol=1e-15)
        np.testing.assert_array_equal(out.log_scale, g.log_scale)
        np.testing.assert_array_equal(out.sh_coeffs, g.sh_coeffs)

    def test_pure_translation(self):
        g = self.g()
        out = object_to_world(g, np.eye(3), np.array([0.0, 0.0, 10.0]))
        np.testing.assert_allclose(out.position, g.position + [0, 0, 10], atol=1e-15)
        np.testing.assert_allclose(out.rotation, g.rotation, atol=1e-15)

    def test_covariance_conjugation_oracle(self):
        # Sigma_world = R Sigma_local R^T
        rng = np.random.default_rng(5)
        for _ in range(20):
            g = Gaussian3D(rng.normal(size=3), rng.normal(size=4),
                           rng.normal(0, 0.5, 3), 0.0, np.zeros((1, 3)))
            q = rng.normal(size=4)
            R = quat_to_rotmat(q / np.linalg.norm(q))
            out = object_to_world(g, R, rng.normal(size=3))
            want = R @ build_covariance(g.rotation, g.log_scale) @ R.T
            got = build_covariance(out.rotation, out.log_scale)
            np.testing.assert_allclose(got, want, atol=1e-6)

    def test_transform_set_matches_single(self):
        rng = np.random.default_rng(7)
        gs = GaussianSet(
            rng.normal(size=(6, 3)),
            rng.normal(size=(6, 4)),
            rng.normal(size=(6, 3)),
            rng.normal(size=6),
            rng.normal(size=(6, 4, 3)))
        gs.normalize_rotations()
        pose = RigidPose(rotation_about_z(0.7), np.array([1.0, -2.0, 0.3]))
        batched = transform_set(gs, pose)
        for i in range(6):
            single = object_to_world(gs.gaussian(i), pose.R, pose.t)
            np.testing.assert_allclose(batched.positions[i], single.position,
                                       atol=1e-14)
            np.testing.assert_allclose(batched.rotations[i], single.rotation,
                                       atol=1e-14)

    def test_transform_backward_fd(self):
        rng = np.random.default_rng(9)
        gs = GaussianSet(
            rng.normal(size=(4, 3)), rng.normal(size=(4, 4)),
            rng.normal(size=(4, 3)), rng.normal(size=4),
            rng.normal(size=(4, 1, 3)))
        gs.normalize_rotations()
        pose = RigidPose(rotation_about_z(-0.4), np.array([0.5, 1.5, -0.2]))
        up = GaussianGrads(
            rng.normal(size=(4, 3)), rng.normal(size=(4, 4)),
            rng.normal(size=(4, 3)), rng.normal(size=4),
            rng.normal(size=(4, 1, 3)))

        def loss(g):
            w = transform_set(g, pose)
            return float((w.positions * up.positions).sum()
                         + (w.rotations * up.rotations).sum()
                         + (w.log_scales * up.log_scales).sum()
                         + (w.opacity_logits * up.opacity_logits).sum()
                         + (w.sh_coeffs * up.sh_coeffs).sum())

        ana = transform_set_backward(gs, pose, up)
        step = 1e-6
        for name in ["positions", "rotations", "log_scales", "opacity_logits"]:
            arr = getattr(gs, name)
            for ix in np.ndindex(arr.shape):
                arr[ix] += step
                lp = loss(gs)
                arr[ix] -= 2 * step
                lm = loss(gs)
                arr[ix] += step
                num = (lp - lm) / (2 * step)
                assert float(getattr(ana, name)[ix]) == pytest.approx(
                    num, rel=1e-5, abs=1e-8), (name, ix)


def synthetic_frames(rng, n_frames=3, track=None):
    frames = []
    for t in range(n_frames):
        plane = plane_cloud(rng, 250, extent=12.0, noise=0.01)
        walls = np.zeros((80, 3))
        walls[:, 0] = rng.uniform(-12, 12, 80)
        walls[:, 1] = np.where(rng.uniform(size=80) < 0.5, -12.0, 12.0)
        walls[:, 2] = rng.uniform(0.5, 4.0, 80)
        pts = [plane, walls]
        if track is not None and t in track.poses:
            local = rng.uniform(-0.5, 0.5, (40, 3)) * track.dims * 0.9
            pts.append(track.pose_at(t).transform(local))
        frames.append(LidarFrame(np.concatenate(pts), t))
    return frames


class TestInitScene:
    def cfg(self, **kw):
        defaults = dict(extra_random_points=50, sh_degree=1, seed=0,
                        ransac_iterations=200)
        defaults.update(kw)
        return SceneInitConfig(**defaults)

    def test_ground_count_matches_segmentation(self):
        rng = np.random.default_rng(11)
        frames = synthetic_frames(rng, n_frames=2)
        cfg = self.cfg()
        scene = init_scene(frames, [], cfg)
        all_pts = np.concatenate([f.points for f in frames])
        mask, _ = segment_ground_mask(all_pts, cfg.tau_ground,
                                      cfg.ransac_iterations,
                                      cfg.min_inlier_fraction, cfg.seed)
        assert len(scene.ground) == mask.sum()
        assert scene.objects == []
        assert len(scene.background) == (~mask).sum() + 50

    def test_every_point_lands_somewhere(self):
        # partition: ground + background(static) + object points = input
        rng = np.random.default_rng(13)
        track = make_object_track()
        frames = synthetic_frames(rng, n_frames=2, track=track)
        cfg = self.cfg(extra_random_points=0)
        scene = init_scene(frames, [track], cfg)
        total_in = sum(len(f.points) for f in frames)
        total_out = (len(scene.ground) + len(scene.background)
                     + len(scene.objects[0].gaussians))
        assert total_out == total_in

    def test_object_local_fusion_consistent(self):
        # the same rigid body sampled at two timesteps must fuse to
        # overlapping local clouds
        rng = np.random.default_rng(17)
        # box floats well above the plane so no plane point is claimed
        track = ObjectTrack(
            "car", np.array([4.0, 2.0, 1.5]),
            {0: RigidPose(np.eye(3), np.array([5.0, 0.0, 3.0])),
             1: RigidPose(rotation_about_z(0.3), np.array([7.0, 1.0, 3.0]))})
        local_body = rng.uniform(-0.5, 0.5, (60, 3)) * track.dims * 0.9

        frames = []
        for t in (0, 1):
            plane = plane_cloud(rng, 300, noise=0.005)
            world_obj = track.pose_at(t).transform(local_body)
            frames.append(LidarFrame(np.concatenate([plane, world_obj]), t))
        scene = init_scene(frames, [track], self.cfg(extra_random_points=0))
        got = scene.objects[0].gaussians.positions
        assert len(got) == 120
        # both halves must be the same local cloud
        np.testing.assert_allclose(got[:60], local_body, atol=1e-6)
        np.testing.assert_allclose(got[60:], local_body, atol=1e-6)

    def test_object_opacity_and_scale_defaults(self):
        rng = np.random.default_rng(19)
        frames = synthetic_frames(rng)
        scene = init_scene(frames, [], self.cfg())
        from splatdrive.gauss import sigmoid
        np.testing.assert_allclose(sigmoid(scene.ground.opacity_logits), 0.1,
                                   atol=1e-12)
        assert np.all(np.isfinite(scene.ground.log_scales))
        assert scene.world_bounds.shape == (2, 3)
        assert np.all(scene.world_bounds[0] < scene.world_bounds[1])

    def test_no_frames(self):
        with pytest.raises(InvalidInputError):
            init_scene([], [], self.cfg())


class TestTrajectory:
    def test_validation(self):
        p = RigidPose.identity()
        Trajectory([0, 1, 2], [p, p, p], "original")
        with pytest.raises(InvalidInputError):
            Trajectory([0, 1, 1], [p, p, p], "original")
        with pytest.raises(InvalidInputError):
            Trajectory([], [], "original")
        with pytest.raises(InvalidInputError):
            Trajectory([0], [p], "weird")

    def test_pose_lookup(self):
        p0 = RigidPose.identity()
        p1 = RigidPose(np.eye(3), np.array([1.0, 0, 0]))
        tr = Trajectory([3, 7], [p0, p1], "novel")
        assert tr.pose_at(7) is p1
        with pytest.raises(MissingPoseError):
            tr.pose_at(5)


def tiny_scene(rng, n_ground=100, n_bg=200, n_obj=50):
    def mk(n, z):
        q = np.zeros((n, 4))
        q[:, 0] = 1.0
        return GaussianSet(
            rng.normal([0, 0, z], 1.0, (n, 3)), q,
            np.full((n, 3), -2.0), np.zeros(n), rng.normal(0, 0.2, (n, 1, 3)))

    poses = {0: RigidPose(np.eye(3), np.array([2.0, 0, 0])),
             1: RigidPose(rotation_about_z(0.5), np.array([3.0, 1.0, 0]))}
    obj = ObjectModel("car", mk(n_obj, 0.5), poses)
    bounds = np.array([[-10.0, -10.0, -1.0], [10.0, 10.0, 5.0]])
    return SceneModel(mk(n_ground, 0.0), mk(n_bg, 2.0), [obj], bounds)


class TestAssembleFrame:
    def test_counts_and_order(self):
        scene = tiny_scene(np.random.default_rng(23))
        asm = assemble_frame(scene, 0)
        assert len(asm.gaussians) == 350
        assert (asm.component[:100] == GROUND).all()
        assert (asm.component[100:300] == BACKGROUND).all()
        assert (asm.component[300:] == OBJECT).all()
        assert (asm.object_index[300:] == 0).all()
        np.testing.assert_array_equal(asm.source_row[300:], np.arange(50))

    def test_static_parts_bitwise_across_timesteps(self):
        scene = tiny_scene(np.random.default_rng(29))
        a0 = assemble_frame(scene, 0)
        a1 = assemble_frame(scene, 1)
        assert np.array_equal(a0.gaussians.positions[:300],
                              a1.gaussians.positions[:300])
        assert np.array_equal(a0.gaussians.rotations[:300],
                              a1.gaussians.rotations[:300])
        assert not np.array_equal(a0.gaussians.positions[300:],
                                  a1.gaussians.positions[300:])

    def test_missing_pose(self):
        scene = tiny_scene(np.random.default_rng(31))
        with pytest.raises(MissingPoseError):
            assemble_frame(scene, 5)

    def test_object_matches_eq2_per_gaussian(self):
        scene = tiny_scene(np.random.default_rng(37), n_ground=60, n_bg=60,
                           n_obj=10)
        asm = assemble_frame(scene, 1)
        pose = scene.objects[0].poses[1]
        for i in range(10):
            g = object_to_world(scene.objects[0].gaussians.gaussian(i),
                                pose.R, pose.t)
            np.testing.assert_allclose(asm.gaussians.positions[120 + i],
                                       g.position, atol=1e-14)
            np.testing.assert_allclose(asm.gaussians.rotations[120 + i],
                                       g.rotation, atol=1e-14)

    def test_gradient_routing_round_trip(self):
        # a gradient written at flat row k must reach exactly the source
        # Gaussian that produced row k
        rng = np.random.default_rng(41)
        scene = tiny_scene(rng, n_ground=5, n_bg=4, n_obj=3)
        asm = assemble_frame(scene, 0)
        n = len(asm.gaussians)
        flat = GaussianGrads.zeros_like(asm.gaussians)
        k_ground, k_bg, k_obj = 2, 5 + 1, 5 + 4 + 2
        flat.opacity_logits[k_ground] = 1.0
        flat.opacity_logits[k_bg] = 2.0
        flat.opacity_logits[k_obj] = 3.0
        flat.log_scales[k_obj] = [1.0, 2.0, 3.0]
        split = split_frame_grads(scene, asm, flat)
        assert split.ground.opacity_logits[2] == 1.0
        assert split.ground.opacity_logits.sum() == 1.0
        assert split.background.opacity_logits[1] == 2.0
        assert split.background.opacity_logits.sum() == 2.0
        assert split.objects[0].opacity_logits[2] == 3.0
        np.testing.assert_array_equal(split.objects[0].log_scales[2],
                                      [1.0, 2.0, 3.0])

    def test_object_grads_pulled_to_local_frame(self):
        # end-to-end FD: loss on assembled world params vs local gradients
        rng = np.random.default_rng(43)
        scene = tiny_scene(rng, n_ground=3, n_bg=2, n_obj=4)
        obj = scene.objects[0]
        obj.gaussians.rotations[:] = rng.normal(size=(4, 4))
        obj.gaussians.normalize_rotations()
        up_pos = rng.normal(size=(9, 3))
        up_rot = rng.normal(size=(9, 4))

        def loss():
            asm = assemble_frame(scene, 1)
            return float((asm.gaussians.positions * up_pos).sum()
                         + (asm.gaussians.rotations * up_rot).sum())

        asm = assemble_frame(scene, 1)
        flat = GaussianGrads.zeros_like(asm.gaussians)
        flat.positions[:] = up_pos
        flat.rotations[:] = up_rot
        split = split_frame_grads(scene, asm, flat)
        step = 1e-6
        for name in ["positions", "rotations"]:
            arr = getattr(obj.gaussians, name)
            ana = getattr(split.objects[0], name)
            for ix in np.ndindex(arr.shape):
                arr[ix] += step
                lp = loss()
                arr[ix] -= 2 * step
                lm = loss()
                arr[ix] += step
                assert float(ana[ix]) == pytest.approx(
                    (lp - lm) / (2 * step), rel=1e-5, abs=1e-8), (name, ix)


class TestDynamicMask:
    def test_membership(self):
        track = make_object_track()
        pts = np.array([
            [5.0, 0.0, 0.5],    # box center at t=0
            [5.0, 0.0, 5.0],    # above the box
            [0.0, 0.0, 0.0],    # far away
        ])
        mask = dynamic_mask_for_frame([track], pts, 0)
        np.testing.assert_array_equal(mask, [True, False, False])

    def test_no_pose_no_claim(self):
        track = make_object_track()
        pts = np.array([[5.0, 0.0, 0.5]])
        mask = dynamic_mask_for_frame([track], pts, 9)
        np.testing.assert_array_equal(mask, [False])
