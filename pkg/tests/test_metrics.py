import math

import numpy as np
import pytest

import squasplat as sq
from squasplat.core import EMPTY_LABEL
from squasplat.metrics import (LabelGrid, Ray, RaySet, cast_ray, confusion,
                               default_rayset, iou_miou, ray_iou)


def grid_from_labels3d(spec, lab3d, num_classes=3):
    flat = np.asarray(lab3d).transpose(2, 1, 0).ravel()
    return LabelGrid(spec, flat.astype(np.int32), num_classes)


def empty_grid(spec, num_classes=3):
    return LabelGrid(spec, np.full(spec.num_voxels, EMPTY_LABEL, np.int32),
                     num_classes)


@pytest.fixture
def spec8():
    return sq.GridSpec([0, 0, 0], [8, 8, 8], (8, 8, 8))


class TestConfusion:
    def test_identical_grids(self, spec8, rng):
        lab = rng.integers(-1, 3, spec8.num_voxels).astype(np.int32)
        g = LabelGrid(spec8, lab, 3)
        res = iou_miou(g, g)
        assert res["iou"] == 1.0
        assert res["miou"] == 1.0

    def test_all_empty_pred(self, spec8):
        gt = LabelGrid(spec8, np.zeros(spec8.num_voxels, np.int32), 3)
        res = iou_miou(empty_grid(spec8), gt)
        assert res["iou"] == 0.0

    def test_overlapping_boxes_counting_oracle(self, spec8):
        a3 = np.full((8, 8, 8), EMPTY_LABEL, np.int32)
        b3 = np.full((8, 8, 8), EMPTY_LABEL, np.int32)
        a3[0:4, 0:4, 0:4] = 1
        b3[2:6, 0:4, 0:4] = 1
        pred = grid_from_labels3d(spec8, a3)
        gt = grid_from_labels3d(spec8, b3)
        inter = 2 * 4 * 4
        union = 6 * 4 * 4
        res = iou_miou(pred, gt)
        assert res["iou"] == pytest.approx(inter / union)
        # brute-force voxel counting for class 1
        tp = int(np.sum((a3 == 1) & (b3 == 1)))
        fp = int(np.sum((a3 == 1) & (b3 != 1)))
        fn = int(np.sum((a3 != 1) & (b3 == 1)))
        assert res["per_class_iou"][1] == pytest.approx(tp / (tp + fp + fn))

    def test_swap_symmetry(self, spec8, rng):
        la = rng.integers(-1, 3, spec8.num_voxels).astype(np.int32)
        lb = rng.integers(-1, 3, spec8.num_voxels).astype(np.int32)
        a, b = LabelGrid(spec8, la, 3), LabelGrid(spec8, lb, 3)
        tp1, fp1, fn1, bin1 = confusion(a, b)
        tp2, fp2, fn2, bin2 = confusion(b, a)
        np.testing.assert_array_equal(tp1, tp2)
        np.testing.assert_array_equal(fp1, fn2)
        np.testing.assert_array_equal(fn1, fp2)
        assert iou_miou(a, b)["iou"] == iou_miou(b, a)["iou"]

    def test_absent_class_excluded_from_mean(self, spec8):
        lab = np.zeros(spec8.num_voxels, np.int32)        # only class 0 used
        g = LabelGrid(spec8, lab, 3)
        res = iou_miou(g, g)
        assert np.isnan(res["per_class_iou"][2])
        assert res["miou"] == 1.0

    def test_spec_mismatch(self, spec8):
        other = sq.GridSpec([0, 0, 0], [4, 4, 4], (4, 4, 4))
        with pytest.raises(ValueError):
            confusion(empty_grid(spec8), empty_grid(other))


def dense_marching_oracle(grid, ray, step_frac=0.01):
    """First-hit search by fine sampling along the ray."""
    spec = grid.spec
    h = float(spec.voxel_size.min()) * step_frac
    lab3 = grid.labels3d()
    span = float(np.linalg.norm(spec.upper - spec.lower))
    t = 0.0
    prev_idx = None
    while t <= 2 * span:
        p = ray.origin + t * ray.direction
        idx = spec.world_to_voxel(p)
        if np.all(idx >= 0) and np.all(idx < spec.resolution):
            lab = int(lab3[idx[0], idx[1], idx[2]])
            if lab != EMPTY_LABEL:
                return int(lab)
        t += h
    return None


class TestCastRay:
    def test_axis_aligned_entry_face_depth(self, spec8):
        lab3 = np.full((8, 8, 8), EMPTY_LABEL, np.int32)
        lab3[5, 2, 2] = 1
        g = grid_from_labels3d(spec8, lab3)
        hit = cast_ray(g, Ray([0.0, 2.5, 2.5], [1.0, 0.0, 0.0]))
        assert hit is not None
        depth, lab = hit
        assert lab == 1
        assert depth == pytest.approx(5.0, abs=1e-12)

    def test_empty_grid_misses(self, spec8):
        assert cast_ray(empty_grid(spec8), Ray([4.0, 4, 4], [1.0, 0, 0])) is None

    def test_origin_outside_never_entering(self, spec8):
        g = grid_from_labels3d(spec8, np.zeros((8, 8, 8), np.int32))
        assert cast_ray(g, Ray([-1.0, 4, 4], [-1.0, 0, 0])) is None

    def test_origin_inside_occupied_depth_zero(self, spec8):
        g = grid_from_labels3d(spec8, np.ones((8, 8, 8), np.int32))
        hit = cast_ray(g, Ray([4.0, 4, 4], [1.0, 0, 0]))
        assert hit == (0.0, 1)

    def test_diagonal_matches_dense_marching(self, spec8, rng):
        for trial in range(15):
            lab3 = np.full((8, 8, 8), EMPTY_LABEL, np.int32)
            occ = rng.random((8, 8, 8)) < 0.06
            lab3[occ] = rng.integers(0, 3, occ.sum())
            g = grid_from_labels3d(spec8, lab3)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            ray = Ray(rng.uniform(-2, 10, 3), d)
            got = cast_ray(g, ray)
            want_label = dense_marching_oracle(g, ray)
            if want_label is None:
                assert got is None
            else:
                assert got is not None and got[1] == want_label

    def test_unit_direction_required(self):
        with pytest.raises(ValueError):
            Ray([0.0, 0, 0], [1.0, 1.0, 0.0])


def single_ray_grids(depth_pred, depth_gt, cls_pred=1, cls_gt=1):
    """One +x ray; grids with 0.5 m voxels so entry-face depths land on
    half meters: voxel index ix has entry depth ix / 2."""
    spec = sq.GridSpec([0, 0, 0], [8, 8, 8], (16, 16, 16))
    a3 = np.full((16, 16, 16), EMPTY_LABEL, np.int32)
    b3 = np.full((16, 16, 16), EMPTY_LABEL, np.int32)
    a3[int(round(depth_pred * 2)), 8, 8] = cls_pred
    b3[int(round(depth_gt * 2)), 8, 8] = cls_gt
    return (grid_from_labels3d(spec, a3), grid_from_labels3d(spec, b3),
            RaySet([Ray([0.0, 4.25, 4.25], [1.0, 0, 0])]))


class TestRayIoU:
    def test_identical(self, spec8, rng):
        lab3 = np.full((8, 8, 8), EMPTY_LABEL, np.int32)
        occ = rng.random((8, 8, 8)) < 0.1
        lab3[occ] = rng.integers(0, 3, occ.sum())
        g = grid_from_labels3d(spec8, lab3)
        res = ray_iou(g, g, default_rayset(origin=(4, 4, 4), n_azimuth=60))
        assert all(v == 1.0 for v in res["per_threshold"].values())

    def test_all_empty_pred_zero(self, spec8):
        full = grid_from_labels3d(spec8, np.ones((8, 8, 8), np.int32))
        res = ray_iou(empty_grid(spec8), full,
                      default_rayset(origin=(4, 4, 4), n_azimuth=60))
        assert res["mean"] == 0.0

    def test_depth_error_hand_case(self):
        # 1.5 m depth error, matching class: TP at 2 m and 4 m, not 1 m;
        # the final score averages the three threshold values
        pred, gt, rays = single_ray_grids(4.5, 3.0)
        res = ray_iou(pred, gt, rays)
        assert res["per_threshold"] == {1.0: 0.0, 2.0: 1.0, 4.0: 1.0}
        assert res["mean"] == pytest.approx(2.0 / 3.0)

    def test_class_mismatch_counts_fp_and_fn(self):
        pred, gt, rays = single_ray_grids(3.0, 3.0, cls_pred=0, cls_gt=1)
        res = ray_iou(pred, gt, rays)
        # one ray: both hit, class mismatch -> tp=0, fp=1, fn=1 -> 0
        assert all(v == 0.0 for v in res["per_threshold"].values())

    def test_threshold_monotonicity_random(self, spec8, rng):
        rays = default_rayset(origin=(4, 4, 4), n_azimuth=40,
                              elevations_deg=(-10, 0, 10))
        for _ in range(10):
            la3 = np.full((8, 8, 8), EMPTY_LABEL, np.int32)
            lb3 = np.full((8, 8, 8), EMPTY_LABEL, np.int32)
            ma = rng.random((8, 8, 8)) < 0.15
            mb = rng.random((8, 8, 8)) < 0.15
            la3[ma] = rng.integers(0, 3, ma.sum())
            lb3[mb] = rng.integers(0, 3, mb.sum())
            a, b = grid_from_labels3d(spec8, la3), grid_from_labels3d(spec8, lb3)
            res = ray_iou(a, b, rays)
            s = res["per_threshold"]
            assert s[4.0] >= s[2.0] >= s[1.0]
            assert all(0.0 <= v <= 1.0 for v in s.values())

    def test_infinite_threshold_class_agnostic_hit_agreement(self, spec8, rng):
        """At threshold infinity with matching classes everywhere, the score
        equals hit/miss agreement."""
        la3 = np.full((8, 8, 8), EMPTY_LABEL, np.int32)
        lb3 = np.full((8, 8, 8), EMPTY_LABEL, np.int32)
        ma = rng.random((8, 8, 8)) < 0.2
        mb = rng.random((8, 8, 8)) < 0.2
        la3[ma] = 1
        lb3[mb] = 1
        a, b = grid_from_labels3d(spec8, la3), grid_from_labels3d(spec8, lb3)
        rays = default_rayset(origin=(4, 4, 4), n_azimuth=50)
        res = ray_iou(a, b, rays, thresholds=(math.inf,))
        tp = fp = fn = 0
        for ray in rays.rays:
            hp, hg = cast_ray(a, ray), cast_ray(b, ray)
            if hp and hg:
                tp += 1
            elif hp:
                fp += 1
            elif hg:
                fn += 1
        want = tp / (tp + fp + fn) if tp + fp + fn else 1.0
        assert res["per_threshold"][math.inf] == pytest.approx(want)

    def test_empty_rayset_error(self, spec8):
        with pytest.raises(ValueError):
            ray_iou(empty_grid(spec8), empty_grid(spec8), RaySet([]))
