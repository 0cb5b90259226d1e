import numpy as np
import pytest

import squasplat as sq
from squasplat import io
from squasplat.core import EMPTY_LABEL
from squasplat.metrics import default_rayset
from squasplat.temporal import FramePose
from squasplat.viewgeom import CameraModel
from conftest import random_scene


def make_doc(rng):
    spec = sq.GridSpec([-3, -3, -1], [3, 3, 2], (24, 24, 12))
    cfg = sq.FieldConfig(lam=0.9, cutoff=0.02)
    cl = sq.make_cluster(rng.normal(size=3), rng.normal(size=(3, 3)),
                         rng.normal(size=(3, 4)), rng.uniform(0.2, 1, (3, 3)),
                         rng.uniform(0.3, 1.5, (3, 2)), rng.uniform(0, 1, 3),
                         rng.dirichlet(np.ones(4)))
    return io.SceneDocument(spec, cfg, ["a", "b", "c", "d"],
                            superquadrics=random_scene(rng, 5),
                            clusters=[cl])


class TestSceneFile:
    def test_round_trip_byte_identical(self, rng, tmp_path):
        doc = make_doc(rng)
        p1 = tmp_path / "scene.json"
        p2 = tmp_path / "scene2.json"
        io.save_scene(p1, doc)
        io.save_scene(p2, io.load_scene(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_expand_order(self, rng):
        doc = make_doc(rng)
        scene = doc.expand()
        assert len(scene) == 5 + 3
        np.testing.assert_allclose(scene[0].center, doc.superquadrics[0].center)
        np.testing.assert_allclose(
            scene[5].center,
            doc.clusters[0].ref_point + doc.clusters[0].offsets[0])

    def test_values_survive(self, rng, tmp_path):
        doc = make_doc(rng)
        p = tmp_path / "scene.json"
        io.save_scene(p, doc)
        back = io.load_scene(p)
        assert back.field_cfg.lam == doc.field_cfg.lam
        assert back.grid == doc.grid
        for a, b in zip(doc.expand(), back.expand()):
            np.testing.assert_array_equal(a.center, b.center)
            np.testing.assert_array_equal(a.rotation, b.rotation)
            np.testing.assert_array_equal(a.sem, b.sem)


class TestGridFile:
    def test_round_trip_byte_identical(self, rng, tmp_path, small_spec, cfg):
        grid = sq.splat_tiled(random_scene(rng, 20), small_spec, cfg)
        for full_prob in (False, True):
            p1 = tmp_path / f"g{full_prob}.sqvg"
            p2 = tmp_path / f"g2{full_prob}.sqvg"
            io.save_grid(p1, io.GridFile.from_voxel_grid(grid, full_prob))
            io.save_grid(p2, io.load_grid(p1))
            assert p1.read_bytes() == p2.read_bytes()

    def test_labels_and_occ_survive(self, rng, tmp_path, small_spec, cfg):
        grid = sq.splat_tiled(random_scene(rng, 20), small_spec, cfg)
        p = tmp_path / "g.sqvg"
        io.save_grid(p, grid)
        back = io.load_grid(p)
        np.testing.assert_array_equal(back.labels, grid.labels())
        np.testing.assert_array_equal(back.occ, grid.occ.astype(np.float32))
        assert back.spec == grid.spec

    def test_one_hot_semantics_without_prob_block(self, tmp_path, small_spec):
        v = small_spec.num_voxels
        occ = np.zeros(v)
        occ[3] = 0.9
        sem = np.full((v, 3), 1 / 3)
        sem[3] = [0.1, 0.2, 0.7]
        p = tmp_path / "g.sqvg"
        io.save_grid(p, sq.VoxelGrid(small_spec, occ, sem))
        vg = io.load_grid(p).voxel_grid()
        np.testing.assert_array_equal(vg.sem[3], [0, 0, 1])
        assert vg.labels()[3] == 2
        assert vg.labels()[0] == EMPTY_LABEL

    def test_prob_block_flag(self, rng, tmp_path, small_spec, cfg):
        grid = sq.splat_tiled(random_scene(rng, 8), small_spec, cfg)
        p = tmp_path / "g.sqvg"
        io.save_grid(p, io.GridFile.from_voxel_grid(grid, full_prob=True))
        back = io.load_grid(p)
        assert back.probs is not None
        np.testing.assert_array_equal(back.probs, grid.sem.astype(np.float32))

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.sqvg"
        p.write_bytes(b"NOPE" + b"\0" * 100)
        with pytest.raises(ValueError):
            io.load_grid(p)


class TestOtherFormats:
    def test_rig_round_trip(self, rng, tmp_path):
        cams = [CameraModel(100.0, 110.0, 32.0, 24.0, 64, 48,
                            FramePose(rng.normal(size=4), rng.normal(size=3)))
                for _ in range(3)]
        p1 = tmp_path / "rig.json"
        p2 = tmp_path / "rig2.json"
        io.save_rig(p1, cams)
        io.save_rig(p2, io.load_rig(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_stream_round_trip(self, rng, tmp_path):
        frames = [(FramePose(rng.normal(size=4), rng.normal(size=3), float(t)),
                   f"scene_{t}.json") for t in range(3)]
        p1 = tmp_path / "stream.json"
        io.save_stream(p1, frames)
        back = io.load_stream(p1)
        p2 = tmp_path / "stream2.json"
        io.save_stream(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_plane_round_trip(self, rng, tmp_path):
        from squasplat.viewgeom import FeaturePlane
        plane = FeaturePlane(rng.normal(size=(3, 6, 9)).astype(np.float32))
        p1 = tmp_path / "p.sqpl"
        p2 = tmp_path / "p2.sqpl"
        io.save_plane(p1, plane)
        io.save_plane(p2, io.load_plane(p1))
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(io.load_plane(p1).values,
                                      plane.values.astype(np.float64))

    def test_rayset_generated_round_trip(self, tmp_path):
        rs = default_rayset(origin=(0, 0, 1.5), n_azimuth=36,
                            elevations_deg=(-5.0, 0.0, 5.0))
        p1 = tmp_path / "rays.json"
        p2 = tmp_path / "rays2.json"
        io.save_rayset(p1, rs)
        back = io.load_rayset(p1)
        io.save_rayset(p2, back)
        assert p1.read_bytes() == p2.read_bytes()
        assert len(back) == len(rs)
        np.testing.assert_allclose(back.rays[7].direction, rs.rays[7].direction)

    def test_rayset_explicit_rays_round_trip(self, rng, tmp_path):
        from squasplat.metrics import Ray, RaySet
        dirs = rng.normal(size=(5, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rs = RaySet([Ray(rng.normal(size=3), d) for d in dirs])
        p1 = tmp_path / "rays.json"
        p2 = tmp_path / "rays2.json"
        io.save_rayset(p1, rs)
        io.save_rayset(p2, io.load_rayset(p1))
        assert p1.read_bytes() == p2.read_bytes()
