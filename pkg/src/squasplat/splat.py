"""Scene-to-grid splatting: conservative primitive bounds, tile binning,
the voxel-level reference path, the tile-table path, and the benchmark
harness comparing them.

Both paths compute the identical function (cutoff contributions are exact
zeros and per-voxel combination runs in ascending primitive id), so their
grids are bit-identical; the tile path just reaches the contributing
(voxel, primitive) pairs through the sorted pair table instead of
per-voxel matching.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .core import FieldConfig, GridSpec, Superquadric, VoxelGrid
from .field import finalize_field


@dataclass(frozen=True)
class Aabb:
    """World-frame axis-aligned box."""

    min: np.ndarray
    max: np.ndarray


@dataclass
class SceneArrays:
    """Packed per-primitive arrays shared by all kernels."""

    cen: np.ndarray        # (M, 3)
    quat: np.ndarray       # (M, 4)
    rot: np.ndarray        # (M, 9) row-major local->world matrices
    scl: np.ndarray        # (M, 3)
    ex: np.ndarray         # (M, 3) exponents (2/eps2, eps2/eps1, 2/eps1)
    eps: np.ndarray        # (M, 2)
    sig: np.ndarray        # (M,)
    sem: np.ndarray        # (M, C)
    aabb_lo: np.ndarray    # (M, 3)
    aabb_hi: np.ndarray    # (M, 3)
    cbox: np.ndarray | None = None   # (M, 6) int32 voxel box of contained centers

    @property
    def num_primitives(self) -> int:
        return self.cen.shape[0]


def _quat_to_mats(quat):
    w, x, y, z = quat[:, 0], quat[:, 1], quat[:, 2], quat[:, 3]
    return np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=1)


def _world_extents(rot, scl, eps, cfg: FieldConfig):
    """Conservative world half-extents of the region where occupancy can
    reach the cutoff: solve exp(-lam*F) = t for the level value F, bound
    each local axis by s_i * F^(eps/2) over both exponent paths, then
    rotate the box."""
    f_level = np.log(1.0 / cfg.cutoff) / cfg.lam
    f1 = f_level ** (eps[:, 0] / 2.0)
    f2 = f_level ** (eps[:, 1] / 2.0)
    fxy = np.maximum(f1, f2)
    e_loc = np.stack([scl[:, 0] * fxy, scl[:, 1] * fxy, scl[:, 2] * f1], axis=1)
    r = np.abs(rot.reshape(-1, 3, 3))
    return np.einsum("mij,mj->mi", r, e_loc)


def extent_bound(sq: Superquadric, cfg: FieldConfig) -> Aabb:
    """World AABB containing every point where the primitive's occupancy
    reaches cfg.cutoff."""
    quat = sq.rotation[None, :]
    rot = _quat_to_mats(quat)
    ext = _world_extents(rot, sq.scale[None, :], sq.eps[None, :], cfg)[0]
    return Aabb(sq.center - ext, sq.center + ext)


def build_scene_arrays(scene, cfg: FieldConfig, spec: GridSpec | None = None) -> SceneArrays:
    m = len(scene)
    if m == 0:
        z3 = np.zeros((0, 3))
        arrs = SceneArrays(z3, np.zeros((0, 4)), np.zeros((0, 9)), z3.copy(),
                           z3.copy(), np.zeros((0, 2)), np.zeros(0),
                           np.zeros((0, 1)), z3.copy(), z3.copy())
        if spec is not None:
            arrs.cbox = np.zeros((0, 6), dtype=np.int32)
        return arrs
    cen = np.ascontiguousarray([s.center for s in scene])
    quat = np.ascontiguousarray([s.rotation for s in scene])
    scl = np.ascontiguousarray([s.scale for s in scene])
    eps = np.ascontiguousarray([s.eps for s in scene])
    sig = np.ascontiguousarray([s.sigma for s in scene], dtype=np.float64)
    sem = np.ascontiguousarray([s.sem for s in scene])
    rot = np.ascontiguousarray(_quat_to_mats(quat))
    ex = np.ascontiguousarray(np.stack([2.0 / eps[:, 1],
                                        eps[:, 1] / eps[:, 0],
                                        2.0 / eps[:, 0]], axis=1))
    ext = _world_extents(rot, scl, eps, cfg)
    arrs = SceneArrays(cen, quat, rot, scl, ex, eps, sig, sem,
                       np.ascontiguousarray(cen - ext),
                       np.ascontiguousarray(cen + ext))
    if spec is not None:
        arrs.cbox = _center_boxes(arrs, spec)
    return arrs


def _center_boxes(arrs: SceneArrays, spec: GridSpec) -> np.ndarray:
    """Integer voxel box per primitive holding every voxel whose center
    lies inside the AABB; empty boxes encode as lo > hi."""
    h = spec.voxel_size
    n = np.array(spec.resolution)
    lo = np.ceil((arrs.aabb_lo - spec.lower) / h - 0.5).astype(np.int64)
    hi = np.floor((arrs.aabb_hi - spec.lower) / h - 0.5).astype(np.int64)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, n - 1)
    empty = (lo > hi).any(axis=1)
    lo[empty] = 1
    hi[empty] = 0
    return np.ascontiguousarray(np.concatenate([lo, hi], axis=1), dtype=np.int32)


@dataclass
class TilePairTable:
    """Sorted (tile_id, sq_id) overlap pairs plus per-tile ranges.

    ranges has one entry per tile plus a terminator; tile t's pairs live in
    [ranges[t], ranges[t+1]). Pairs are sorted by (tile_id, sq_id) and a
    primitive appears only in tiles its AABB overlaps.
    """

    tile_size: int
    num_tiles: tuple           # (ntx, nty, ntz)
    pair_tile: np.ndarray      # (P,) int64
    pair_sq: np.ndarray        # (P,) int64
    ranges: np.ndarray         # (T+1,) int64

    @property
    def num_tiles_total(self) -> int:
        ntx, nty, ntz = self.num_tiles
        return ntx * nty * ntz

    @property
    def num_pairs(self) -> int:
        return int(self.pair_sq.shape[0])

    def pairs(self) -> np.ndarray:
        return np.stack([self.pair_tile, self.pair_sq], axis=1)


def _table_from_arrays(arrs: SceneArrays, spec: GridSpec, tile_size: int) -> TilePairTable:
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    n = np.array(spec.resolution)
    nt = (n + tile_size - 1) // tile_size
    tw = spec.voxel_size * tile_size
    m = arrs.num_primitives
    if m == 0:
        return TilePairTable(tile_size, tuple(int(v) for v in nt),
                             np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                             np.zeros(int(np.prod(nt)) + 1, dtype=np.int64))
    # Geometric overlap with half-open tile cells, clamped to the grid;
    # primitives whose AABB misses the grid emit nothing.
    t0 = np.floor((arrs.aabb_lo - spec.lower) / tw).astype(np.int64)
    t1 = np.floor((arrs.aabb_hi - spec.lower) / tw).astype(np.int64)
    outside = ((arrs.aabb_hi < spec.lower) | (arrs.aabb_lo > spec.upper)).any(axis=1)
    t0 = np.maximum(t0, 0)
    t1 = np.minimum(t1, nt - 1)
    bad = outside | (t0 > t1).any(axis=1)
    counts = np.where(bad, 0, (t1 - t0 + 1).prod(axis=1))
    total = int(counts.sum())
    keys = np.empty(total, dtype=np.int64)
    off = 0
    ntx, nty = int(nt[0]), int(nt[1])
    for i in range(m):
        c = int(counts[i])
        if c == 0:
            continue
        txs = np.arange(t0[i, 0], t1[i, 0] + 1)
        tys = np.arange(t0[i, 1], t1[i, 1] + 1)
        tzs = np.arange(t0[i, 2], t1[i, 2] + 1)
        tid = (txs[None, None, :] + ntx * (tys[None, :, None] + nty * tzs[:, None, None]))
        keys[off:off + c] = tid.ravel() * m + i
        off += c
    keys = np.sort(keys)
    pair_tile = keys // m
    pair_sq = keys % m
    ranges = np.searchsorted(pair_tile, np.arange(int(np.prod(nt)) + 1)).astype(np.int64)
    return TilePairTable(tile_size, tuple(int(v) for v in nt),
                         np.ascontiguousarray(pair_tile),
                         np.ascontiguousarray(pair_sq),
                         np.ascontiguousarray(ranges))


def build_tile_table(scene, spec: GridSpec, cfg: FieldConfig,
                     tile_size: int = 4) -> TilePairTable:
    """Bin primitive AABBs into cubic tiles of tile_size^3 voxels and sort."""
    arrs = build_scene_arrays(scene, cfg, spec)
    return _table_from_arrays(arrs, spec, tile_size)


def _grid_tuple(spec: GridSpec):
    nx, ny, nz = spec.resolution
    return (np.ascontiguousarray(spec.lower), np.ascontiguousarray(spec.voxel_size),
            nx, ny, nz)


def _alloc(spec: GridSpec, c: int):
    v = spec.num_voxels
    return np.ones(v), np.zeros((v, c)), np.zeros(v)


def _num_classes(scene, num_classes):
    if scene:
        return scene[0].num_classes
    if num_classes is None:
        raise ValueError("empty scene needs num_classes")
    return num_classes


def _finish(spec, acc, num, den) -> VoxelGrid:
    p_occ, p_sem = finalize_field(acc, num, den)
    return VoxelGrid(spec, p_occ, p_sem)


def splat_naive(scene, spec: GridSpec, cfg: FieldConfig,
                workers=None, num_classes=None) -> VoxelGrid:
    """Voxel-level reference splat: every voxel center evaluates all
    primitives whose extent bound contains it, cutoff applied."""
    c = _num_classes(scene, num_classes)
    arrs = build_scene_arrays(scene, cfg, spec)
    acc, num, den = _alloc(spec, c)
    if arrs.num_primitives:
        backend.active_lane().splat_scan(arrs, _grid_tuple(spec), cfg.lam,
                                         cfg.cutoff, acc, num, den, workers)
    return _finish(spec, acc, num, den)


def splat_tiled(scene, spec: GridSpec, cfg: FieldConfig, tile_size: int = 4,
                workers=None, num_classes=None, table=None) -> VoxelGrid:
    """Tile-binned splat; bit-identical to splat_naive by construction."""
    c = _num_classes(scene, num_classes)
    arrs = build_scene_arrays(scene, cfg, spec)
    if table is None:
        table = _table_from_arrays(arrs, spec, tile_size)
    acc, num, den = _alloc(spec, c)
    if arrs.num_primitives:
        backend.active_lane().splat_tiled(arrs, _grid_tuple(spec), cfg.lam,
                                          cfg.cutoff, table, acc, num, den,
                                          workers)
    return _finish(spec, acc, num, den)


@dataclass
class BenchReport:
    """Latency and pair-table statistics for one scene/grid combination."""

    grid: tuple
    num_primitives: int
    tile_size: int
    workers: int
    repeats: int
    entries: list = field(default_factory=list)   # per (lane, path) rows
    pair_count_voxel_level: int = 0
    pair_count_tile_level: int = 0
    outputs_equal: bool = True

    def speedup(self, lane: str) -> float:
        med = {e["path"]: e["median_ms"] for e in self.entries if e["lane"] == lane}
        if "naive" in med and "tiled" in med and med["tiled"] > 0:
            return med["naive"] / med["tiled"]
        return float("nan")

    def to_dict(self) -> dict:
        lanes = sorted({e["lane"] for e in self.entries})
        return {
            "grid": list(self.grid),
            "num_primitives": self.num_primitives,
            "tile_size": self.tile_size,
            "workers": self.workers,
            "repeats": self.repeats,
            "pair_count_voxel_level": self.pair_count_voxel_level,
            "pair_count_tile_level": self.pair_count_tile_level,
            "pair_ratio": (self.pair_count_voxel_level / self.pair_count_tile_level
                           if self.pair_count_tile_level else None),
            "outputs_equal": self.outputs_equal,
            "entries": self.entries,
            "speedup": {lane: self.speedup(lane) for lane in lanes},
        }

    def to_text(self) -> str:
        lines = [
            f"grid {self.grid[0]}x{self.grid[1]}x{self.grid[2]}  "
            f"primitives {self.num_primitives}  tile_size {self.tile_size}  "
            f"workers {self.workers}  repeats {self.repeats}",
            f"pair count voxel-level {self.pair_count_voxel_level}  "
            f"tile-level {self.pair_count_tile_level}",
            f"outputs equal: {self.outputs_equal}",
        ]
        for e in self.entries:
            lines.append(f"{e['lane']:>8} {e['path']:>6}  median {e['median_ms']:10.2f} ms"
                         f"  pair_count {e['pair_count']}")
        for lane in sorted({e["lane"] for e in self.entries}):
            lines.append(f"{lane} speedup naive/tiled: {self.speedup(lane):.2f}x")
        return "\n".join(lines) + "\n"


def bench_splat(scene, spec: GridSpec, cfg: FieldConfig, repeats: int = 5,
                tile_size: int = 4, workers=None, lanes=None) -> BenchReport:
    """Median wall-clock of both splat paths plus binning statistics.

    Timed regions: the scan kernel for the naive path; table construction
    plus the tiled kernel for the tile path (binning is part of that
    algorithm). Grids are re-verified bit-equal between paths every run.
    """
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    if lanes is None:
        lanes = [backend.active_lane().name]
    workers = backend.resolve_workers(workers)
    c = _num_classes(scene, None)
    report = BenchReport(grid=spec.resolution, num_primitives=len(scene),
                         tile_size=tile_size, workers=workers, repeats=repeats)
    arrs = build_scene_arrays(scene, cfg, spec)
    report.pair_count_voxel_level = _table_from_arrays(arrs, spec, 1).num_pairs
    report.pair_count_tile_level = _table_from_arrays(arrs, spec, tile_size).num_pairs
    grid = _grid_tuple(spec)

    previous = backend.active_lane().name
    try:
        for lane_name in lanes:
            lane = backend.set_backend(lane_name)
            times = {"naive": [], "tiled": []}
            for _ in range(repeats):
                acc1, num1, den1 = _alloc(spec, c)
                t0 = time.perf_counter()
                lane.splat_scan(arrs, grid, cfg.lam, cfg.cutoff,
                                acc1, num1, den1, workers)
                times["naive"].append((time.perf_counter() - t0) * 1e3)

                acc2, num2, den2 = _alloc(spec, c)
                t0 = time.perf_counter()
                table = _table_from_arrays(arrs, spec, tile_size)
                lane.splat_tiled(arrs, grid, cfg.lam, cfg.cutoff, table,
                                 acc2, num2, den2, workers)
                times["tiled"].append((time.perf_counter() - t0) * 1e3)

                if not (np.array_equal(acc1, acc2) and np.array_equal(num1, num2)
                        and np.array_equal(den1, den2)):
                    report.outputs_equal = False
            report.entries.append({
                "lane": lane_name, "path": "naive",
                "median_ms": float(np.median(times["naive"])),
                "runs_ms": [float(t) for t in times["naive"]],
                "pair_count": report.pair_count_voxel_level,
            })
            report.entries.append({
                "lane": lane_name, "path": "tiled",
                "median_ms": float(np.median(times["tiled"])),
                "runs_ms": [float(t) for t in times["tiled"]],
                "pair_count": report.pair_count_tile_level,
            })
    finally:
        backend.set_backend(previous)
    return report
