"""Synthetic scene and target-grid generation for fitting and benchmarks.

Box-like targets are rasterized analytically: extents snap up to whole
voxels, so each axis occupies exactly ceil(extent / voxel) cells and the
occupied region is exact voxel membership with no field smoothing.
"""

from __future__ import annotations

import math

import numpy as np

from .core import (FieldConfig, GridSpec, Superquadric, VoxelGrid,
                   normalize)
from .io import GridFile, SceneDocument

GRID_PRESETS = {
    "occ3d": GridSpec.occ3d,
    "surroundocc": GridSpec.surroundocc,
    "cube16": lambda: GridSpec([-4.0] * 3, [4.0] * 3, (16, 16, 16)),
    "cube32": lambda: GridSpec([-4.0] * 3, [4.0] * 3, (32, 32, 32)),
    "cube64": lambda: GridSpec([-4.0] * 3, [4.0] * 3, (64, 64, 64)),
}


def grid_preset(name: str) -> GridSpec:
    if name not in GRID_PRESETS:
        raise ValueError(f"unknown grid preset {name!r}; "
                         f"choose from {sorted(GRID_PRESETS)}")
    return GRID_PRESETS[name]()


def default_class_names(c: int) -> list:
    return [f"class{k}" for k in range(c)]


def _voxel_box(spec: GridSpec, extent, anchor=None):
    """Integer voxel region of ceil(extent/voxel) cells per axis, centered
    in the grid unless an explicit integer anchor (lower corner) is given."""
    h = spec.voxel_size
    n = np.array(spec.resolution)
    k = np.ceil(np.asarray(extent, dtype=np.float64) / h - 1e-12).astype(np.int64)
    k = np.maximum(k, 1)
    if np.any(k > n):
        raise ValueError(f"extent {extent} exceeds the grid span")
    start = ((n - k) // 2) if anchor is None else np.asarray(anchor, dtype=np.int64)
    if np.any(start < 0) or np.any(start + k > n):
        raise ValueError("box region leaves the grid")
    return start, k


def _region_primitive(spec: GridSpec, start, k, class_id, num_classes) -> Superquadric:
    h = spec.voxel_size
    center = spec.lower + (start + k / 2.0) * h
    sem = np.zeros(num_classes)
    sem[class_id] = 1.0
    return normalize(Superquadric(
        center=center, rotation=np.array([1.0, 0.0, 0.0, 0.0]),
        scale=k * h / 2.0, eps=np.array([0.1, 0.1]), sigma=1.0, sem=sem))


def _grid_from_regions(spec: GridSpec, regions, class_id, num_classes) -> GridFile:
    nx, ny, nz = spec.resolution
    occ3 = np.zeros((nz, ny, nx))
    for start, k in regions:
        occ3[start[2]:start[2] + k[2], start[1]:start[1] + k[1],
             start[0]:start[0] + k[0]] = 1.0
    occ = occ3.ravel()
    sem = np.full((spec.num_voxels, num_classes), 1.0 / num_classes)
    inside = occ >= 0.5
    sem[inside] = 0.0
    sem[inside, class_id] = 1.0
    return GridFile.from_voxel_grid(VoxelGrid(spec, occ, sem))


def gen_box(spec: GridSpec, cfg: FieldConfig, extent, class_id: int,
            class_names) -> tuple:
    start, k = _voxel_box(spec, extent)
    sq = _region_primitive(spec, start, k, class_id, len(class_names))
    doc = SceneDocument(spec, cfg, class_names, superquadrics=[sq])
    return doc, _grid_from_regions(spec, [(start, k)], class_id, len(class_names))


def gen_l_shape(spec: GridSpec, cfg: FieldConfig, extent, extent2,
                class_id: int, class_names) -> tuple:
    """Union of two voxel-snapped boxes sharing a lower corner; occupied
    voxels = |A| + |B| - |A intersect B| by construction."""
    start_a, k_a = _voxel_box(spec, extent)
    _, k_b = _voxel_box(spec, extent2)
    n = np.array(spec.resolution)
    start_b = np.minimum(start_a, n - k_b)
    sq_a = _region_primitive(spec, start_a, k_a, class_id, len(class_names))
    sq_b = _region_primitive(spec, start_b, k_b, class_id, len(class_names))
    doc = SceneDocument(spec, cfg, class_names, superquadrics=[sq_a, sq_b])
    return doc, _grid_from_regions(spec, [(start_a, k_a), (start_b, k_b)],
                                   class_id, len(class_names))


def gen_random(spec: GridSpec, cfg: FieldConfig, n: int, seed: int,
               class_names, scale_base: float | None = None) -> tuple:
    """n primitives with seeded poses: centers uniform in bounds, random
    orientations, scales around twice the mean voxel size, interior
    squareness values, Dirichlet semantics."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    c = len(class_names)
    if scale_base is None:
        scale_base = 2.0 * float(spec.voxel_size.mean())
    sqs = []
    for _ in range(n):
        q = rng.normal(size=4)
        sqs.append(normalize(Superquadric(
            center=spec.lower + rng.random(3) * (spec.upper - spec.lower),
            rotation=q,
            scale=scale_base * (0.5 + rng.random(3)),
            eps=rng.uniform(0.3, 1.7, 2),
            sigma=rng.uniform(0.5, 1.0),
            sem=rng.dirichlet(np.ones(c)))))
    return SceneDocument(spec, cfg, class_names, superquadrics=sqs), None


def gen_ring(spec: GridSpec, cfg: FieldConfig, n: int, radius: float,
             class_names, class_id: int = 0) -> tuple:
    """n primitives evenly spaced on a circle, tangentially oriented."""
    span = spec.upper - spec.lower
    zc = float(spec.lower[2] + 0.5 * span[2])
    base = 2.0 * float(spec.voxel_size.mean())
    c = len(class_names)
    sem = np.zeros(c)
    sem[class_id] = 1.0
    sqs = []
    for i in range(n):
        th = 2.0 * math.pi * i / n
        yaw = np.array([math.cos(th / 2.0), 0.0, 0.0, math.sin(th / 2.0)])
        sqs.append(normalize(Superquadric(
            center=np.array([radius * math.cos(th), radius * math.sin(th), zc]),
            rotation=yaw,
            scale=np.array([1.5 * base, base, 0.8 * base]),
            eps=np.array([0.5, 1.0]),
            sigma=1.0, sem=sem)))
    return SceneDocument(spec, cfg, class_names, superquadrics=sqs), None


def gen_scene(kind: str, spec: GridSpec, cfg: FieldConfig, seed: int = 0,
              num_classes: int = 4, class_names=None, **params) -> tuple:
    """Dispatch to a generator; returns (SceneDocument, target GridFile or
    None). box and l-shape produce analytically rasterized targets."""
    names = class_names or default_class_names(num_classes)
    if kind == "box":
        return gen_box(spec, cfg, params.get("extent", (4.0, 8.0, 2.0)),
                       int(params.get("class_id", 1)), names)
    if kind == "l-shape":
        return gen_l_shape(spec, cfg, params.get("extent", (4.0, 2.0, 2.0)),
                           params.get("extent2", (2.0, 5.0, 2.0)),
                           int(params.get("class_id", 1)), names)
    if kind == "random":
        return gen_random(spec, cfg, int(params.get("n", 100)), seed, names,
                          params.get("scale_base"))
    if kind == "ring":
        return gen_ring(spec, cfg, int(params.get("n", 16)),
                        float(params.get("radius", 2.5)), names,
                        int(params.get("class_id", 0)))
    raise ValueError(f"unknown scene kind {kind!r}")
