"""File formats: JSON scene documents, the binary SQVG grid format,
camera rigs, frame streams and ray sets.

Writers are canonical (sorted keys, repr floats, fixed layout), so
write -> read -> write round-trips byte-identically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import (EMPTY_LABEL, FieldConfig, GridSpec, Superquadric,
                   SuperquadricCluster, VoxelGrid, expand_cluster,
                   make_cluster, normalize)
from .metrics import LabelGrid, Ray, RaySet, default_rayset
from .temporal import FramePose

GRID_MAGIC = b"SQVG"
PLANE_MAGIC = b"SQPL"
GRID_VERSION = 1
SCENE_VERSION = 1
EMPTY_FILE_LABEL = 0xFFFF


def _floats(arr):
    return [float(v) for v in np.asarray(arr).ravel()]


def _mat(arr):
    return [[float(v) for v in row] for row in np.asarray(arr)]


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def write_json(path, obj):
    with open(path, "w") as f:
        f.write(dump_json(obj))


@dataclass
class SceneDocument:
    """A full scene: grid geometry, field configuration, class names and
    the primitive/cluster arrays."""

    grid: GridSpec
    field_cfg: FieldConfig
    class_names: list
    superquadrics: list = field(default_factory=list)
    clusters: list = field(default_factory=list)
    version: int = SCENE_VERSION

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def expand(self) -> list:
        """Flat primitive list: standalone superquadrics first, then each
        cluster's members in order. Positions define primitive ids."""
        out = list(self.superquadrics)
        for cl in self.clusters:
            out.extend(expand_cluster(cl))
        return out


def _sq_to_dict(s: Superquadric) -> dict:
    return {
        "center": _floats(s.center),
        "rotation": _floats(s.rotation),
        "scale": _floats(s.scale),
        "eps": _floats(s.eps),
        "sigma": float(s.sigma),
        "sem": _floats(s.sem),
    }


def _sq_from_dict(d: dict) -> Superquadric:
    return normalize(Superquadric(
        np.array(d["center"]), np.array(d["rotation"]), np.array(d["scale"]),
        np.array(d["eps"]), float(d["sigma"]), np.array(d["sem"])))


def _cluster_to_dict(c: SuperquadricCluster) -> dict:
    return {
        "ref_point": _floats(c.ref_point),
        "offsets": _mat(c.offsets),
        "rotations": _mat(c.rotations),
        "scales": _mat(c.scales),
        "eps": _mat(c.eps),
        "sigmas": _floats(c.sigmas),
        "sem": _floats(c.sem),
    }


def _cluster_from_dict(d: dict) -> SuperquadricCluster:
    return make_cluster(np.array(d["ref_point"]), np.array(d["offsets"]),
                        np.array(d["rotations"]), np.array(d["scales"]),
                        np.array(d["eps"]), np.array(d["sigmas"]),
                        np.array(d["sem"]))


def scene_to_dict(doc: SceneDocument) -> dict:
    return {
        "version": doc.version,
        "grid": {
            "lower": _floats(doc.grid.lower),
            "upper": _floats(doc.grid.upper),
            "resolution": list(doc.grid.resolution),
        },
        "field": {"lambda": float(doc.field_cfg.lam),
                  "cutoff": float(doc.field_cfg.cutoff)},
        "num_classes": len(doc.class_names),
        "classes": list(doc.class_names),
        "superquadrics": [_sq_to_dict(s) for s in doc.superquadrics],
        "clusters": [_cluster_to_dict(c) for c in doc.clusters],
    }


def scene_from_dict(d: dict) -> SceneDocument:
    grid = GridSpec(np.array(d["grid"]["lower"]), np.array(d["grid"]["upper"]),
                    tuple(d["grid"]["resolution"]))
    cfg = FieldConfig(lam=float(d["field"]["lambda"]),
                      cutoff=float(d["field"]["cutoff"]))
    if "num_classes" in d and d["num_classes"] != len(d["classes"]):
        raise ValueError("num_classes disagrees with the class name list")
    return SceneDocument(
        grid=grid, field_cfg=cfg, class_names=list(d["classes"]),
        superquadrics=[_sq_from_dict(s) for s in d.get("superquadrics", [])],
        clusters=[_cluster_from_dict(c) for c in d.get("clusters", [])],
        version=int(d["version"]))


def save_scene(path, doc: SceneDocument):
    write_json(path, scene_to_dict(doc))


def load_scene(path) -> SceneDocument:
    with open(path) as f:
        return scene_from_dict(json.load(f))


@dataclass
class GridFile:
    """On-disk grid content: fp32 occupancy, uint16-backed labels and an
    optional full-probability block. Keeping the stored labels (instead of
    re-deriving them from quantized occupancy) makes round-trips exact."""

    spec: GridSpec
    occ: np.ndarray            # (V,) float32
    labels: np.ndarray         # (V,) int32, EMPTY_LABEL for empty
    num_classes: int
    probs: np.ndarray | None = None   # (V, C) float32

    @classmethod
    def from_voxel_grid(cls, grid: VoxelGrid, full_prob: bool = False) -> "GridFile":
        probs = grid.sem.astype(np.float32) if full_prob else None
        return cls(grid.spec, grid.occ.astype(np.float32), grid.labels(),
                   grid.num_classes, probs)

    def voxel_grid(self) -> VoxelGrid:
        """fp64 in-memory form; semantics come from the probability block
        when present, otherwise one-hot labels (uniform where empty)."""
        occ = self.occ.astype(np.float64)
        if self.probs is not None:
            sem = self.probs.astype(np.float64)
        else:
            v = self.spec.num_voxels
            sem = np.full((v, self.num_classes), 1.0 / self.num_classes)
            occupied = self.labels != EMPTY_LABEL
            sem[occupied] = 0.0
            sem[occupied, self.labels[occupied]] = 1.0
        return VoxelGrid(self.spec, occ, sem)

    def label_grid(self) -> LabelGrid:
        return LabelGrid(self.spec, self.labels, self.num_classes)


def save_grid(path, grid) -> None:
    """Write the binary SQVG format; accepts a VoxelGrid or a GridFile."""
    gf = grid if isinstance(grid, GridFile) else GridFile.from_voxel_grid(grid)
    nx, ny, nz = gf.spec.resolution
    flags = 1 if gf.probs is not None else 0
    header = GRID_MAGIC + struct.pack(
        "<6I6d", GRID_VERSION, nx, ny, nz, gf.num_classes, flags,
        *[float(v) for v in gf.spec.lower], *[float(v) for v in gf.spec.upper])
    labels16 = gf.labels.astype(np.int64)
    labels16 = np.where(labels16 == EMPTY_LABEL, EMPTY_FILE_LABEL, labels16)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(gf.occ, dtype="<f4").tobytes())
        f.write(labels16.astype("<u2").tobytes())
        if gf.probs is not None:
            f.write(np.ascontiguousarray(gf.probs, dtype="<f4").tobytes())


def load_grid(path) -> GridFile:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != GRID_MAGIC:
        raise ValueError(f"{path}: not a SQVG grid file")
    version, nx, ny, nz, c, flags = struct.unpack_from("<6I", raw, 4)
    if version != GRID_VERSION:
        raise ValueError(f"{path}: unsupported grid version {version}")
    bounds = struct.unpack_from("<6d", raw, 4 + 24)
    off = 4 + 24 + 48
    v = nx * ny * nz
    spec = GridSpec(np.array(bounds[:3]), np.array(bounds[3:]), (nx, ny, nz))
    occ = np.frombuffer(raw, dtype="<f4", count=v, offset=off).copy()
    off += 4 * v
    labels16 = np.frombuffer(raw, dtype="<u2", count=v, offset=off).astype(np.int64)
    off += 2 * v
    labels = np.where(labels16 == EMPTY_FILE_LABEL, EMPTY_LABEL, labels16).astype(np.int32)
    probs = None
    if flags & 1:
        probs = np.frombuffer(raw, dtype="<f4", count=v * c, offset=off).reshape(v, c).copy()
    return GridFile(spec, occ, labels, int(c), probs)


def rig_to_dict(cams) -> dict:
    return {"version": 1, "cameras": [{
        "fx": float(c.fx), "fy": float(c.fy), "cx": float(c.cx), "cy": float(c.cy),
        "width": int(c.width), "height": int(c.height),
        "rotation": _floats(c.ego_to_cam.rotation),
        "translation": _floats(c.ego_to_cam.translation),
    } for c in cams]}


def rig_from_dict(d: dict) -> list:
    from .viewgeom import CameraModel

    cams = []
    for c in d["cameras"]:
        cams.append(CameraModel(
            fx=float(c["fx"]), fy=float(c["fy"]), cx=float(c["cx"]),
            cy=float(c["cy"]), width=int(c["width"]), height=int(c["height"]),
            ego_to_cam=FramePose(np.array(c["rotation"]), np.array(c["translation"]))))
    return cams


def save_rig(path, cams):
    write_json(path, rig_to_dict(cams))


def load_rig(path) -> list:
    with open(path) as f:
        return rig_from_dict(json.load(f))


def stream_to_dict(frames) -> dict:
    """frames: list of (FramePose, scene_path)."""
    return {"version": 1, "frames": [{
        "timestamp": float(pose.timestamp),
        "rotation": _floats(pose.rotation),
        "translation": _floats(pose.translation),
        "scene": str(scene_path),
    } for pose, scene_path in frames]}


def save_stream(path, frames):
    write_json(path, stream_to_dict(frames))


def load_stream(path):
    with open(path) as f:
        d = json.load(f)
    out = []
    for fr in d["frames"]:
        pose = FramePose(np.array(fr["rotation"]), np.array(fr["translation"]),
                         float(fr.get("timestamp", 0.0)))
        out.append((pose, fr["scene"]))
    return out


def save_plane(path, plane) -> None:
    """Binary feature plane: magic, uint32 (C, H, W), fp32 values."""
    c, h, w = plane.values.shape
    with open(path, "wb") as f:
        f.write(PLANE_MAGIC + struct.pack("<3I", c, h, w))
        f.write(np.ascontiguousarray(plane.values, dtype="<f4").tobytes())


def load_plane(path):
    from .viewgeom import FeaturePlane

    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != PLANE_MAGIC:
        raise ValueError(f"{path}: not a SQPL plane file")
    c, h, w = struct.unpack_from("<3I", raw, 4)
    vals = np.frombuffer(raw, dtype="<f4", count=c * h * w, offset=16)
    return FeaturePlane(vals.reshape(c, h, w).astype(np.float64))


def rayset_to_dict(rs: RaySet) -> dict:
    if rs.params:
        return {"version": 1, **rs.params}
    return {"version": 1, "rays": [{
        "origin": _floats(r.origin), "direction": _floats(r.direction)
    } for r in rs.rays]}


def load_rayset(path) -> RaySet:
    with open(path) as f:
        d = json.load(f)
    if "rays" in d:
        rays = [Ray(np.array(r["origin"]), np.array(r["direction"]))
                for r in d["rays"]]
        return RaySet(rays, {})
    return default_rayset(origin=tuple(d["origin"]),
                          n_azimuth=int(d["n_azimuth"]),
                          elevations_deg=tuple(d["elevations_deg"]))


def save_rayset(path, rs: RaySet):
    write_json(path, rayset_to_dict(rs))
