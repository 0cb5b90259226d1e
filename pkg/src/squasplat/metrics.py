"""Occupancy evaluation: voxel IoU/mIoU from exact confusion counts and
ray-cast RayIoU at distance thresholds.

The ray protocol here is a documented stand-in (origin near the ego
position, fixed azimuth/elevation fan); scores are comparable between
grids evaluated with the same ray set, not with published benchmarks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import EMPTY_LABEL, GridSpec, VoxelGrid


@dataclass
class LabelGrid:
    """Per-voxel class ids in x-fastest flat order; EMPTY_LABEL marks
    unoccupied voxels."""

    spec: GridSpec
    labels: np.ndarray       # (V,) int32
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32).reshape(-1)
        if self.labels.shape[0] != self.spec.num_voxels:
            raise ValueError("label count does not match the grid spec")

    @classmethod
    def from_voxel_grid(cls, grid: VoxelGrid, occ_threshold: float = 0.5) -> "LabelGrid":
        return cls(grid.spec, grid.labels(occ_threshold), grid.num_classes)

    def labels3d(self) -> np.ndarray:
        nx, ny, nz = self.spec.resolution
        return self.labels.reshape(nz, ny, nx).transpose(2, 1, 0)


def confusion(pred: LabelGrid, gt: LabelGrid):
    """Exact voxel counts: per-class (TP, FP, FN) plus the binary
    occupied-vs-empty triple."""
    if pred.spec != gt.spec:
        raise ValueError("grid specs do not match")
    if pred.num_classes != gt.num_classes:
        raise ValueError("class counts do not match")
    c = pred.num_classes
    p, g = pred.labels, gt.labels
    tp = np.zeros(c, dtype=np.int64)
    fp = np.zeros(c, dtype=np.int64)
    fn = np.zeros(c, dtype=np.int64)
    for k in range(c):
        pk = p == k
        gk = g == k
        tp[k] = int(np.sum(pk & gk))
        fp[k] = int(np.sum(pk & ~gk))
        fn[k] = int(np.sum(~pk & gk))
    po = p != EMPTY_LABEL
    go = g != EMPTY_LABEL
    binary = (int(np.sum(po & go)), int(np.sum(po & ~go)), int(np.sum(~po & go)))
    return tp, fp, fn, binary


def _iou(tp, fp, fn):
    d = tp + fp + fn
    return tp / d if d else float("nan")


def iou_miou(pred: LabelGrid, gt: LabelGrid):
    """Occupied-vs-empty IoU and mean IoU over the nonempty classes.
    Classes absent from both grids (0/0) are excluded from the mean."""
    tp, fp, fn, (btp, bfp, bfn) = confusion(pred, gt)
    per_class = np.array([_iou(int(tp[k]), int(fp[k]), int(fn[k]))
                          for k in range(pred.num_classes)])
    present = ~np.isnan(per_class)
    miou = float(per_class[present].mean()) if present.any() else float("nan")
    return {
        "iou": _iou(btp, bfp, bfn),
        "per_class_iou": per_class,
        "miou": miou,
        "binary_confusion": (btp, bfp, bfn),
    }


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray    # unit

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass
class RaySet:
    """Rays plus the parameters that generated them."""

    rays: list
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rays)


def default_rayset(origin=(0.0, 0.0, 1.0), n_azimuth: int = 360,
                   elevations_deg=(-10.0, -5.0, 0.0, 5.0, 10.0)) -> RaySet:
    """Stand-in ray fan from the ego position: evenly spaced azimuths at a
    few elevation angles."""
    origin = np.asarray(origin, dtype=np.float64)
    rays = []
    for el_deg in elevations_deg:
        el = math.radians(el_deg)
        for a in range(n_azimuth):
            az = 2.0 * math.pi * a / n_azimuth
            d = np.array([math.cos(el) * math.cos(az),
                          math.cos(el) * math.sin(az),
                          math.sin(el)])
            rays.append(Ray(origin, d / np.linalg.norm(d)))
    return RaySet(rays, {"origin": list(map(float, origin)),
                         "n_azimuth": n_azimuth,
                         "elevations_deg": list(map(float, elevations_deg))})


def cast_ray(grid: LabelGrid, ray: Ray):
    """First non-empty voxel along the ray by integer voxel stepping.

    Returns (depth, class) with depth measured to the entry face of the
    hit voxel (0 when the origin already sits inside an occupied voxel),
    or None when the ray leaves the grid without a hit.
    """
    spec = grid.spec
    lo = spec.lower
    hi = spec.upper
    h = spec.voxel_size
    n = spec.resolution
    o = ray.origin
    d = ray.direction

    # slab clip to the grid
    t0, t1 = 0.0, math.inf
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < lo[a] or o[a] >= hi[a]:
                return None
            continue
        ta = (lo[a] - o[a]) / d[a]
        tb = (hi[a] - o[a]) / d[a]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t0 > t1:
        return None

    p0 = o + t0 * d
    idx = [int(min(max(math.floor((p0[a] - lo[a]) / h[a]), 0), n[a] - 1))
           for a in range(3)]
    step = [0, 0, 0]
    tmax = [math.inf, math.inf, math.inf]
    tdelta = [math.inf, math.inf, math.inf]
    for a in range(3):
        if d[a] > 0.0:
            step[a] = 1
            tmax[a] = t0 + (lo[a] + (idx[a] + 1) * h[a] - p0[a]) / d[a]
            tdelta[a] = h[a] / d[a]
        elif d[a] < 0.0:
            step[a] = -1
            tmax[a] = t0 + (lo[a] + idx[a] * h[a] - p0[a]) / d[a]
            tdelta[a] = -h[a] / d[a]

    nx, ny, _ = n
    t_enter = t0
    while True:
        v = idx[0] + nx * (idx[1] + ny * idx[2])
        lab = int(grid.labels[v])
        if lab != EMPTY_LABEL:
            return max(t_enter, 0.0), lab
        axis = int(np.argmin(tmax))
        t_enter = tmax[axis]
        if t_enter > t1:
            return None
        idx[axis] += step[axis]
        if idx[axis] < 0 or idx[axis] >= n[axis]:
            return None
        tmax[axis] += tdelta[axis]


def ray_iou(pred: LabelGrid, gt: LabelGrid, rays: RaySet,
            thresholds=(1.0, 2.0, 4.0)):
    """Ray-level scores: a ray is TP at a threshold when both grids hit
    with matching class and depth error within the threshold. When both
    hit but class or depth disagrees, the ray counts once as FN plus the
    prediction's hit as FP. Returns per-threshold scores and their mean.
    """
    if pred.spec != gt.spec:
        raise ValueError("grid specs do not match")
    if len(rays) == 0:
        raise ValueError("empty ray set")
    hits = []
    for ray in rays.rays:
        hits.append((cast_ray(pred, ray), cast_ray(gt, ray)))
    scores = {}
    for thr in thresholds:
        tp = fp = fn = 0
        for hp, hg in hits:
            if hp is None and hg is None:
                continue
            if hp is None:
                fn += 1
                continue
            if hg is None:
                fp += 1
                continue
            (dp, cp), (dg, cg) = hp, hg
            if cp == cg and abs(dp - dg) <= thr:
                tp += 1
            else:
                fp += 1
                fn += 1
        denom = tp + fp + fn
        scores[float(thr)] = tp / denom if denom else 1.0
    mean = float(np.mean(list(scores.values())))
    return {"per_threshold": scores, "mean": mean}
