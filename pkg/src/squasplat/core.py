"""Domain types for superquadric scenes, voxel grids and field configuration.

All types are immutable value objects after construction (arrays are marked
read-only) and safe to share across parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Squareness exponents are clamped to this range: exponents 2/eps blow up
# numerically below it, and values above 2 produce concave shapes.
EPS_RANGE = (0.1, 2.0)

# With lambda = ln 2 the occupancy probability is exactly 0.5 on the
# superquadric surface, where the inside-outside function equals 1.
LAMBDA_DEFAULT = math.log(2.0)
CUTOFF_DEFAULT = 0.01

SCALE_FLOOR = 1e-9

EMPTY_LABEL = -1  # in-memory empty-class sentinel; files use 0xFFFF


def _ro(a, dtype=np.float64):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {name}: {arr!r}")


def _unit_quat(rot):
    """Unit-length w>=0 quaternion; vectors already inside the invariant
    tolerance pass through bit-unchanged so normalization is exactly
    idempotent."""
    n = np.linalg.norm(rot)
    if n == 0.0:
        raise ValueError("zero quaternion")
    if abs(n - 1.0) > 1e-9:
        rot = rot / n
    if rot[0] < 0.0:
        rot = -rot
    return rot


def _unit_simplex(sem):
    if np.any(sem < 0.0):
        sem = np.clip(sem, 0.0, None)
    s = sem.sum()
    if s <= 0.0:
        raise ValueError("semantics sum to zero")
    if abs(s - 1.0) > 1e-9:
        sem = sem / s
    return sem


@dataclass(frozen=True)
class Superquadric:
    """One posed primitive: pose, scale, squareness, opacity and semantics."""

    center: np.ndarray       # (3,) meters
    rotation: np.ndarray     # (4,) unit quaternion, (w, x, y, z), w >= 0
    scale: np.ndarray        # (3,) meters, strictly positive
    eps: np.ndarray          # (2,) squareness, inside EPS_RANGE
    sigma: float             # opacity in [0, 1]
    sem: np.ndarray          # (C,) probability vector

    @property
    def num_classes(self) -> int:
        return self.sem.shape[0]

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)


def normalize(sq: Superquadric, eps_range=EPS_RANGE) -> Superquadric:
    """Return a copy of ``sq`` with every type invariant enforced.

    Idempotent: quaternion scaled to unit length with w >= 0, squareness
    clamped into ``eps_range``, scale floored at a tiny positive value,
    opacity clamped to [0, 1], semantics clipped to >= 0 and renormalized.
    Raises ValueError on non-finite inputs or all-zero semantics.
    """
    center = np.asarray(sq.center, dtype=np.float64).reshape(3)
    rot = np.asarray(sq.rotation, dtype=np.float64).reshape(4)
    scale = np.asarray(sq.scale, dtype=np.float64).reshape(3)
    eps = np.asarray(sq.eps, dtype=np.float64).reshape(2)
    sem = np.asarray(sq.sem, dtype=np.float64).reshape(-1)
    for name, arr in (("center", center), ("rotation", rot), ("scale", scale),
                      ("eps", eps), ("sigma", sq.sigma), ("sem", sem)):
        _check_finite(name, arr)

    rot = _unit_quat(rot)
    scale = np.maximum(scale, SCALE_FLOOR)
    eps = np.clip(eps, eps_range[0], eps_range[1])
    sigma = min(max(float(sq.sigma), 0.0), 1.0)
    sem = _unit_simplex(sem)
    return Superquadric(_ro(center), _ro(rot), _ro(scale), _ro(eps), sigma, _ro(sem))


@dataclass(frozen=True)
class SuperquadricCluster:
    """K-member local cluster: shared semantics, per-member pose/shape,
    member k centered at ref_point + offsets[k]."""

    ref_point: np.ndarray    # (3,)
    offsets: np.ndarray      # (K, 3)
    rotations: np.ndarray    # (K, 4)
    scales: np.ndarray       # (K, 3)
    eps: np.ndarray          # (K, 2)
    sigmas: np.ndarray       # (K,)
    sem: np.ndarray          # (C,) shared across all members

    @property
    def num_members(self) -> int:
        return self.offsets.shape[0]


def make_cluster(ref_point, offsets, rotations, scales, eps, sigmas, sem,
                 eps_range=EPS_RANGE) -> SuperquadricCluster:
    """Build a validated cluster; member fields go through the same
    normalization rules as ``normalize``."""
    ref_point = _ro(np.reshape(ref_point, (3,)))
    offsets = np.atleast_2d(np.asarray(offsets, dtype=np.float64))
    k = offsets.shape[0]
    rotations = np.asarray(rotations, dtype=np.float64).reshape(k, 4)
    scales = np.asarray(scales, dtype=np.float64).reshape(k, 3)
    eps_arr = np.asarray(eps, dtype=np.float64).reshape(k, 2)
    sigmas = np.asarray(sigmas, dtype=np.float64).reshape(k)
    sem = np.asarray(sem, dtype=np.float64).reshape(-1)
    for name, arr in (("ref_point", ref_point), ("offsets", offsets),
                      ("rotations", rotations), ("scales", scales),
                      ("eps", eps_arr), ("sigmas", sigmas), ("sem", sem)):
        _check_finite(name, arr)
    rotations = np.stack([_unit_quat(r) for r in rotations]) \
        if k else rotations.reshape(0, 4)
    scales = np.maximum(scales, SCALE_FLOOR)
    eps_arr = np.clip(eps_arr, eps_range[0], eps_range[1])
    sigmas = np.clip(sigmas, 0.0, 1.0)
    sem = _unit_simplex(sem)
    return SuperquadricCluster(ref_point, _ro(offsets), _ro(rotations),
                               _ro(scales), _ro(eps_arr), _ro(sigmas), _ro(sem))


def expand_cluster(cluster: SuperquadricCluster) -> list[Superquadric]:
    """Expand a cluster into its K member superquadrics.

    Every member holds a reference to the same shared semantics array.
    """
    out = []
    for k in range(cluster.num_members):
        out.append(Superquadric(
            center=_ro(cluster.ref_point + cluster.offsets[k]),
            rotation=cluster.rotations[k],
            scale=cluster.scales[k],
            eps=cluster.eps[k],
            sigma=float(cluster.sigmas[k]),
            sem=cluster.sem,
        ))
    return out


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix (local -> world) from a unit quaternion (w, x, y, z)."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b of two quaternions in (w, x, y, z) order."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_canonical(q) -> np.ndarray:
    return _unit_quat(np.asarray(q, dtype=np.float64))


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned voxel grid geometry: bounds in meters plus resolution."""

    lower: np.ndarray        # (3,)
    upper: np.ndarray        # (3,)
    resolution: tuple        # (nx, ny, nz)

    def __post_init__(self):
        object.__setattr__(self, "lower", _ro(np.reshape(self.lower, (3,))))
        object.__setattr__(self, "upper", _ro(np.reshape(self.upper, (3,))))
        object.__setattr__(self, "resolution", tuple(int(n) for n in self.resolution))
        if any(n <= 0 for n in self.resolution):
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if not np.all(self.upper > self.lower):
            raise ValueError("upper bound must exceed lower bound componentwise")

    @classmethod
    def occ3d(cls) -> "GridSpec":
        """Occ3D geometry: [-40,40] x [-40,40] x [-1,5.4] m at 200x200x16."""
        return cls(np.array([-40.0, -40.0, -1.0]),
                   np.array([40.0, 40.0, 5.4]), (200, 200, 16))

    @classmethod
    def surroundocc(cls) -> "GridSpec":
        """SurroundOcc geometry: [-50,50] x [-50,50] x [-5,3] m at 200x200x16."""
        return cls(np.array([-50.0, -50.0, -5.0]),
                   np.array([50.0, 50.0, 3.0]), (200, 200, 16))

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.upper - self.lower) / np.array(self.resolution, dtype=np.float64)

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.resolution
        return nx * ny * nz

    def voxel_center(self, idx) -> np.ndarray:
        """World coordinates of voxel center(s); idx is (..., 3) integer."""
        idx = np.asarray(idx, dtype=np.float64)
        return self.lower + (idx + 0.5) * self.voxel_size

    def world_to_voxel(self, p) -> np.ndarray:
        """Integer voxel index containing world point(s) p (may be out of range)."""
        p = np.asarray(p, dtype=np.float64)
        return np.floor((p - self.lower) / self.voxel_size).astype(np.int64)

    def all_centers_flat(self) -> np.ndarray:
        """(V, 3) voxel centers in x-fastest flat order."""
        nx, ny, nz = self.resolution
        ix = np.arange(nx)
        iy = np.arange(ny)
        iz = np.arange(nz)
        gx, gy, gz = np.meshgrid(ix, iy, iz, indexing="ij")
        idx = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3, order="C")
        # x-fastest: flat id v = ix + nx*(iy + ny*iz)
        flat = idx[:, 0] + nx * (idx[:, 1] + ny * idx[:, 2])
        out = np.empty((self.num_voxels, 3))
        out[flat] = self.voxel_center(idx)
        return out

    def flat_index(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        nx, ny, _ = self.resolution
        return idx[..., 0] + nx * (idx[..., 1] + ny * idx[..., 2])

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper)
                and self.resolution == other.resolution)


@dataclass(frozen=True)
class FieldConfig:
    """Occupancy field shape: decay temperature and the hard cutoff below
    which a primitive's contribution is treated as exactly zero."""

    lam: float = LAMBDA_DEFAULT
    cutoff: float = CUTOFF_DEFAULT

    def __post_init__(self):
        if not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not (0.0 < self.cutoff < 1.0):
            raise ValueError(f"cutoff must lie in (0, 1), got {self.cutoff}")


@dataclass
class VoxelGrid:
    """Dense semantic occupancy: per-voxel p_occ plus a class probability
    vector, stored flat in x-fastest order (v = ix + nx*(iy + ny*iz)).

    Field math runs in fp64; the on-disk format quantizes to fp32.
    """

    spec: GridSpec
    occ: np.ndarray          # (V,) fp64
    sem: np.ndarray          # (V, C) fp64

    @classmethod
    def empty(cls, spec: GridSpec, num_classes: int) -> "VoxelGrid":
        v = spec.num_voxels
        occ = np.zeros(v)
        sem = np.full((v, num_classes), 1.0 / num_classes)
        return cls(spec, occ, sem)

    @property
    def num_classes(self) -> int:
        return self.sem.shape[1]

    def occ3d(self) -> np.ndarray:
        """(nx, ny, nz) view of p_occ."""
        nx, ny, nz = self.spec.resolution
        return self.occ.reshape(nz, ny, nx).transpose(2, 1, 0)

    def labels(self, occ_threshold: float = 0.5) -> np.ndarray:
        """(V,) class ids; EMPTY_LABEL where p_occ < occ_threshold.

        Argmax ties resolve to the lowest class id.
        """
        lab = np.argmax(self.sem, axis=1).astype(np.int32)
        lab[self.occ < occ_threshold] = EMPTY_LABEL
        return lab

    def o_vec(self) -> np.ndarray:
        """(V, C+1) stacked [p_occ * p_sem ; 1 - p_occ] per voxel."""
        return np.concatenate([self.occ[:, None] * self.sem,
                               (1.0 - self.occ)[:, None]], axis=1)

    def normalization_error(self) -> float:
        """Max deviation of p_occ * sum(p_sem) + (1 - p_occ) from 1."""
        total = self.occ * self.sem.sum(axis=1) + (1.0 - self.occ)
        return float(np.abs(total - 1.0).max())
