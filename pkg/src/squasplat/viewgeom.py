"""View-centric sampling geometry: offset application, pinhole projection
with ego-motion compensation, bilinear feature sampling and hit-view
averaging with per-scale weights.

Feature planes here are synthetic test patterns; there is no image
ingestion. Border policy for bilinear sampling is clamp-to-edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .temporal import FramePose

Z_NEAR_DEFAULT = 1e-3


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics in pixels, rigid ego-to-camera transform
    and the image size the intrinsics refer to."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    ego_to_cam: FramePose

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")


def project(p, cam: CameraModel, z_near: float = Z_NEAR_DEFAULT):
    """Project an ego-frame point; returns (hit, uv). A point hits when its
    camera depth exceeds z_near and the pixel lands inside [0,W) x [0,H).
    A miss is a value, not an error."""
    pc = cam.ego_to_cam.apply(np.asarray(p, dtype=np.float64))
    z = pc[2]
    if z <= z_near:
        return False, np.array([np.nan, np.nan])
    u = cam.fx * pc[0] / z + cam.cx
    v = cam.fy * pc[1] / z + cam.cy
    hit = (0.0 <= u < cam.width) and (0.0 <= v < cam.height)
    return hit, np.array([u, v])


def unproject(uv, depth: float, cam: CameraModel) -> np.ndarray:
    """Inverse of project at a known camera depth; returns the ego point."""
    u, v = uv
    x = (u - cam.cx) / cam.fx * depth
    y = (v - cam.cy) / cam.fy * depth
    return cam.ego_to_cam.inverse().apply(np.array([x, y, depth]))


@dataclass(frozen=True)
class FeaturePlane:
    """One view's feature stack at one scale: values of shape (C, H, W)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"plane must be (C, H, W) with positive dims, got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]

    @property
    def size(self):
        return self.values.shape[2], self.values.shape[1]   # (W, H)


def bilinear(plane: FeaturePlane, uv) -> np.ndarray:
    """Bilinear sample at continuous pixel coordinates (u right, v down),
    pixel centers at integer coordinates, clamp-to-edge at borders."""
    vals = plane.values
    _, h, w = vals.shape
    u = min(max(float(uv[0]), 0.0), w - 1.0)
    v = min(max(float(uv[1]), 0.0), h - 1.0)
    x0 = int(np.floor(u))
    y0 = int(np.floor(v))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = u - x0
    fy = v - y0
    return ((1 - fx) * (1 - fy) * vals[:, y0, x0]
            + fx * (1 - fy) * vals[:, y0, x1]
            + (1 - fx) * fy * vals[:, y1, x0]
            + fx * fy * vals[:, y1, x1])


@dataclass(frozen=True)
class SampleSpec:
    """Reference point, sampling offsets and per-point per-scale weights
    (each row sums to 1 over scales)."""

    ref_point: np.ndarray    # (3,)
    offsets: np.ndarray      # (Ns, 3)
    weights: np.ndarray      # (Ns, L)

    def __post_init__(self):
        ref = np.asarray(self.ref_point, dtype=np.float64).reshape(3)
        off = np.atleast_2d(np.asarray(self.offsets, dtype=np.float64))
        w = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        if off.shape[0] != w.shape[0]:
            raise ValueError("offsets and weights disagree on the point count")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if not np.allclose(w.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("weights must sum to 1 over scales for each point")
        object.__setattr__(self, "ref_point", ref)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "weights", w)

    @property
    def num_points(self) -> int:
        return self.offsets.shape[0]

    @property
    def num_scales(self) -> int:
        return self.weights.shape[1]


def make_sample_points(spec: SampleSpec) -> np.ndarray:
    """Sampling points: reference point plus each offset."""
    return spec.ref_point[None, :] + spec.offsets


@dataclass
class FrameData:
    """One memory-queue entry: the ego-motion transform from the current
    frame into this frame, plus per-view multi-scale planes."""

    pose: FramePose
    planes: list            # planes[v][l] -> FeaturePlane


def sample_multiframe(spec: SampleSpec, frames: list[FrameData],
                      cams: list[CameraModel], z_near: float = Z_NEAR_DEFAULT):
    """Aggregate features for every (frame, sample point) pair.

    Each point transforms by the frame's ego-motion, projects into every
    camera, and hit views contribute their weight-mixed multi-scale
    bilinear samples; rows average over hit views. Rows order t-major,
    i-minor; a row with no hit view is zero and flagged False.

    Returns (features (T*Ns, C), hit_flags (T*Ns,)).
    """
    if not frames:
        raise ValueError("need at least one frame")
    pts = make_sample_points(spec)
    c = frames[0].planes[0][0].num_channels
    rows = np.zeros((len(frames) * spec.num_points, c))
    flags = np.zeros(len(frames) * spec.num_points, dtype=bool)
    for t, frame in enumerate(frames):
        if len(frame.planes) != len(cams):
            raise ValueError("frame planes and camera count disagree")
        for i in range(spec.num_points):
            p = frame.pose.apply(pts[i])
            acc = np.zeros(c)
            hits = 0
            for v, cam in enumerate(cams):
                hit, uv = project(p, cam, z_near)
                if not hit:
                    continue
                hits += 1
                scales = frame.planes[v]
                if len(scales) != spec.num_scales:
                    raise ValueError("plane scale count disagrees with weights")
                for l, plane in enumerate(scales):
                    w_l, h_l = plane.size
                    uv_l = np.array([uv[0] * w_l / cam.width,
                                     uv[1] * h_l / cam.height])
                    acc += spec.weights[i, l] * bilinear(plane, uv_l)
            row = t * spec.num_points + i
            if hits:
                rows[row] = acc / hits
                flags[row] = True
    return rows, flags


def make_plane(pattern: str, num_channels: int, height: int, width: int,
               scale_index: int = 0) -> FeaturePlane:
    """Synthetic test patterns: 'const' (channel index + 1), 'ramp'
    (u + v + channel), 'checker' (alternating 0/1 offset per channel)."""
    c = np.arange(num_channels, dtype=np.float64)[:, None, None]
    v = np.arange(height, dtype=np.float64)[None, :, None]
    u = np.arange(width, dtype=np.float64)[None, None, :]
    if pattern == "const":
        vals = np.broadcast_to(c + 1.0, (num_channels, height, width)).copy()
    elif pattern == "ramp":
        vals = c + u + v + np.zeros((num_channels, height, width))
    elif pattern == "checker":
        vals = ((u + v + c + scale_index) % 2.0) + np.zeros((num_channels, height, width))
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return FeaturePlane(vals)
