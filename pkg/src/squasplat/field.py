"""Closed-form superquadric occupancy field and semantic aggregation.

evaluate_point / evaluate_points run through the active execution lane so
their values are exactly what the splatters write at voxel centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from ._kernels_py import _occ_box
from .core import FieldConfig, Superquadric

# Below this semantic-weight denominator the aggregation returns the
# uniform distribution; occupancy is ~0 there so the choice cannot bias
# the combined prediction.
DEN_EPS = 1e-12


@dataclass(frozen=True)
class PointEval:
    """Field evaluation at one point: combined occupancy, aggregated class
    distribution, and the (C+1)-vector with the empty-class complement."""

    p_occ: float
    p_sem: np.ndarray     # (C,)
    o_vec: np.ndarray     # (C+1,)


def local_coords(p, sq: Superquadric) -> np.ndarray:
    """Coordinates of world point p in the primitive's local frame."""
    r = sq.rotation_matrix()
    return r.T @ (np.asarray(p, dtype=np.float64) - sq.center)


def point_occupancy(p, sq: Superquadric, cfg: FieldConfig,
                    apply_cutoff: bool = False) -> float:
    """Occupancy probability exp(-lambda * f(p')) of one primitive at p.

    f is the inside-outside expression with exponents 2/eps2, eps2/eps1
    and 2/eps1; zero local coordinates contribute exactly zero. With
    apply_cutoff, values below cfg.cutoff collapse to exactly 0.
    """
    p = np.asarray(p, dtype=np.float64)
    e1, e2 = sq.eps
    ex = np.array([2.0 / e2, e2 / e1, 2.0 / e1])
    occ, _ = _occ_box(sq.center, sq.rotation_matrix().ravel(), sq.scale, ex,
                      cfg.lam, p[0], p[1], p[2])
    occ = float(occ)
    if apply_cutoff and occ < cfg.cutoff:
        return 0.0
    return occ


def combine_occupancy(contributions) -> float:
    """Complement of the joint non-occupancy: 1 - prod(1 - p_i)."""
    acc = 1.0
    for p in contributions:
        acc *= 1.0 - p
    return 1.0 - acc


def aggregate_semantics(contributions, num_classes=None) -> np.ndarray:
    """Opacity-weighted mean of class distributions: sum(p*sigma*c) over
    sum(p*sigma), uniform when the denominator vanishes.

    contributions: iterable of (p, sigma, c).
    """
    num = None
    den = 0.0
    for p, sigma, c in contributions:
        c = np.asarray(c, dtype=np.float64)
        if num is None:
            num = np.zeros_like(c)
        w = p * sigma
        num += w * c
        den += w
    if num is None:
        if num_classes is None:
            raise ValueError("empty contribution list needs num_classes")
        return np.full(num_classes, 1.0 / num_classes)
    if den < DEN_EPS:
        return np.full(num.shape[0], 1.0 / num.shape[0])
    return num / den


def finalize_field(acc, num, den):
    """Shared tail of every field evaluation: combined occupancy from the
    complement product and the aggregated semantics with its uniform
    fallback. Both splat paths and evaluate_point end here, which keeps
    them bit-identical."""
    p_occ = 1.0 - acc
    c = num.shape[-1]
    safe = den >= DEN_EPS
    den_safe = np.where(safe, den, 1.0)
    p_sem = np.where(safe[..., None], num / den_safe[..., None], 1.0 / c)
    return p_occ, p_sem


def evaluate_points(pts, scene, cfg: FieldConfig, num_classes=None,
                    apply_cutoff: bool = False):
    """Evaluate the combined field at (N, 3) points. Returns (p_occ (N,),
    p_sem (N, C)). Contributions combine in ascending primitive id."""
    from .splat import build_scene_arrays

    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    n = pts.shape[0]
    if len(scene) == 0:
        if num_classes is None:
            raise ValueError("empty scene needs num_classes")
        return np.zeros(n), np.full((n, num_classes), 1.0 / num_classes)
    arrs = build_scene_arrays(scene, cfg)
    c = arrs.sem.shape[1]
    acc = np.ones(n)
    num = np.zeros((n, c))
    den = np.zeros(n)
    cut = cfg.cutoff if apply_cutoff else 0.0
    backend.active_lane().eval_points(arrs, pts, cfg.lam, cut, acc, num, den)
    return finalize_field(acc, num, den)


def evaluate_point(p, scene, cfg: FieldConfig, num_classes=None,
                   apply_cutoff: bool = False) -> PointEval:
    """Full field evaluation at a single point (Eqs. of the occupancy
    model composed end to end)."""
    if num_classes is None and scene:
        num_classes = scene[0].num_classes
    p_occ, p_sem = evaluate_points(np.asarray(p, dtype=np.float64)[None, :],
                                   scene, cfg, num_classes, apply_cutoff)
    p_occ = float(p_occ[0])
    p_sem = p_sem[0]
    o_vec = np.concatenate([p_occ * p_sem, [1.0 - p_occ]])
    return PointEval(p_occ, p_sem, o_vec)
