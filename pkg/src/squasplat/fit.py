"""Analytic gradients of the splatted grid and a coarse-to-fine
multi-superquadric fitter.

splat_backward differentiates the full chain from raw primitive parameters
(center, quaternion, scale, squareness, opacity, semantics) through the
occupancy field, the complement-product combination and the semantic
aggregation into the stacked per-voxel output [p_occ * p_sem ; 1 - p_occ].
Gradient rows accumulate per (tile, primitive) pair and reduce in a fixed
(primitive, tile) order, so results do not depend on the worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .core import (EPS_RANGE, FieldConfig, GridSpec, SuperquadricCluster,
                   VoxelGrid, expand_cluster, make_cluster)
from .field import DEN_EPS, finalize_field
from .splat import (_alloc, _grid_tuple, _table_from_arrays,
                    build_scene_arrays, splat_tiled)

PROB_EPS = 1e-6   # clamp floor inside the loss logs
SCALE_MAP_FLOOR = 1e-3


@dataclass
class ParamGrads:
    """Per-primitive gradients w.r.t. raw scene parameters. rotation and
    sem include the normalization chain (tangent projection), matching
    finite differences taken on raw values that get renormalized on
    construction."""

    center: np.ndarray     # (M, 3)
    rotation: np.ndarray   # (M, 4)
    scale: np.ndarray      # (M, 3)
    eps: np.ndarray        # (M, 2)
    sigma: np.ndarray      # (M,)
    sem: np.ndarray        # (M, C)


def _upstream_to_internal(upstream, p_occ, num, den):
    """Convert d J / d o_vec into gradients w.r.t. the combined occupancy
    and the semantic aggregation's numerator/denominator."""
    c = num.shape[1]
    u_sem = upstream[:, :c]
    u_empty = upstream[:, c]
    safe = den >= DEN_EPS
    den_s = np.where(safe, den, 1.0)
    p_sem = np.where(safe[:, None], num / den_s[:, None], 1.0 / c)
    djdp = (u_sem * p_sem).sum(axis=1) - u_empty
    djdnum = np.where(safe[:, None], u_sem * (p_occ / den_s)[:, None], 0.0)
    djdden = np.where(safe, -(p_occ / den_s) * (u_sem * p_sem).sum(axis=1), 0.0)
    return djdp, djdnum, djdden


def splat_backward(scene, spec: GridSpec, cfg: FieldConfig, upstream,
                   tile_size: int = 4, workers=None, table=None,
                   forward_cache=None) -> ParamGrads:
    """VJP of the splatted o_vec grid: upstream is (V, C+1) in x-fastest
    voxel order; returns gradients for every raw parameter of every
    primitive, accumulated over the voxels where its contribution clears
    the cutoff. Uses the same tile table as the forward pass."""
    m = len(scene)
    c = scene[0].num_classes if m else upstream.shape[1] - 1
    grads = ParamGrads(np.zeros((m, 3)), np.zeros((m, 4)), np.zeros((m, 3)),
                       np.zeros((m, 2)), np.zeros(m), np.zeros((m, c)))
    if m == 0:
        return grads
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if upstream.shape != (spec.num_voxels, c + 1):
        raise ValueError(f"upstream must have shape (V, C+1)="
                         f"{(spec.num_voxels, c + 1)}, got {upstream.shape}")
    arrs = build_scene_arrays(scene, cfg, spec)
    if table is None:
        table = _table_from_arrays(arrs, spec, tile_size)
    grid = _grid_tuple(spec)
    if forward_cache is None:
        acc, num, den = _alloc(spec, c)
        backend.active_lane().splat_tiled(arrs, grid, cfg.lam, cfg.cutoff,
                                          table, acc, num, den, workers)
    else:
        acc, num, den = forward_cache
    p_occ = 1.0 - acc
    djdp, djdnum, djdden = _upstream_to_internal(upstream, p_occ, num, den)

    rows = np.zeros((table.num_pairs, 13 + c))
    backend.active_lane().backward_pairs(
        arrs, grid, cfg.lam, cfg.cutoff, table,
        np.ascontiguousarray(acc), np.ascontiguousarray(djdp),
        np.ascontiguousarray(djdden), np.ascontiguousarray(djdnum),
        rows, workers)

    # fixed-order reduction: rows sorted by (primitive, tile) via a stable
    # sort of the (tile, primitive)-sorted pair list
    per_prim = np.zeros((m, 13 + c))
    if table.num_pairs:
        order = np.argsort(table.pair_sq, kind="stable")
        sq_sorted = table.pair_sq[order]
        starts = np.searchsorted(sq_sorted, np.arange(m))
        present = starts < table.num_pairs
        sums = np.add.reduceat(rows[order], starts[present], axis=0)
        # reduceat segments run to the next start; trailing absent ids fixed up
        ids = np.arange(m)[present]
        valid = sq_sorted[starts[present]] == ids
        per_prim[ids[valid]] = sums[valid]

    grads.center = per_prim[:, 0:3]
    g_q = per_prim[:, 3:7]
    # tangent projection: raw quaternion values renormalize on construction
    grads.rotation = g_q - arrs.quat * (arrs.quat * g_q).sum(axis=1, keepdims=True)
    grads.scale = per_prim[:, 7:10]
    grads.eps = per_prim[:, 10:12]
    grads.sigma = per_prim[:, 12]
    g_c = per_prim[:, 13:]
    grads.sem = g_c - (g_c * arrs.sem).sum(axis=1, keepdims=True)
    return grads


@dataclass(frozen=True)
class LossWeights:
    occ: float = 1.0
    sem: float = 0.5


def grid_loss(pred: VoxelGrid, target: VoxelGrid, weights: LossWeights = LossWeights()):
    """Weighted sum of a binary cross-entropy on p_occ (all voxels) and a
    cross-entropy on semantics over voxels with target p_occ >= 0.5.
    Probabilities are clamped at PROB_EPS inside the logs. Returns
    (total, parts) with the unweighted per-term means."""
    if pred.spec != target.spec:
        raise ValueError("grid specs do not match")
    if pred.num_classes != target.num_classes:
        raise ValueError("class counts do not match")
    p = np.clip(pred.occ, PROB_EPS, 1.0 - PROB_EPS)
    t = target.occ
    occ_terms = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    occ_mean = float(occ_terms.mean())
    mask = target.occ >= 0.5
    if mask.any():
        ps = np.clip(pred.sem[mask], PROB_EPS, 1.0)
        sem_mean = float(-(target.sem[mask] * np.log(ps)).sum(axis=1).mean())
    else:
        sem_mean = 0.0
    total = weights.occ * occ_mean + weights.sem * sem_mean
    if not math.isfinite(total):
        raise FloatingPointError("non-finite loss")
    return total, {"occ": occ_mean, "sem": sem_mean, "sem_voxels": int(mask.sum())}


def _loss_and_upstream(p_occ, p_sem, target: VoxelGrid, weights: LossWeights):
    """Loss of a splatted (p_occ, p_sem) grid against the target plus its
    gradient w.r.t. the stacked o_vec channels."""
    v = p_occ.shape[0]
    c = p_sem.shape[1]
    p = np.clip(p_occ, PROB_EPS, 1.0 - PROB_EPS)
    t = target.occ
    occ_terms = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    occ_mean = float(occ_terms.mean())
    inside = (p_occ > PROB_EPS) & (p_occ < 1.0 - PROB_EPS)
    dl_dp = np.where(inside, (-t / p + (1.0 - t) / (1.0 - p)) / v, 0.0)

    mask = target.occ >= 0.5
    upstream = np.zeros((v, c + 1))
    upstream[:, c] = -weights.occ * dl_dp
    if mask.any():
        n_mask = int(mask.sum())
        ps = np.clip(p_sem, PROB_EPS, 1.0)
        sem_mean = float(-(target.sem[mask] * np.log(ps[mask])).sum(axis=1).mean())
        dl_dps = np.where(mask[:, None] & (p_sem > PROB_EPS),
                          -target.sem / ps / n_mask, 0.0)
        # o_k = P * p_sem_k: dL/do_k = dL/dp_sem_k / P,
        # dL/do_C = sum_k dL/dp_sem_k * p_sem_k / P
        p_div = np.maximum(p_occ, PROB_EPS)
        upstream[:, :c] += weights.sem * dl_dps / p_div[:, None]
        upstream[:, c] += weights.sem * (dl_dps * p_sem).sum(axis=1) / p_div
    else:
        sem_mean = 0.0
    total = weights.occ * occ_mean + weights.sem * sem_mean
    return total, upstream


def _softplus(u):
    return np.logaddexp(0.0, u)


def _softplus_inv(s):
    s = np.asarray(s, dtype=np.float64)
    return s + np.log1p(-np.exp(-s))


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def _scale_map(u):
    return SCALE_MAP_FLOOR + _softplus(u)


def _scale_map_inv(s):
    return _softplus_inv(np.maximum(s - SCALE_MAP_FLOOR, 1e-12))


def _eps_map(u):
    lo, hi = EPS_RANGE
    return lo + (hi - lo) * _sigmoid(u)


def _eps_map_inv(e):
    lo, hi = EPS_RANGE
    f = (np.asarray(e, dtype=np.float64) - lo) / (hi - lo)
    f = np.clip(f, 1e-9, 1.0 - 1e-9)
    return np.log(f / (1.0 - f))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ClusterParams:
    """Unconstrained pre-parameters for a set of clusters; the forward
    maps always produce valid clusters (positive scale via softplus,
    squareness squashed into its clamp range, opacity through the
    logistic, semantics through softmax, quaternions normalized)."""

    ref: np.ndarray        # (N, 3)
    off: np.ndarray        # (N, K, 3)
    quat_p: np.ndarray     # (N, K, 4)
    scale_p: np.ndarray    # (N, K, 3)
    eps_p: np.ndarray      # (N, K, 2)
    opa_p: np.ndarray      # (N, K)
    sem_p: np.ndarray      # (N, C)
    fixed_ref: bool = False

    @property
    def num_clusters(self) -> int:
        return self.ref.shape[0]

    @property
    def members(self) -> int:
        return self.off.shape[1]

    def to_clusters(self) -> list[SuperquadricCluster]:
        sems = _softmax(self.sem_p)
        out = []
        for i in range(self.num_clusters):
            out.append(make_cluster(
                self.ref[i], self.off[i], self.quat_p[i],
                _scale_map(self.scale_p[i]), _eps_map(self.eps_p[i]),
                _sigmoid(self.opa_p[i]), sems[i]))
        return out

    def to_scene(self):
        scene = []
        for cl in self.to_clusters():
            scene.extend(expand_cluster(cl))
        return scene

    def flat(self) -> np.ndarray:
        return np.concatenate([self.ref.ravel(), self.off.ravel(),
                               self.quat_p.ravel(), self.scale_p.ravel(),
                               self.eps_p.ravel(), self.opa_p.ravel(),
                               self.sem_p.ravel()])

    def unflatten(self, vec) -> "ClusterParams":
        parts = []
        o = 0
        for a in (self.ref, self.off, self.quat_p, self.scale_p,
                  self.eps_p, self.opa_p, self.sem_p):
            parts.append(vec[o:o + a.size].reshape(a.shape))
            o += a.size
        return ClusterParams(*parts, fixed_ref=self.fixed_ref)

    def grad_flat(self, grads: ParamGrads) -> np.ndarray:
        """Chain per-primitive raw gradients back to pre-parameters."""
        n, k = self.num_clusters, self.members
        gc = grads.center.reshape(n, k, 3)
        g_ref = np.zeros_like(self.ref) if self.fixed_ref else gc.sum(axis=1)
        g_off = gc
        qn = np.linalg.norm(self.quat_p, axis=-1, keepdims=True)
        g_quat = grads.rotation.reshape(n, k, 4) / qn
        g_scale = grads.scale.reshape(n, k, 3) * _sigmoid(self.scale_p)
        lo, hi = EPS_RANGE
        se = _sigmoid(self.eps_p)
        g_eps = grads.eps.reshape(n, k, 2) * (hi - lo) * se * (1.0 - se)
        so = _sigmoid(self.opa_p)
        g_opa = grads.sigma.reshape(n, k) * so * (1.0 - so)
        g_sem_c = grads.sem.reshape(n, k, -1).sum(axis=1)
        c = _softmax(self.sem_p)
        g_sem = c * g_sem_c - c * (c * g_sem_c).sum(axis=-1, keepdims=True)
        return np.concatenate([g_ref.ravel(), g_off.ravel(), g_quat.ravel(),
                               g_scale.ravel(), g_eps.ravel(), g_opa.ravel(),
                               g_sem.ravel()])


@dataclass
class FitConfig:
    """Fitter settings; K schedule must be non-decreasing."""

    schedule: tuple = (2, 2, 4, 4, 8, 8)
    iters_per_stage: int = 150
    lr: float = 5e-2
    momentum: float = 0.9
    warmup_iters: int = 40    # linear lr ramp after each split
    lr_floor: float = 0.05    # cosine anneal within each stage ends here
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    tile_size: int = 4
    workers: int | None = None
    fixed_ref: bool = False
    split_jitter: float = 0.25   # offset jitter = this * mean member scale
    field_cfg: FieldConfig = None

    def __post_init__(self):
        sched = tuple(int(k) for k in self.schedule)
        if not sched or any(k < 1 for k in sched):
            raise ValueError("schedule must contain positive member counts")
        if any(b < a for a, b in zip(sched, sched[1:])):
            raise ValueError("K schedule must be non-decreasing")
        self.schedule = sched
        if self.iters_per_stage < 1:
            raise ValueError("iters_per_stage must be >= 1")
        if self.field_cfg is None:
            self.field_cfg = FieldConfig()


def init_clusters(target: VoxelGrid, n_clusters: int, k1: int, seed: int,
                  fixed_ref: bool = False) -> ClusterParams:
    """Seeded initialization: reference points drawn from occupied voxel
    centers (uniform in bounds when the target is empty), scales at twice
    the voxel size, unit squareness, opacity at the logistic midpoint,
    uniform semantics, small offset jitter to break member symmetry."""
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=seed))
    spec = target.spec
    occupied = np.nonzero(target.occ >= 0.5)[0]
    if occupied.size:
        centers = spec.all_centers_flat()[occupied]
        pick = rng.integers(0, occupied.size, size=n_clusters)
        ref = centers[pick]
    else:
        ref = spec.lower + rng.random((n_clusters, 3)) * (spec.upper - spec.lower)
    h_mean = float(spec.voxel_size.mean())
    off = rng.normal(scale=0.25 * h_mean, size=(n_clusters, k1, 3))
    quat_p = np.zeros((n_clusters, k1, 4))
    quat_p[..., 0] = 1.0
    scale_p = np.full((n_clusters, k1, 3), 0.0) + _scale_map_inv(2.0 * spec.voxel_size)
    eps_p = np.full((n_clusters, k1, 2), _eps_map_inv(1.0))
    opa_p = np.zeros((n_clusters, k1))
    sem_p = np.zeros((n_clusters, target.num_classes))
    return ClusterParams(ref, off, quat_p, scale_p, eps_p, opa_p, sem_p,
                         fixed_ref=fixed_ref)


SPLIT_REFINE_SCALE = 0.4
SPLIT_JITTER = 0.25


def _split_params(params: ClusterParams, k_new: int, rng) -> ClusterParams:
    """Nested warm-start split at a K increase.

    Each parent keeps one verbatim copy and spawns refiner children at
    SPLIT_REFINE_SCALE of its scale with a jittered offset (magnitude
    SPLIT_JITTER * mean parent scale * mean squareness). The refiners sit
    inside the parent's high-occupancy core, so the combined field and the
    loss are approximately unchanged at the boundary; an equal-shrink
    duplicate-all rule destroys the splatted field for box-like members,
    whose 2/eps exponents amplify any per-axis shrink."""
    n, k_old = params.num_clusters, params.members
    base, rem = divmod(k_new, k_old)
    counts = [base + 1 if j < rem else base for j in range(k_old)]
    scales = _scale_map(params.scale_p)
    eps_vals = _eps_map(params.eps_p)
    off = np.zeros((n, k_new, 3))
    quat_p = np.zeros((n, k_new, 4))
    scale_p = np.zeros((n, k_new, 3))
    eps_p = np.zeros((n, k_new, 2))
    opa_p = np.zeros((n, k_new))
    for i in range(n):
        slot = 0
        for j in range(k_old):
            nc = counts[j]
            eps_mean = float(eps_vals[i, j].mean())
            # jitter flattened by eps: the field's edge transition width
            # scales with the squareness, and a displacement past it
            # would flip boundary voxels outright
            mag = SPLIT_JITTER * float(scales[i, j].mean()) * eps_mean
            small = _scale_map_inv(np.maximum(
                scales[i, j] * SPLIT_REFINE_SCALE, SCALE_MAP_FLOOR + 1e-9))
            for a in range(nc):
                if a == 0:
                    off[i, slot] = params.off[i, j]
                    scale_p[i, slot] = params.scale_p[i, j]
                else:
                    d = rng.normal(size=3)
                    d *= mag / np.linalg.norm(d)
                    off[i, slot] = params.off[i, j] + d
                    scale_p[i, slot] = small
                quat_p[i, slot] = params.quat_p[i, j]
                eps_p[i, slot] = params.eps_p[i, j]
                opa_p[i, slot] = params.opa_p[i, j]
                slot += 1
    return ClusterParams(params.ref.copy(), off, quat_p, scale_p, eps_p,
                         opa_p, params.sem_p.copy(), fixed_ref=params.fixed_ref)


def occupancy_iou(pred: VoxelGrid, target: VoxelGrid, thr: float = 0.5) -> float:
    a = pred.occ >= thr
    b = target.occ >= thr
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


@dataclass
class FitResult:
    clusters: list
    trace: list            # rows (stage, iter, loss, iou)
    params: ClusterParams
    grid: VoxelGrid


def fit_scene(target: VoxelGrid, n_clusters: int, cfg: FitConfig) -> FitResult:
    """Reconstruct the target grid with n_clusters superquadric clusters by
    momentum gradient descent over the coarse-to-fine K schedule. Members
    split at every K increase (see _split_params). Deterministic for a
    fixed seed."""
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    spec = target.spec
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    params = init_clusters(target, n_clusters, cfg.schedule[0], cfg.seed,
                           fixed_ref=cfg.fixed_ref)
    velocity = np.zeros_like(params.flat())
    trace = []
    c = target.num_classes
    lane = backend.active_lane()
    for stage, k_target in enumerate(cfg.schedule):
        split_here = k_target > params.members
        if split_here:
            params = _split_params(params, k_target, rng)
            velocity = np.zeros_like(params.flat())
        for it in range(cfg.iters_per_stage):
            scene = params.to_scene()
            arrs = build_scene_arrays(scene, cfg.field_cfg, spec)
            table = _table_from_arrays(arrs, spec, cfg.tile_size)
            acc, num, den = _alloc(spec, c)
            lane.splat_tiled(arrs, _grid_tuple(spec), cfg.field_cfg.lam,
                             cfg.field_cfg.cutoff, table, acc, num, den,
                             cfg.workers)
            p_occ, p_sem = finalize_field(acc, num, den)
            loss, upstream = _loss_and_upstream(p_occ, p_sem, target, cfg.weights)
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at stage {stage} iter {it}")
            iou = occupancy_iou(VoxelGrid(spec, p_occ, p_sem), target)
            trace.append((stage, it, loss, iou))
            grads = splat_backward(scene, spec, cfg.field_cfg, upstream,
                                   tile_size=cfg.tile_size, workers=cfg.workers,
                                   table=table, forward_cache=(acc, num, den))
            g = params.grad_flat(grads)
            velocity = cfg.momentum * velocity + g
            # cosine anneal inside the stage keeps the converged plateau
            # quiet; the warmup tames the post-split transient
            prog = it / max(1, cfg.iters_per_stage - 1)
            lr = cfg.lr * (cfg.lr_floor + (1 - cfg.lr_floor)
                           * 0.5 * (1 + math.cos(math.pi * prog)))
            if split_here and cfg.warmup_iters > 0:
                lr *= min(1.0, (it + 1) / cfg.warmup_iters)
            params = params.unflatten(params.flat() - lr * velocity)
    grid = splat_tiled(params.to_scene(), spec, cfg.field_cfg,
                       tile_size=cfg.tile_size, workers=cfg.workers,
                       num_classes=c)
    return FitResult(params.to_clusters(), trace, params, grid)
