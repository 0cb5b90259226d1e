"""Object-centric temporal propagation: ego-motion alignment, scale-based
foreground scoring, top-N selection, distance deduplication and the
stochastic complement that keeps the query budget constant.

Randomness contract: sampling uses numpy's Philox counter-based generator
keyed directly by the given seed, and survivors (listed in ascending query
id) are drawn by a partial Fisher-Yates shuffle with integers(0, n - j)
draws. This exact rule is part of the external interface so runs are
reproducible across implementations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (SuperquadricCluster, make_cluster, quat_canonical,
                   quat_multiply, quat_to_matrix)


@dataclass(frozen=True)
class FramePose:
    """Rigid transform mapping source-frame coordinates into a target
    frame, stored as unit quaternion plus translation."""

    rotation: np.ndarray      # (4,) unit quaternion (w, x, y, z)
    translation: np.ndarray   # (3,) meters
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           quat_canonical(np.asarray(self.rotation, dtype=np.float64)))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls, timestamp: float = 0.0) -> "FramePose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), timestamp)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        r = quat_to_matrix(self.rotation)
        return np.asarray(points, dtype=np.float64) @ r.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ quat_to_matrix(self.rotation).T

    def compose(self, other: "FramePose") -> "FramePose":
        """Transform equal to applying ``other`` first, then self."""
        return FramePose(quat_multiply(self.rotation, other.rotation),
                         self.apply(other.translation), self.timestamp)

    def inverse(self) -> "FramePose":
        r = quat_to_matrix(self.rotation)
        qinv = np.array([self.rotation[0], -self.rotation[1],
                         -self.rotation[2], -self.rotation[3]])
        return FramePose(qinv, -(r.T @ self.translation), self.timestamp)


@dataclass(frozen=True)
class QueryState:
    """A query carried across frames: geometric state plus provenance."""

    id: int
    cluster: SuperquadricCluster
    provenance: str = "initialized"    # or "propagated"

    @property
    def ref_point(self) -> np.ndarray:
        return self.cluster.ref_point


def foreground_score(cluster: SuperquadricCluster) -> float:
    """Maximum scale component over all members; large scales mark queries
    that carve out substantial foreground volume."""
    if cluster.num_members == 0:
        raise ValueError("foreground score needs at least one member")
    return float(cluster.scales.max())


def transform_query(q: QueryState, pose: FramePose) -> QueryState:
    """Map a query's geometric state through an ego-motion transform:
    reference point and member centers move rigidly, member rotations
    compose with the pose rotation, shape parameters stay."""
    cl = q.cluster
    new_ref = pose.apply(cl.ref_point)
    new_off = pose.rotate(cl.offsets)
    new_rot = np.stack([quat_canonical(quat_multiply(pose.rotation, r))
                        for r in cl.rotations])
    new_cluster = make_cluster(new_ref, new_off, new_rot, cl.scales,
                               cl.eps, cl.sigmas, cl.sem)
    return replace(q, cluster=new_cluster)


def _sample_indices(n: int, m: int, seed) -> list[int]:
    """Partial Fisher-Yates over range(n) with Philox(seed) draws."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    arr = list(range(n))
    for j in range(m):
        r = int(rng.integers(0, n - j))
        arr[j], arr[j + r] = arr[j + r], arr[j]
    return arr[:m]


def propagate(prev_queries, pose: FramePose, n_p: int, n_q: int, tau: float,
              seed, init_pool):
    """One propagation step.

    Selects the n_p previous queries with the highest foreground scores
    (ties broken by ascending id), transforms them by the pose, discards
    initialization queries strictly within tau of any propagated reference
    point (distance exactly tau is retained), and complements with
    n_q - n_p survivors sampled by the seeded generator. Returns
    (queries, info); info flags a shortfall when survivors run out.
    """
    if n_p > len(prev_queries):
        raise ValueError(f"n_p={n_p} exceeds {len(prev_queries)} previous queries")
    if n_p > n_q:
        raise ValueError(f"n_p={n_p} exceeds the query budget n_q={n_q}")
    scored = sorted(prev_queries,
                    key=lambda q: (-foreground_score(q.cluster), q.id))
    propagated = [replace(transform_query(q, pose), provenance="propagated")
                  for q in scored[:n_p]]

    pool = sorted(init_pool, key=lambda q: q.id)
    if propagated and pool:
        prop_pts = np.stack([q.ref_point for q in propagated])
        pool_pts = np.stack([q.ref_point for q in pool])
        d2 = ((pool_pts[:, None, :] - prop_pts[None, :, :]) ** 2).sum(axis=2)
        keep = d2.min(axis=1) >= tau * tau
        survivors = [q for q, k in zip(pool, keep) if k]
    else:
        survivors = list(pool)

    want = n_q - n_p
    take = min(want, len(survivors))
    chosen = [survivors[i] for i in _sample_indices(len(survivors), take, seed)]
    out = propagated + [replace(q, provenance="initialized") for q in chosen]
    scores = [foreground_score(q.cluster) for q in out]
    info = {
        "num_propagated": len(propagated),
        "num_initialized": len(chosen),
        "shortfall": len(survivors) < want,
        "mean_score": float(np.mean(scores)) if scores else 0.0,
    }
    return out, info


@dataclass
class StreamConfig:
    n_p: int = 500
    n_q: int = 600
    tau: float = 1.0
    seed: int = 0


def frame_seed(base_seed: int, frame_index: int) -> int:
    """Per-frame sampler seed; the derivation is part of the contract."""
    return int(base_seed) * 1000003 + int(frame_index)


def run_stream(frames, cfg: StreamConfig):
    """Drive propagation over a frame sequence.

    frames: list of (pose, clusters) where the pose maps the previous
    frame's coordinates into the current frame and clusters supply the
    frame's initialization pool. Fresh queries receive increasing ids;
    the propagation count clamps to however many previous queries exist,
    so early frames start from pure initialization.
    Returns (per-frame query lists, report rows).
    """
    if not frames:
        raise ValueError("need at least one frame")
    prev: list[QueryState] = []
    next_id = 0
    all_queries = []
    report = []
    for t, (pose, clusters) in enumerate(frames):
        pool = []
        for cl in clusters:
            pool.append(QueryState(id=next_id, cluster=cl))
            next_id += 1
        n_p_eff = min(cfg.n_p, len(prev), cfg.n_q)
        queries, info = propagate(prev, pose, n_p_eff, cfg.n_q, cfg.tau,
                                  frame_seed(cfg.seed, t), pool)
        all_queries.append(queries)
        report.append({"frame": t, **info})
        prev = queries
    return all_queries, report
