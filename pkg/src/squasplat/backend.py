"""Execution-lane selection: compiled extension when importable, numpy
fallback otherwise. SQUASPLAT_BACKEND={auto,compiled,python} overrides.

Both lanes compute the same function per lane-internal bit-identity
contracts (scan vs tiled); across lanes, values agree to floating-point
rounding but are not required to match bitwise.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None


def available_backends() -> list[str]:
    return (["compiled"] if _compiled is not None else []) + ["python"]


def resolve_workers(workers=None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("SQUASPLAT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _chunks(n, parts):
    bounds = np.linspace(0, n, parts + 1).astype(np.int64)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(parts)
            if bounds[i] < bounds[i + 1]]


class CompiledLane:
    name = "compiled"

    def eval_points(self, arrs, pts, lam, cut, acc, num, den):
        _compiled.eval_points(pts, arrs.cen, arrs.rot, arrs.scl, arrs.ex,
                              arrs.sig, arrs.sem, lam, cut, acc, num, den)

    def splat_scan(self, arrs, grid, lam, cut, acc, num, den, workers):
        org, h, nx, ny, nz = grid
        v = nx * ny * nz
        parts = _chunks(v, resolve_workers(workers))
        if len(parts) == 1:
            _compiled.splat_scan(arrs.cen, arrs.rot, arrs.scl, arrs.ex,
                                 arrs.sig, arrs.sem, arrs.cbox, org, h,
                                 nx, ny, nz, lam, cut, acc, num, den, 0, v)
            return
        with ThreadPoolExecutor(max_workers=len(parts)) as ex:
            futs = [ex.submit(_compiled.splat_scan, arrs.cen, arrs.rot,
                              arrs.scl, arrs.ex, arrs.sig, arrs.sem,
                              arrs.cbox, org, h, nx, ny, nz, lam, cut,
                              acc, num, den, a, b) for a, b in parts]
            for f in futs:
                f.result()

    def splat_tiled(self, arrs, grid, lam, cut, table, acc, num, den, workers):
        org, h, nx, ny, nz = grid
        t = table.num_tiles_total
        parts = _chunks(t, resolve_workers(workers))
        if len(parts) == 1:
            _compiled.splat_tiled(arrs.cen, arrs.rot, arrs.scl, arrs.ex,
                                  arrs.sig, arrs.sem, arrs.cbox, org, h,
                                  nx, ny, nz, lam, cut, table.pair_sq,
                                  table.ranges, table.tile_size,
                                  acc, num, den, 0, t)
            return
        with ThreadPoolExecutor(max_workers=len(parts)) as ex:
            futs = [ex.submit(_compiled.splat_tiled, arrs.cen, arrs.rot,
                              arrs.scl, arrs.ex, arrs.sig, arrs.sem,
                              arrs.cbox, org, h, nx, ny, nz, lam, cut,
                              table.pair_sq, table.ranges, table.tile_size,
                              acc, num, den, a, b) for a, b in parts]
            for f in futs:
                f.result()

    def backward_pairs(self, arrs, grid, lam, cut, table, acc,
                       djdp, djdden, djdnum, rows, workers):
        org, h, nx, ny, nz = grid
        t = table.num_tiles_total
        parts = _chunks(t, resolve_workers(workers))
        if len(parts) == 1:
            _compiled.backward_pairs(arrs.cen, arrs.quat, arrs.rot, arrs.scl,
                                     arrs.ex, arrs.eps, arrs.sig, arrs.sem,
                                     arrs.cbox, org, h, nx, ny, nz, lam, cut,
                                     table.pair_sq, table.ranges,
                                     table.tile_size, acc, djdp, djdden,
                                     djdnum, rows, 0, t)
            return
        with ThreadPoolExecutor(max_workers=len(parts)) as ex:
            futs = [ex.submit(_compiled.backward_pairs, arrs.cen, arrs.quat,
                              arrs.rot, arrs.scl, arrs.ex, arrs.eps, arrs.sig,
                              arrs.sem, arrs.cbox, org, h, nx, ny, nz, lam,
                              cut, table.pair_sq, table.ranges,
                              table.tile_size, acc, djdp, djdden, djdnum,
                              rows, a, b) for a, b in parts]
            for f in futs:
                f.result()


class PythonLane:
    """Numpy lane; vectorization replaces the worker pool, so the worker
    count has no effect on either results or scheduling here."""

    name = "python"

    def eval_points(self, arrs, pts, lam, cut, acc, num, den):
        _kernels_py.eval_points(pts, arrs.cen, arrs.rot, arrs.scl, arrs.ex,
                                arrs.sig, arrs.sem, lam, cut, acc, num, den)

    def splat_scan(self, arrs, grid, lam, cut, acc, num, den, workers):
        org, h, nx, ny, nz = grid
        _kernels_py.splat_scan(arrs.cen, arrs.rot, arrs.scl, arrs.ex,
                               arrs.sig, arrs.sem, arrs.cbox, org, h,
                               nx, ny, nz, lam, cut, acc, num, den)

    def splat_tiled(self, arrs, grid, lam, cut, table, acc, num, den, workers):
        org, h, nx, ny, nz = grid
        _kernels_py.splat_tiled(arrs.cen, arrs.rot, arrs.scl, arrs.ex,
                                arrs.sig, arrs.sem, arrs.cbox, org, h,
                                nx, ny, nz, lam, cut, table.pair_sq,
                                table.ranges, table.tile_size, acc, num, den)

    def backward_pairs(self, arrs, grid, lam, cut, table, acc,
                       djdp, djdden, djdnum, rows, workers):
        org, h, nx, ny, nz = grid
        _kernels_py.backward_pairs(arrs.cen, arrs.quat, arrs.rot, arrs.scl,
                                   arrs.ex, arrs.eps, arrs.sig, arrs.sem,
                                   arrs.cbox, org, h, nx, ny, nz, lam, cut,
                                   table.pair_sq, table.ranges,
                                   table.tile_size, acc, djdp, djdden,
                                   djdnum, rows)


def _select_initial():
    choice = os.environ.get("SQUASPLAT_BACKEND", "auto").lower()
    if choice == "python":
        return PythonLane()
    if choice == "compiled":
        if _compiled is None:
            raise ImportError(
                "SQUASPLAT_BACKEND=compiled but the squasplat._kernels "
                "extension is not built; install with the C extension or "
                "use SQUASPLAT_BACKEND=python")
        return CompiledLane()
    return CompiledLane() if _compiled is not None else PythonLane()


_active = _select_initial()


def active_lane():
    return _active


def set_backend(name: str):
    """Switch the active lane ('compiled' or 'python'); returns the lane."""
    global _active
    if name == "compiled":
        if _compiled is None:
            raise ValueError("compiled backend unavailable")
        _active = CompiledLane()
    elif name == "python":
        _active = PythonLane()
    else:
        raise ValueError(f"unknown backend {name!r}")
    return _active
