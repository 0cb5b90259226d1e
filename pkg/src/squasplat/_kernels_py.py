"""Pure-numpy fallback kernels.

Same contracts as the compiled extension: identical per-(voxel, primitive)
contribution math, ascending-id accumulation per voxel, cutoff as an exact
zero. Contributions below the cutoff multiply the occupancy accumulator by
exactly 1.0 and add exactly 0.0 to the semantic sums, so masked updates
leave the accumulators bit-identical to skipped ones.
"""

from __future__ import annotations

import numpy as np


def _occ_box(cen, rot, scl, ex, lam, cx, cy, cz):
    """Occupancy of one primitive over a broadcastable grid of centers."""
    dx = cx - cen[0]
    dy = cy - cen[1]
    dz = cz - cen[2]
    lx = rot[0] * dx + rot[3] * dy + rot[6] * dz
    ly = rot[1] * dx + rot[4] * dy + rot[7] * dz
    lz = rot[2] * dx + rot[5] * dy + rot[8] * dz
    ax = np.abs(lx) / scl[0]
    ay = np.abs(ly) / scl[1]
    az = np.abs(lz) / scl[2]
    # 0 ** positive == 0, so zero bases need no special casing here
    a = ax ** ex[0] + ay ** ex[0]
    f = a ** ex[1] + az ** ex[2]
    return np.exp(-lam * f), (lx, ly, lz, ax, ay, az, a)


def eval_points(pts, cen, rot, scl, ex, sig, sem, lam, cut, acc, num, den):
    """Accumulate field terms at arbitrary points; cut = 0 disables cutoff."""
    m = cen.shape[0]
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    for i in range(m):
        p, _ = _occ_box(cen[i], rot[i], scl[i], ex[i], lam, x, y, z)
        if cut > 0.0:
            p = np.where(p >= cut, p, 0.0)
        acc *= 1.0 - p
        w = p * sig[i]
        den += w
        num += w[:, None] * sem[i][None, :]


def _box_centers(org, h, x0, x1, y0, y1, z0, z1):
    cx = org[0] + (np.arange(x0, x1 + 1, dtype=np.float64) + 0.5) * h[0]
    cy = org[1] + (np.arange(y0, y1 + 1, dtype=np.float64) + 0.5) * h[1]
    cz = org[2] + (np.arange(z0, z1 + 1, dtype=np.float64) + 0.5) * h[2]
    return cx[None, None, :], cy[None, :, None], cz[:, None, None]


def _accumulate_box(i, cen, rot, scl, ex, sig, sem, lam, cut,
                    org, h, acc3, num4, den3, x0, x1, y0, y1, z0, z1):
    if x0 > x1 or y0 > y1 or z0 > z1:
        return
    cx, cy, cz = _box_centers(org, h, x0, x1, y0, y1, z0, z1)
    p, _ = _occ_box(cen[i], rot[i], scl[i], ex[i], lam, cx, cy, cz)
    p = np.where(p >= cut, p, 0.0)
    w = p * sig[i]
    sl = (slice(z0, z1 + 1), slice(y0, y1 + 1), slice(x0, x1 + 1))
    acc3[sl] *= 1.0 - p
    den3[sl] += w
    num4[sl] += w[..., None] * sem[i]


def splat_scan(cen, rot, scl, ex, sig, sem, cbox, org, h, nx, ny, nz,
               lam, cut, acc, num, den):
    """Voxel-level baseline, vectorized primitive-major over center boxes.

    Computes the same function as the compiled scan: every voxel combines,
    in ascending id order, the above-cutoff primitives whose center box
    contains it.
    """
    acc3 = acc.reshape(nz, ny, nx)
    den3 = den.reshape(nz, ny, nx)
    num4 = num.reshape(nz, ny, nx, -1)
    for i in range(cen.shape[0]):
        _accumulate_box(i, cen, rot, scl, ex, sig, sem, lam, cut, org, h,
                        acc3, num4, den3, cbox[i, 0], cbox[i, 3],
                        cbox[i, 1], cbox[i, 4], cbox[i, 2], cbox[i, 5])


def splat_tiled(cen, rot, scl, ex, sig, sem, cbox, org, h, nx, ny, nz,
                lam, cut, pair_sq, ranges, ts, acc, num, den):
    """Tile-table splat: per tile, walk the sorted primitive list once over
    tile-box intersections."""
    ntx = (nx + ts - 1) // ts
    nty = (ny + ts - 1) // ts
    acc3 = acc.reshape(nz, ny, nx)
    den3 = den.reshape(nz, ny, nx)
    num4 = num.reshape(nz, ny, nx, -1)
    num_tiles = ranges.shape[0] - 1
    for t in range(num_tiles):
        r0, r1 = ranges[t], ranges[t + 1]
        if r0 == r1:
            continue
        tx = t % ntx
        ty = (t // ntx) % nty
        tz = t // (ntx * nty)
        bx0, bx1 = tx * ts, min(tx * ts + ts - 1, nx - 1)
        by0, by1 = ty * ts, min(ty * ts + ts - 1, ny - 1)
        bz0, bz1 = tz * ts, min(tz * ts + ts - 1, nz - 1)
        for j in range(r0, r1):
            i = pair_sq[j]
            _accumulate_box(i, cen, rot, scl, ex, sig, sem, lam, cut, org, h,
                            acc3, num4, den3,
                            max(bx0, cbox[i, 0]), min(bx1, cbox[i, 3]),
                            max(by0, cbox[i, 1]), min(by1, cbox[i, 4]),
                            max(bz0, cbox[i, 2]), min(bz1, cbox[i, 5]))


def _occ_at(cen, rot, scl, ex, lam, px, py, pz):
    p, _ = _occ_box(cen, rot, scl, ex, lam,
                    np.float64(px), np.float64(py), np.float64(pz))
    return float(p)


def backward_pairs(cen, quat, rot, scl, ex, eps, sig, sem, cbox,
                   org, h, nx, ny, nz, lam, cut, pair_sq, ranges, ts,
                   acc, dJdP, dJdden, dJdnum, rows):
    """Per-pair gradient rows, mirroring the compiled kernel's math.

    Row layout: [m(3), q(4, unit-sphere), s(3), eps(2), sigma, sem(C)].
    """
    ntx = (nx + ts - 1) // ts
    nty = (ny + ts - 1) // ts
    num_tiles = ranges.shape[0] - 1
    for t in range(num_tiles):
        r0, r1 = int(ranges[t]), int(ranges[t + 1])
        if r0 == r1:
            continue
        tx = t % ntx
        ty = (t // ntx) % nty
        tz = t // (ntx * nty)
        bx0, bx1 = tx * ts, min(tx * ts + ts - 1, nx - 1)
        by0, by1 = ty * ts, min(ty * ts + ts - 1, ny - 1)
        bz0, bz1 = tz * ts, min(tz * ts + ts - 1, nz - 1)
        for j in range(r0, r1):
            i = int(pair_sq[j])
            x0, x1 = max(bx0, cbox[i, 0]), min(bx1, cbox[i, 3])
            y0, y1 = max(by0, cbox[i, 1]), min(by1, cbox[i, 4])
            z0, z1 = max(bz0, cbox[i, 2]), min(bz1, cbox[i, 5])
            if x0 > x1 or y0 > y1 or z0 > z1:
                continue
            cx, cy, cz = _box_centers(org, h, x0, x1, y0, y1, z0, z1)
            p, (lx, ly, lz, ax, ay, az, a_sum) = _occ_box(
                cen[i], rot[i], scl[i], ex[i], lam, cx, cy, cz)
            sel = p >= cut
            if not sel.any():
                continue
            gz, gy, gx = np.meshgrid(np.arange(z0, z1 + 1), np.arange(y0, y1 + 1),
                                     np.arange(x0, x1 + 1), indexing="ij")
            v = (gx + nx * (gy + ny * gz))[sel]
            p_s = p[sel]
            lx_s, ly_s, lz_s = lx[sel], ly[sel], lz[sel]
            ax_s, ay_s, az_s = ax[sel], ay[sel], az[sel]
            a_s = a_sum[sel]

            exy, g, ez = ex[i]
            pax = np.where(ax_s > 0, ax_s ** exy, 0.0)
            pay = np.where(ay_s > 0, ay_s ** exy, 0.0)
            paz = np.where(az_s > 0, az_s ** ez, 0.0)
            fA = np.where(a_s > 0, a_s ** g, 0.0)
            ag = np.where(a_s > 0, fA / np.where(a_s > 0, a_s, 1.0), 0.0)

            gsem_dot = dJdnum[v] @ sem[i]
            q1 = 1.0 - p_s
            loo = acc[v] / np.where(q1 == 0.0, 1.0, q1)
            zero_idx = np.nonzero(q1 == 0.0)[0]
            for zi in zero_idx:
                vv = int(v[zi])
                vix = vv % nx
                viy = (vv // nx) % ny
                viz = vv // (nx * ny)
                px = org[0] + (vix + 0.5) * h[0]
                py = org[1] + (viy + 0.5) * h[1]
                pz = org[2] + (viz + 0.5) * h[2]
                prod = 1.0
                for jj in range(r0, r1):
                    ii = int(pair_sq[jj])
                    if ii == i:
                        continue
                    if (vix < cbox[ii, 0] or vix > cbox[ii, 3]
                            or viy < cbox[ii, 1] or viy > cbox[ii, 4]
                            or viz < cbox[ii, 2] or viz > cbox[ii, 5]):
                        continue
                    pp = _occ_at(cen[ii], rot[ii], scl[ii], ex[ii], lam, px, py, pz)
                    if pp < cut:
                        continue
                    prod *= 1.0 - pp
                loo[zi] = prod

            g_p = dJdP[v] * loo + sig[i] * (dJdden[v] + gsem_dot)
            rows[j, 12] += float(np.sum(p_s * (dJdden[v] + gsem_dot)))
            w = p_s * sig[i]
            rows[j, 13:] += w @ dJdnum[v]

            coef = -lam * p_s * g_p
            ax_safe = np.where(ax_s > 0, ax_s, 1.0)
            ay_safe = np.where(ay_s > 0, ay_s, 1.0)
            az_safe = np.where(az_s > 0, az_s, 1.0)
            dfdax = g * ag * exy * pax / ax_safe
            dfday = g * ag * exy * pay / ay_safe
            dfdaz = ez * paz / az_safe
            df_dexy = g * ag * (pax * np.log(ax_safe) + pay * np.log(ay_safe))
            df_dg = np.where(a_s > 0, fA * np.log(np.where(a_s > 0, a_s, 1.0)), 0.0)
            df_dez = paz * np.log(az_safe)

            sx, sy, sz = scl[i]
            gl_x = coef * dfdax / sx * np.where(lx_s < 0, -1.0, 1.0)
            gl_y = coef * dfday / sy * np.where(ly_s < 0, -1.0, 1.0)
            gl_z = coef * dfdaz / sz * np.where(lz_s < 0, -1.0, 1.0)

            r = rot[i]
            rows[j, 0] -= float(np.sum(r[0] * gl_x + r[1] * gl_y + r[2] * gl_z))
            rows[j, 1] -= float(np.sum(r[3] * gl_x + r[4] * gl_y + r[5] * gl_z))
            rows[j, 2] -= float(np.sum(r[6] * gl_x + r[7] * gl_y + r[8] * gl_z))

            rows[j, 7] -= float(np.sum(coef * dfdax * ax_s / sx))
            rows[j, 8] -= float(np.sum(coef * dfday * ay_s / sy))
            rows[j, 9] -= float(np.sum(coef * dfdaz * az_s / sz))

            e1, e2 = eps[i]
            rows[j, 10] += float(np.sum(coef * (df_dg * (-e2 / (e1 * e1))
                                                + df_dez * (-2.0 / (e1 * e1)))))
            rows[j, 11] += float(np.sum(coef * (df_dexy * (-2.0 / (e2 * e2))
                                                + df_dg / e1)))

            cxb = np.broadcast_to(cx, sel.shape)[sel]
            cyb = np.broadcast_to(cy, sel.shape)[sel]
            czb = np.broadcast_to(cz, sel.shape)[sel]
            dx = cxb - cen[i, 0]
            dy = cyb - cen[i, 1]
            dz = czb - cen[i, 2]
            qw, qx, qy, qz = quat[i]
            rows[j, 3] += 2.0 * float(np.sum(
                gl_x * (qz * dy - qy * dz)
                + gl_y * (-qz * dx + qx * dz)
                + gl_z * (qy * dx - qx * dy)))
            rows[j, 4] += 2.0 * float(np.sum(
                gl_x * (qy * dy + qz * dz)
                + gl_y * (qy * dx - 2.0 * qx * dy + qw * dz)
                + gl_z * (qz * dx - qw * dy - 2.0 * qx * dz)))
            rows[j, 5] += 2.0 * float(np.sum(
                gl_x * (-2.0 * qy * dx + qx * dy - qw * dz)
                + gl_y * (qx * dx + qz * dz)
                + gl_z * (qw * dx + qz * dy - 2.0 * qy * dz)))
            rows[j, 6] += 2.0 * float(np.sum(
                gl_x * (-2.0 * qz * dx + qw * dy + qx * dz)
                + gl_y * (-qw * dx - 2.0 * qz * dy + qy * dz)
                + gl_z * (qx * dx + qy * dy)))
