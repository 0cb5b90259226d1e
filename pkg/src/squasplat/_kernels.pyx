# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled splatting kernels.

Both splat paths evaluate the identical per-(voxel, primitive) field
contribution and accumulate per voxel in ascending primitive id with the
cutoff applied as an exact zero, which makes their outputs bit-identical.
The scan path is the voxel-level baseline: every voxel tests every
primitive's bounding box. The tiled path walks a sorted (tile, primitive)
pair table and touches only the voxels inside tile-box intersections.
"""

from libc.math cimport exp, log, fabs, pow


cdef struct EvalTerms:
    double lx, ly, lz          # local coordinates
    double ax, ay, az          # scaled absolute coordinates
    double pax, pay, paz       # ax^e_xy, ay^e_xy, az^e_z
    double A, Ag, fA           # pax+pay, A^(g-1), A^g
    double f, p                # inside-outside value, occupancy


cdef inline double eval_occ(double px, double py, double pz,
                            const double* cen, const double* rot,
                            const double* scl, const double* ex,
                            double lam) noexcept nogil:
    """Occupancy of one primitive at one point: exp(-lam * f(p'))."""
    cdef double dx = px - cen[0]
    cdef double dy = py - cen[1]
    cdef double dz = pz - cen[2]
    # p' = R^T (p - m); rot is row-major R (local -> world)
    cdef double lx = rot[0] * dx + rot[3] * dy + rot[6] * dz
    cdef double ly = rot[1] * dx + rot[4] * dy + rot[7] * dz
    cdef double lz = rot[2] * dx + rot[5] * dy + rot[8] * dz
    cdef double ax = fabs(lx) / scl[0]
    cdef double ay = fabs(ly) / scl[1]
    cdef double az = fabs(lz) / scl[2]
    cdef double A = 0.0
    cdef double f
    # zero bases short-circuit to zero so fractional exponents cannot NaN
    if ax > 0.0:
        A += pow(ax, ex[0])
    if ay > 0.0:
        A += pow(ay, ex[0])
    if A > 0.0:
        f = pow(A, ex[1])
    else:
        f = 0.0
    if az > 0.0:
        f += pow(az, ex[2])
    return exp(-lam * f)


cdef inline void eval_full(double px, double py, double pz,
                           const double* cen, const double* rot,
                           const double* scl, const double* ex,
                           double lam, EvalTerms* t) noexcept nogil:
    """Same value as eval_occ but keeps the intermediates the backward
    chain needs. The arithmetic order matches eval_occ exactly."""
    cdef double dx = px - cen[0]
    cdef double dy = py - cen[1]
    cdef double dz = pz - cen[2]
    t.lx = rot[0] * dx + rot[3] * dy + rot[6] * dz
    t.ly = rot[1] * dx + rot[4] * dy + rot[7] * dz
    t.lz = rot[2] * dx + rot[5] * dy + rot[8] * dz
    t.ax = fabs(t.lx) / scl[0]
    t.ay = fabs(t.ly) / scl[1]
    t.az = fabs(t.lz) / scl[2]
    t.pax = pow(t.ax, ex[0]) if t.ax > 0.0 else 0.0
    t.pay = pow(t.ay, ex[0]) if t.ay > 0.0 else 0.0
    t.A = t.pax + t.pay
    if t.A > 0.0:
        t.fA = pow(t.A, ex[1])
        t.Ag = t.fA / t.A
    else:
        t.fA = 0.0
        t.Ag = 0.0
    t.paz = pow(t.az, ex[2]) if t.az > 0.0 else 0.0
    t.f = t.fA + t.paz
    t.p = exp(-lam * t.f)


def eval_points(const double[:, ::1] pts,
                const double[:, ::1] cen, const double[:, ::1] rot, const double[:, ::1] scl,
                const double[:, ::1] ex, const double[::1] sig, const double[:, ::1] sem,
                double lam, double cut,
                double[::1] acc, double[:, ::1] num, double[::1] den):
    """Field evaluation at arbitrary points over the full scene.

    cut = 0.0 disables the cutoff (every contribution counts). acc must
    come in as ones, num/den as zeros; accumulation runs in ascending
    primitive order, identical to the splat kernels.
    """
    cdef Py_ssize_t n = pts.shape[0], M = cen.shape[0], C = sem.shape[1]
    cdef Py_ssize_t j, i, k
    cdef double p, w
    with nogil:
        for j in range(n):
            for i in range(M):
                p = eval_occ(pts[j, 0], pts[j, 1], pts[j, 2],
                             &cen[i, 0], &rot[i, 0], &scl[i, 0], &ex[i, 0], lam)
                if p < cut:
                    continue
                acc[j] *= 1.0 - p
                w = p * sig[i]
                den[j] += w
                for k in range(C):
                    num[j, k] += w * sem[i, k]


def splat_scan(const double[:, ::1] cen, const double[:, ::1] rot, const double[:, ::1] scl,
               const double[:, ::1] ex, const double[::1] sig, const double[:, ::1] sem,
               const int[:, ::1] cbox,
               const double[::1] org, const double[::1] h, int nx, int ny, int nz,
               double lam, double cut,
               double[::1] acc, double[:, ::1] num, double[::1] den,
               Py_ssize_t v0, Py_ssize_t v1):
    """Voxel-level baseline over the flat voxel range [v0, v1).

    Each voxel matches against every primitive (bounding-box containment
    of its center) and evaluates the survivors. No binning, no sorting:
    this is the per-voxel matching loop the tile table replaces.
    """
    cdef Py_ssize_t v, i, k, M = cen.shape[0], C = sem.shape[1]
    cdef int ix, iy, iz
    cdef double px, py, pz, p, w, a, d
    with nogil:
        for v in range(v0, v1):
            ix = <int> (v % nx)
            iy = <int> ((v // nx) % ny)
            iz = <int> (v // (<Py_ssize_t> nx * ny))
            px = org[0] + (ix + 0.5) * h[0]
            py = org[1] + (iy + 0.5) * h[1]
            pz = org[2] + (iz + 0.5) * h[2]
            a = acc[v]
            d = den[v]
            for i in range(M):
                if (ix < cbox[i, 0] or ix > cbox[i, 3]
                        or iy < cbox[i, 1] or iy > cbox[i, 4]
                        or iz < cbox[i, 2] or iz > cbox[i, 5]):
                    continue
                p = eval_occ(px, py, pz, &cen[i, 0], &rot[i, 0],
                             &scl[i, 0], &ex[i, 0], lam)
                if p < cut:
                    continue
                a *= 1.0 - p
                w = p * sig[i]
                d += w
                for k in range(C):
                    num[v, k] += w * sem[i, k]
            acc[v] = a
            den[v] = d


def splat_tiled(const double[:, ::1] cen, const double[:, ::1] rot, const double[:, ::1] scl,
                const double[:, ::1] ex, const double[::1] sig, const double[:, ::1] sem,
                const int[:, ::1] cbox,
                const double[::1] org, const double[::1] h, int nx, int ny, int nz,
                double lam, double cut,
                const long[::1] pair_sq, const long[::1] ranges, int ts,
                double[::1] acc, double[:, ::1] num, double[::1] den,
                Py_ssize_t t0, Py_ssize_t t1):
    """Tile-table splat over the tile range [t0, t1).

    Per tile, the sorted primitive list is walked once and each primitive
    only touches the voxels of its center-box intersected with the tile,
    so the evaluated (voxel, primitive) set and the per-voxel accumulation
    order equal the scan path's.
    """
    cdef int ntx = (nx + ts - 1) // ts
    cdef int nty = (ny + ts - 1) // ts
    cdef Py_ssize_t t, j, i, v, C = sem.shape[1], k
    cdef int tx, ty, tz, x0, x1, y0, y1, z0, z1, ix, iy, iz
    cdef double px, py, pz, p, w
    with nogil:
        for t in range(t0, t1):
            tx = <int> (t % ntx)
            ty = <int> ((t // ntx) % nty)
            tz = <int> (t // (<Py_ssize_t> ntx * nty))
            for j in range(ranges[t], ranges[t + 1]):
                i = pair_sq[j]
                x0 = tx * ts
                if cbox[i, 0] > x0: x0 = cbox[i, 0]
                x1 = tx * ts + ts - 1
                if nx - 1 < x1: x1 = nx - 1
                if cbox[i, 3] < x1: x1 = cbox[i, 3]
                y0 = ty * ts
                if cbox[i, 1] > y0: y0 = cbox[i, 1]
                y1 = ty * ts + ts - 1
                if ny - 1 < y1: y1 = ny - 1
                if cbox[i, 4] < y1: y1 = cbox[i, 4]
                z0 = tz * ts
                if cbox[i, 2] > z0: z0 = cbox[i, 2]
                z1 = tz * ts + ts - 1
                if nz - 1 < z1: z1 = nz - 1
                if cbox[i, 5] < z1: z1 = cbox[i, 5]
                for iz in range(z0, z1 + 1):
                    pz = org[2] + (iz + 0.5) * h[2]
                    for iy in range(y0, y1 + 1):
                        py = org[1] + (iy + 0.5) * h[1]
                        for ix in range(x0, x1 + 1):
                            px = org[0] + (ix + 0.5) * h[0]
                            p = eval_occ(px, py, pz, &cen[i, 0], &rot[i, 0],
                                         &scl[i, 0], &ex[i, 0], lam)
                            if p < cut:
                                continue
                            v = ix + nx * (iy + <Py_ssize_t> ny * iz)
                            acc[v] *= 1.0 - p
                            w = p * sig[i]
                            den[v] += w
                            for k in range(C):
                                num[v, k] += w * sem[i, k]


cdef inline double loo_product(Py_ssize_t skip, Py_ssize_t r0, Py_ssize_t r1,
                               const long[::1] pair_sq, const int[:, ::1] cbox,
                               int ix, int iy, int iz,
                               double px, double py, double pz,
                               const double[:, ::1] cen, const double[:, ::1] rot,
                               const double[:, ::1] scl, const double[:, ::1] ex,
                               double lam, double cut) noexcept nogil:
    """Leave-one-out product of (1 - p_j) over a tile's list at one voxel.

    Only used when (1 - p_skip) is exactly zero and the cached total
    product cannot be divided through.
    """
    cdef double out = 1.0
    cdef Py_ssize_t j, i
    cdef double p
    for j in range(r0, r1):
        i = pair_sq[j]
        if i == skip:
            continue
        if (ix < cbox[i, 0] or ix > cbox[i, 3]
                or iy < cbox[i, 1] or iy > cbox[i, 4]
                or iz < cbox[i, 2] or iz > cbox[i, 5]):
            continue
        p = eval_occ(px, py, pz, &cen[i, 0], &rot[i, 0], &scl[i, 0], &ex[i, 0], lam)
        if p < cut:
            continue
        out *= 1.0 - p
    return out


def backward_pairs(const double[:, ::1] cen, const double[:, ::1] quat, const double[:, ::1] rot,
                   const double[:, ::1] scl, const double[:, ::1] ex, const double[:, ::1] eps,
                   const double[::1] sig, const double[:, ::1] sem, const int[:, ::1] cbox,
                   const double[::1] org, const double[::1] h, int nx, int ny, int nz,
                   double lam, double cut,
                   const long[::1] pair_sq, const long[::1] ranges, int ts,
                   const double[::1] acc, const double[::1] dJdP,
                   const double[::1] dJdden, const double[:, ::1] dJdnum,
                   double[:, ::1] rows, Py_ssize_t t0, Py_ssize_t t1):
    """Per-pair gradient rows for the tile range [t0, t1).

    acc is the forward complement product per voxel; dJdP/dJdden/dJdnum are
    the loss gradients w.r.t. the combined occupancy and the semantic
    aggregation's numerator/denominator, precomputed per voxel. Row j gets
    the full gradient of pair j's primitive summed over its subbox voxels:
    layout [m(3), q(4, unit-sphere), s(3), eps(2), sigma, sem(C, pre-norm)].
    Rows are disjoint per pair, so tile ranges parallelize safely; the
    final per-primitive reduction happens outside in a fixed order.
    """
    cdef int ntx = (nx + ts - 1) // ts
    cdef int nty = (ny + ts - 1) // ts
    cdef Py_ssize_t t, j, i, v, k, C = sem.shape[1]
    cdef int tx, ty, tz, x0, x1, y0, y1, z0, z1, ix, iy, iz
    cdef double px, py, pz, w, q1, loo, gsem_dot, g_p, coef
    cdef double dfdax, dfday, dfdaz, df_dexy, df_dg, df_dez
    cdef double gl_x, gl_y, gl_z, dx, dy, dz
    cdef double e1, e2, qw, qx, qy, qz
    cdef EvalTerms et
    with nogil:
        for t in range(t0, t1):
            tx = <int> (t % ntx)
            ty = <int> ((t // ntx) % nty)
            tz = <int> (t // (<Py_ssize_t> ntx * nty))
            for j in range(ranges[t], ranges[t + 1]):
                i = pair_sq[j]
                x0 = tx * ts
                if cbox[i, 0] > x0: x0 = cbox[i, 0]
                x1 = tx * ts + ts - 1
                if nx - 1 < x1: x1 = nx - 1
                if cbox[i, 3] < x1: x1 = cbox[i, 3]
                y0 = ty * ts
                if cbox[i, 1] > y0: y0 = cbox[i, 1]
                y1 = ty * ts + ts - 1
                if ny - 1 < y1: y1 = ny - 1
                if cbox[i, 4] < y1: y1 = cbox[i, 4]
                z0 = tz * ts
                if cbox[i, 2] > z0: z0 = cbox[i, 2]
                z1 = tz * ts + ts - 1
                if nz - 1 < z1: z1 = nz - 1
                if cbox[i, 5] < z1: z1 = cbox[i, 5]
                for iz in range(z0, z1 + 1):
                    pz = org[2] + (iz + 0.5) * h[2]
                    for iy in range(y0, y1 + 1):
                        py = org[1] + (iy + 0.5) * h[1]
                        for ix in range(x0, x1 + 1):
                            px = org[0] + (ix + 0.5) * h[0]
                            eval_full(px, py, pz, &cen[i, 0], &rot[i, 0],
                                      &scl[i, 0], &ex[i, 0], lam, &et)
                            if et.p < cut:
                                continue
                            v = ix + nx * (iy + <Py_ssize_t> ny * iz)

                            gsem_dot = 0.0
                            for k in range(C):
                                gsem_dot += dJdnum[v, k] * sem[i, k]
                            q1 = 1.0 - et.p
                            if q1 == 0.0:
                                loo = loo_product(i, ranges[t], ranges[t + 1],
                                                  pair_sq, cbox, ix, iy, iz,
                                                  px, py, pz, cen, rot, scl,
                                                  ex, lam, cut)
                            else:
                                loo = acc[v] / q1
                            # d(1 - prod(1-p_j)) / dp_i = prod_{j != i}(1-p_j)
                            g_p = dJdP[v] * loo + sig[i] * (dJdden[v] + gsem_dot)
                            rows[j, 12] += et.p * (dJdden[v] + gsem_dot)
                            w = et.p * sig[i]
                            for k in range(C):
                                rows[j, 13 + k] += dJdnum[v, k] * w

                            # geometric chain: dJ/df, then f's partials
                            coef = -lam * et.p * g_p
                            if coef == 0.0:
                                continue
                            dfdax = 0.0
                            dfday = 0.0
                            df_dexy = 0.0
                            df_dg = 0.0
                            if et.A > 0.0:
                                if et.ax > 0.0:
                                    dfdax = ex[i, 1] * et.Ag * ex[i, 0] * et.pax / et.ax
                                    df_dexy += et.pax * log(et.ax)
                                if et.ay > 0.0:
                                    dfday = ex[i, 1] * et.Ag * ex[i, 0] * et.pay / et.ay
                                    df_dexy += et.pay * log(et.ay)
                                df_dexy *= ex[i, 1] * et.Ag
                                df_dg = et.fA * log(et.A)
                            if et.az > 0.0:
                                dfdaz = ex[i, 2] * et.paz / et.az
                                df_dez = et.paz * log(et.az)
                            else:
                                dfdaz = 0.0
                                df_dez = 0.0

                            # local-coordinate gradients (sign of l through abs)
                            gl_x = coef * dfdax / scl[i, 0]
                            if et.lx < 0.0: gl_x = -gl_x
                            gl_y = coef * dfday / scl[i, 1]
                            if et.ly < 0.0: gl_y = -gl_y
                            gl_z = coef * dfdaz / scl[i, 2]
                            if et.lz < 0.0: gl_z = -gl_z

                            # center: dl_a/dm_b = -R[b,a]
                            rows[j, 0] -= rot[i, 0] * gl_x + rot[i, 1] * gl_y + rot[i, 2] * gl_z
                            rows[j, 1] -= rot[i, 3] * gl_x + rot[i, 4] * gl_y + rot[i, 5] * gl_z
                            rows[j, 2] -= rot[i, 6] * gl_x + rot[i, 7] * gl_y + rot[i, 8] * gl_z

                            # scale: da_x/ds_x = -a_x/s_x
                            rows[j, 7] -= coef * dfdax * et.ax / scl[i, 0]
                            rows[j, 8] -= coef * dfday * et.ay / scl[i, 1]
                            rows[j, 9] -= coef * dfdaz * et.az / scl[i, 2]

                            # squareness chain through e_xy = 2/eps2,
                            # g = eps2/eps1, e_z = 2/eps1
                            e1 = eps[i, 0]
                            e2 = eps[i, 1]
                            rows[j, 10] += coef * (df_dg * (-e2 / (e1 * e1))
                                                   + df_dez * (-2.0 / (e1 * e1)))
                            rows[j, 11] += coef * (df_dexy * (-2.0 / (e2 * e2))
                                                   + df_dg / e1)

                            # quaternion: dl_a/dq_c = sum_b dR[b,a]/dq_c * d_b
                            dx = px - cen[i, 0]
                            dy = py - cen[i, 1]
                            dz = pz - cen[i, 2]
                            qw = quat[i, 0]
                            qx = quat[i, 1]
                            qy = quat[i, 2]
                            qz = quat[i, 3]
                            # dR/dw = 2[[0,-qz,qy],[qz,0,-qx],[-qy,qx,0]]
                            rows[j, 3] += 2.0 * (
                                gl_x * (qz * dy - qy * dz)
                                + gl_y * (-qz * dx + qx * dz)
                                + gl_z * (qy * dx - qx * dy))
                            # dR/dx = 2[[0,qy,qz],[qy,-2qx,-qw],[qz,qw,-2qx]]
                            rows[j, 4] += 2.0 * (
                                gl_x * (qy * dy + qz * dz)
                                + gl_y * (qy * dx - 2.0 * qx * dy + qw * dz)
                                + gl_z * (qz * dx - qw * dy - 2.0 * qx * dz))
                            # dR/dy = 2[[-2qy,qx,qw],[qx,0,qz],[-qw,qz,-2qy]]
                            rows[j, 5] += 2.0 * (
                                gl_x * (-2.0 * qy * dx + qx * dy - qw * dz)
                                + gl_y * (qx * dx + qz * dz)
                                + gl_z * (qw * dx + qz * dy - 2.0 * qy * dz))
                            # dR/dz = 2[[-2qz,-qw,qx],[qw,-2qz,qy],[qx,qy,0]]
                            rows[j, 6] += 2.0 * (
                                gl_x * (-2.0 * qz * dx + qw * dy + qx * dz)
                                + gl_y * (-qw * dx - 2.0 * qz * dy + qy * dz)
                                + gl_z * (qx * dx + qy * dy))
