# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rasterization and soft-silhouette kernels.

Same conventions and operation order as ``_pykernels``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, ceil, sqrt, fabs, INFINITY

cnp.import_array()

cdef double DEGENERATE_AREA = 1e-14
cdef double SIL_CUTOFF = 50.0


cdef inline double _min3(double a, double b, double c) nogil:
    cdef double m = a if a < b else b
    return m if m < c else c


cdef inline double _max3(double a, double b, double c) nogil:
    cdef double m = a if a > b else b
    return m if m > c else c


cdef inline void _window(double lo_x, double hi_x, double lo_y, double hi_y, int width, int height,
                         int* j0, int* j1, int* i0, int* i1) nogil:
    # clamp in floating point before casting; an empty range means j0 > j1
    cdef double a = floor((lo_x + 1.0) * width * 0.5 - 0.5) - 1.0
    cdef double b = ceil((hi_x + 1.0) * width * 0.5 - 0.5) + 1.0
    cdef double c = floor((1.0 - hi_y) * height * 0.5 - 0.5) - 1.0
    cdef double d = ceil((1.0 - lo_y) * height * 0.5 - 0.5) + 1.0
    j0[0] = <int>(0.0 if a < 0.0 else (<double>width if a > width else a))
    j1[0] = <int>(-1.0 if b < -1.0 else (<double>(width - 1) if b > width - 1 else b))
    i0[0] = <int>(0.0 if c < 0.0 else (<double>height if c > height else c))
    i1[0] = <int>(-1.0 if d < -1.0 else (<double>(height - 1) if d > height - 1 else d))


def rasterize(screen, depth, triangles, int width, int height):
    cdef const double[:, ::1] scr = np.ascontiguousarray(screen, dtype=np.float64)
    cdef const double[::1] dep = np.ascontiguousarray(depth, dtype=np.float64)
    cdef const long long[:, ::1] tri = np.ascontiguousarray(triangles, dtype=np.int64)
    tri_id_arr = np.full((height, width), -1, dtype=np.int64)
    bary_arr = np.zeros((height, width, 3))
    zbuf_arr = np.full((height, width), np.inf)
    cdef long long[:, ::1] tri_id = tri_id_arr
    cdef double[:, :, ::1] bary = bary_arr
    cdef double[:, ::1] zbuf = zbuf_arr
    cdef Py_ssize_t t, m = tri.shape[0]
    cdef long long ia, ib, ic
    cdef double ax, ay, bx, by, cx, cy, area, px, py, w0, w1, w2, l0, l1, l2, z
    cdef int i, j, i0, i1, j0, j1
    with nogil:
        for t in range(m):
            ia = tri[t, 0]
            ib = tri[t, 1]
            ic = tri[t, 2]
            ax = scr[ia, 0]; ay = scr[ia, 1]
            bx = scr[ib, 0]; by = scr[ib, 1]
            cx = scr[ic, 0]; cy = scr[ic, 1]
            area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if not (fabs(area) > DEGENERATE_AREA):
                continue
            _window(_min3(ax, bx, cx), _max3(ax, bx, cx), _min3(ay, by, cy), _max3(ay, by, cy),
                    width, height, &j0, &j1, &i0, &i1)
            for i in range(i0, i1 + 1):
                py = 1.0 - (2.0 * i + 1.0) / height
                for j in range(j0, j1 + 1):
                    px = (2.0 * j + 1.0) / width - 1.0
                    w0 = (bx - px) * (cy - py) - (by - py) * (cx - px)
                    w1 = (cx - px) * (ay - py) - (cy - py) * (ax - px)
                    w2 = (ax - px) * (by - py) - (ay - py) * (bx - px)
                    l0 = w0 / area
                    l1 = w1 / area
                    l2 = w2 / area
                    if l0 >= 0 and l1 >= 0 and l2 >= 0:
                        z = l0 * dep[ia] + l1 * dep[ib] + l2 * dep[ic]
                        if z < zbuf[i, j]:
                            zbuf[i, j] = z
                            tri_id[i, j] = t
                            bary[i, j, 0] = l0
                            bary[i, j, 1] = l1
                            bary[i, j, 2] = l2
    return tri_id_arr, bary_arr, zbuf_arr


cdef inline double _seg(double ax, double ay, double bx, double by, double px, double py,
                        double* t_out, double* dx_out, double* dy_out) nogil:
    cdef double ex = bx - ax
    cdef double ey = by - ay
    cdef double len2 = ex * ex + ey * ey
    cdef double t = ((px - ax) * ex + (py - ay) * ey) / len2
    if t < 0.0:
        t = 0.0
    if t > 1.0:
        t = 1.0
    cdef double qx = ax + t * ex
    cdef double qy = ay + t * ey
    cdef double dx = px - qx
    cdef double dy = py - qy
    t_out[0] = t
    dx_out[0] = dx
    dy_out[0] = dy
    return dx * dx + dy * dy


cdef inline double _pair(double ax, double ay, double bx, double by, double cx, double cy,
                         double area, double px, double py, double sigma,
                         double* sign, int* e, double* t, double* dx, double* dy) nogil:
    cdef double w0 = (bx - px) * (cy - py) - (by - py) * (cx - px)
    cdef double w1 = (cx - px) * (ay - py) - (cy - py) * (ax - px)
    cdef double w2 = (ax - px) * (by - py) - (ay - py) * (bx - px)
    cdef bint inside = (w0 / area >= 0) and (w1 / area >= 0) and (w2 / area >= 0)
    cdef double t0, t1, t2, x0, x1, x2, y0, y1, y2
    cdef double d0 = _seg(ax, ay, bx, by, px, py, &t0, &x0, &y0)
    cdef double d1 = _seg(bx, by, cx, cy, px, py, &t1, &x1, &y1)
    cdef double d2 = _seg(cx, cy, ax, ay, px, py, &t2, &x2, &y2)
    cdef double best = d0
    e[0] = 0
    t[0] = t0; dx[0] = x0; dy[0] = y0
    if d1 < best:
        best = d1
        e[0] = 1
        t[0] = t1; dx[0] = x1; dy[0] = y1
    if d2 < best:
        best = d2
        e[0] = 2
        t[0] = t2; dx[0] = x2; dy[0] = y2
    sign[0] = 1.0 if inside else -1.0
    return sign[0] * best / sigma


def soft_silhouette(screen, triangles, int width, int height, double sigma):
    cdef const double[:, ::1] scr = np.ascontiguousarray(screen, dtype=np.float64)
    cdef const long long[:, ::1] tri = np.ascontiguousarray(triangles, dtype=np.int64)
    qnz_arr = np.ones((height, width))
    nzero_arr = np.zeros((height, width), dtype=np.int64)
    cdef double[:, ::1] qnz = qnz_arr
    cdef long long[:, ::1] nzero = nzero_arr
    cdef double reach = sqrt(SIL_CUTOFF * sigma)
    cdef Py_ssize_t t, m = tri.shape[0]
    cdef long long ia, ib, ic
    cdef double ax, ay, bx, by, cx, cy, area, px, py, x, q, sign, tt, dx, dy
    cdef int i, j, i0, i1, j0, j1, e
    with nogil:
        for t in range(m):
            ia = tri[t, 0]
            ib = tri[t, 1]
            ic = tri[t, 2]
            ax = scr[ia, 0]; ay = scr[ia, 1]
            bx = scr[ib, 0]; by = scr[ib, 1]
            cx = scr[ic, 0]; cy = scr[ic, 1]
            area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if not (fabs(area) > DEGENERATE_AREA):
                continue
            _window(_min3(ax, bx, cx) - reach, _max3(ax, bx, cx) + reach,
                    _min3(ay, by, cy) - reach, _max3(ay, by, cy) + reach,
                    width, height, &j0, &j1, &i0, &i1)
            for i in range(i0, i1 + 1):
                py = 1.0 - (2.0 * i + 1.0) / height
                for j in range(j0, j1 + 1):
                    px = (2.0 * j + 1.0) / width - 1.0
                    x = _pair(ax, ay, bx, by, cx, cy, area, px, py, sigma, &sign, &e, &tt, &dx, &dy)
                    if not (x > -SIL_CUTOFF):
                        continue
                    q = 1.0 / (1.0 + exp(x))
                    if q == 0.0:
                        nzero[i, j] += 1
                    else:
                        qnz[i, j] = qnz[i, j] * q
    sil = np.where(nzero_arr > 0, 1.0, 1.0 - qnz_arr)
    return sil, qnz_arr, nzero_arr


def soft_silhouette_backward(grad_sil, screen, triangles, int width, int height, double sigma,
                             qnz_in, nzero_in):
    cdef const double[:, ::1] g = np.ascontiguousarray(grad_sil, dtype=np.float64)
    cdef const double[:, ::1] scr = np.ascontiguousarray(screen, dtype=np.float64)
    cdef const long long[:, ::1] tri = np.ascontiguousarray(triangles, dtype=np.int64)
    cdef const double[:, ::1] qnz = np.ascontiguousarray(qnz_in, dtype=np.float64)
    cdef const long long[:, ::1] nzero = np.ascontiguousarray(nzero_in, dtype=np.int64)
    d_arr = np.zeros((scr.shape[0], 2))
    cdef double[:, ::1] d_scr = d_arr
    cdef double reach = sqrt(SIL_CUTOFF * sigma)
    cdef Py_ssize_t t, m = tri.shape[0]
    cdef long long v[3]
    cdef double ax, ay, bx, by, cx, cy, area, px, py, x, q, dd, sign, tt, dx, dy
    cdef double others, gx, gd2, g0, g1
    cdef int i, j, i0, i1, j0, j1, e
    with nogil:
        for t in range(m):
            v[0] = tri[t, 0]
            v[1] = tri[t, 1]
            v[2] = tri[t, 2]
            ax = scr[v[0], 0]; ay = scr[v[0], 1]
            bx = scr[v[1], 0]; by = scr[v[1], 1]
            cx = scr[v[2], 0]; cy = scr[v[2], 1]
            area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if not (fabs(area) > DEGENERATE_AREA):
                continue
            _window(_min3(ax, bx, cx) - reach, _max3(ax, bx, cx) + reach,
                    _min3(ay, by, cy) - reach, _max3(ay, by, cy) + reach,
                    width, height, &j0, &j1, &i0, &i1)
            for i in range(i0, i1 + 1):
                py = 1.0 - (2.0 * i + 1.0) / height
                for j in range(j0, j1 + 1):
                    if g[i, j] == 0.0:
                        continue
                    px = (2.0 * j + 1.0) / width - 1.0
                    x = _pair(ax, ay, bx, by, cx, cy, area, px, py, sigma, &sign, &e, &tt, &dx, &dy)
                    if not (x > -SIL_CUTOFF):
                        continue
                    q = 1.0 / (1.0 + exp(x))
                    dd = 1.0 / (1.0 + exp(-x))
                    if q == 0.0:
                        others = qnz[i, j] if nzero[i, j] == 1 else 0.0
                    else:
                        others = qnz[i, j] / q if nzero[i, j] == 0 else 0.0
                    gx = g[i, j] * others * dd * q
                    gd2 = gx * sign / sigma
                    g0 = -2.0 * gd2 * (1.0 - tt)
                    g1 = -2.0 * gd2 * tt
                    d_scr[v[e], 0] += g0 * dx
                    d_scr[v[e], 1] += g0 * dy
                    d_scr[v[(e + 1) % 3], 0] += g1 * dx
                    d_scr[v[(e + 1) % 3], 1] += g1 * dy
    return d_arr
