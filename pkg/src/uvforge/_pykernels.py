"""Pure-numpy rasterization and soft-silhouette kernels.

Screen space is the square viewport [-1,1]^2 with +y up; pixel (i, j)
has its center at x = (2j+1)/W - 1, y = 1 - (2i+1)/H. The arithmetic
mirrors ``_ckernels.pyx`` operation for operation so both backends agree.
"""
import numpy as np

DEGENERATE_AREA = 1e-14
# logistic(-SIL_CUTOFF) ~ 2e-22: pairs farther out contribute nothing
SIL_CUTOFF = 50.0


def pixel_x(width):
    return (2.0 * np.arange(width) + 1.0) / width - 1.0


def pixel_y(height):
    return 1.0 - (2.0 * np.arange(height) + 1.0) / height


def _window(lo_x, hi_x, lo_y, hi_y, width, height):
    """Inclusive pixel index ranges whose centers may fall in the box (padded by one)."""
    a = np.floor((lo_x + 1.0) * width * 0.5 - 0.5) - 1.0
    b = np.ceil((hi_x + 1.0) * width * 0.5 - 0.5) + 1.0
    c = np.floor((1.0 - hi_y) * height * 0.5 - 0.5) - 1.0
    d = np.ceil((1.0 - lo_y) * height * 0.5 - 0.5) + 1.0
    j0 = int(min(max(a, 0.0), width))
    j1 = int(min(max(b, -1.0), width - 1))
    i0 = int(min(max(c, 0.0), height))
    i1 = int(min(max(d, -1.0), height - 1))
    return i0, i1, j0, j1


def _edge_weights(ax, ay, bx, by, cx, cy, px, py):
    w0 = (bx - px) * (cy - py) - (by - py) * (cx - px)
    w1 = (cx - px) * (ay - py) - (cy - py) * (ax - px)
    w2 = (ax - px) * (by - py) - (ay - py) * (bx - px)
    return w0, w1, w2


def rasterize(screen, depth, triangles, width, height):
    screen = np.ascontiguousarray(screen, dtype=np.float64)
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    tri_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    zbuf = np.full((height, width), np.inf)
    xs = pixel_x(width)
    ys = pixel_y(height)
    for t in range(triangles.shape[0]):
        ia, ib, ic = triangles[t]
        ax, ay = screen[ia]
        bx, by = screen[ib]
        cx, cy = screen[ic]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if not (abs(area) > DEGENERATE_AREA):
            continue
        i0, i1, j0, j1 = _window(min(ax, bx, cx), max(ax, bx, cx), min(ay, by, cy), max(ay, by, cy),
                                 width, height)
        if j0 > j1 or i0 > i1:
            continue
        px = xs[None, j0:j1 + 1]
        py = ys[i0:i1 + 1, None]
        w0, w1, w2 = _edge_weights(ax, ay, bx, by, cx, cy, px, py)
        l0 = w0 / area
        l1 = w1 / area
        l2 = w2 / area
        z = l0 * depth[ia] + l1 * depth[ib] + l2 * depth[ic]
        zb = zbuf[i0:i1 + 1, j0:j1 + 1]
        upd = (l0 >= 0) & (l1 >= 0) & (l2 >= 0) & (z < zb)
        if not upd.any():
            continue
        zb[upd] = z[upd]
        tri_id[i0:i1 + 1, j0:j1 + 1][upd] = t
        sub = bary[i0:i1 + 1, j0:j1 + 1]
        sub[..., 0][upd] = l0[upd]
        sub[..., 1][upd] = l1[upd]
        sub[..., 2][upd] = l2[upd]
    return tri_id, bary, zbuf


def _seg_d2(ax, ay, bx, by, px, py):
    ex = bx - ax
    ey = by - ay
    len2 = ex * ex + ey * ey
    t = ((px - ax) * ex + (py - ay) * ey) / len2
    t = np.minimum(np.maximum(t, 0.0), 1.0)
    qx = ax + t * ex
    qy = ay + t * ey
    dx = px - qx
    dy = py - qy
    return dx * dx + dy * dy, t, dx, dy


def _pair_terms(ax, ay, bx, by, cx, cy, area, px, py, sigma):
    """Per-pixel x = sign*d^2/sigma for one triangle plus the nearest-edge data."""
    w0, w1, w2 = _edge_weights(ax, ay, bx, by, cx, cy, px, py)
    inside = (w0 / area >= 0) & (w1 / area >= 0) & (w2 / area >= 0)
    d_ab, t_ab, dx_ab, dy_ab = _seg_d2(ax, ay, bx, by, px, py)
    d_bc, t_bc, dx_bc, dy_bc = _seg_d2(bx, by, cx, cy, px, py)
    d_ca, t_ca, dx_ca, dy_ca = _seg_d2(cx, cy, ax, ay, px, py)
    # nearest edge, first one wins ties
    e = np.where(d_bc < d_ab, 1, 0)
    d2 = np.where(e == 1, d_bc, d_ab)
    e = np.where(d_ca < d2, 2, e)
    d2 = np.where(e == 2, d_ca, d2)
    sign = np.where(inside, 1.0, -1.0)
    x = sign * d2 / sigma
    t = np.choose(e, [t_ab, t_bc, t_ca])
    dx = np.choose(e, [dx_ab, dx_bc, dx_ca])
    dy = np.choose(e, [dy_ab, dy_bc, dy_ca])
    return x, sign, e, t, dx, dy


def _tri_window(screen, tri, width, height, sigma):
    ia, ib, ic = tri
    ax, ay = screen[ia]
    bx, by = screen[ib]
    cx, cy = screen[ic]
    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if not (abs(area) > DEGENERATE_AREA):
        return None
    reach = np.sqrt(SIL_CUTOFF * sigma)
    i0, i1, j0, j1 = _window(min(ax, bx, cx) - reach, max(ax, bx, cx) + reach,
                             min(ay, by, cy) - reach, max(ay, by, cy) + reach, width, height)
    if j0 > j1 or i0 > i1:
        return None
    return (ax, ay, bx, by, cx, cy, area), (i0, i1, j0, j1)


def soft_silhouette(screen, triangles, width, height, sigma):
    """Returns (silhouette, product of nonzero (1-D_j), count of zero factors)."""
    screen = np.ascontiguousarray(screen, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    qnz = np.ones((height, width))
    nzero = np.zeros((height, width), dtype=np.int64)
    xs = pixel_x(width)
    ys = pixel_y(height)
    with np.errstate(over="ignore"):
        for t in range(triangles.shape[0]):
            win = _tri_window(screen, triangles[t], width, height, sigma)
            if win is None:
                continue
            (ax, ay, bx, by, cx, cy, area), (i0, i1, j0, j1) = win
            px = xs[None, j0:j1 + 1]
            py = ys[i0:i1 + 1, None]
            x, *_ = _pair_terms(ax, ay, bx, by, cx, cy, area, px, py, sigma)
            active = x > -SIL_CUTOFF
            q = 1.0 / (1.0 + np.exp(x))
            zero = active & (q == 0.0)
            mul = active & ~zero
            sub = qnz[i0:i1 + 1, j0:j1 + 1]
            sub[mul] = sub[mul] * q[mul]
            nzero[i0:i1 + 1, j0:j1 + 1] += zero
    sil = np.where(nzero > 0, 1.0, 1.0 - qnz)
    return sil, qnz, nzero


def soft_silhouette_backward(grad_sil, screen, triangles, width, height, sigma, qnz, nzero):
    screen = np.ascontiguousarray(screen, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    grad_sil = np.asarray(grad_sil, dtype=np.float64)
    d_screen = np.zeros_like(screen)
    xs = pixel_x(width)
    ys = pixel_y(height)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for t in range(triangles.shape[0]):
            win = _tri_window(screen, triangles[t], width, height, sigma)
            if win is None:
                continue
            (ax, ay, bx, by, cx, cy, area), (i0, i1, j0, j1) = win
            px = xs[None, j0:j1 + 1]
            py = ys[i0:i1 + 1, None]
            x, sign, e, tt, dx, dy = _pair_terms(ax, ay, bx, by, cx, cy, area, px, py, sigma)
            active = x > -SIL_CUTOFF
            q = 1.0 / (1.0 + np.exp(x))
            d = 1.0 / (1.0 + np.exp(-x))
            qn = qnz[i0:i1 + 1, j0:j1 + 1]
            nz = nzero[i0:i1 + 1, j0:j1 + 1]
            others = np.where(q == 0.0, np.where(nz == 1, qn, 0.0), np.where(nz == 0, qn / q, 0.0))
            gx = grad_sil[i0:i1 + 1, j0:j1 + 1] * others * d * q
            gx = np.where(active, gx, 0.0)
            # d(d2) for the nearest segment (p0 -> p1): envelope of the clamped projection
            gd2 = gx * sign / sigma
            g0 = -2.0 * gd2 * (1.0 - tt)
            g1 = -2.0 * gd2 * tt
            verts = triangles[t]
            for k in range(3):
                sel = e == k
                if not sel.any():
                    continue
                v0 = verts[k]
                v1 = verts[(k + 1) % 3]
                d_screen[v0, 0] += np.sum((g0 * dx)[sel])
                d_screen[v0, 1] += np.sum((g0 * dy)[sel])
                d_screen[v1, 0] += np.sum((g1 * dx)[sel])
                d_screen[v1, 1] += np.sum((g1 * dy)[sel])
    return d_screen
