"""Compiled rasterization inner loops.

Both kernels are batch-major: they take projected vertices for K poses at
once so a finite-difference probe set amortizes one kernel launch. Loops are
serial per image, which keeps z-buffer updates deterministic (first face
index wins exact ties).
"""

import numpy as np
from numba import njit

# Beyond this, log(1 + e^x) == x to double precision.
_LOG1P_EXP_CUTOFF = 35.0
# Once sum of log-factors drops below this, 1 - exp(sum) rounds to exactly 1.
_SATURATED_LOG = -45.0


@njit(cache=True)
def hard_raster_batch(xy, z, faces, height, width, zbuf, fidx):
    """Z-buffered coverage for K projected meshes.

    xy    : (K, V, 2) projected vertex positions, pixels.
    z     : (K, V) camera-space vertex depths.
    faces : (F, 3) int64.
    zbuf  : (K, H, W) float64, preset to +inf; interpolated z on coverage.
    fidx  : (K, H, W) int32, preset to -1; covering face index.

    A pixel is covered when its center (col + 0.5, row + 0.5) lies strictly
    inside a projected triangle, or on an edge that passes the top-left rule.
    Nearest (smallest) z wins; exact ties keep the lower face index.
    """
    K = xy.shape[0]
    F = faces.shape[0]
    for k in range(K):
        for f in range(F):
            i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
            ax, ay, az = xy[k, i0, 0], xy[k, i0, 1], z[k, i0]
            bx, by, bz = xy[k, i1, 0], xy[k, i1, 1], z[k, i1]
            cx, cy, cz = xy[k, i2, 0], xy[k, i2, 1], z[k, i2]
            area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if area2 == 0.0:
                continue
            if area2 < 0.0:
                bx, cx = cx, bx
                by, cy = cy, by
                bz, cz = cz, bz
                area2 = -area2
            lo_x = min(ax, min(bx, cx))
            hi_x = max(ax, max(bx, cx))
            lo_y = min(ay, min(by, cy))
            hi_y = max(ay, max(by, cy))
            c0 = int(np.ceil(lo_x - 0.5))
            c1 = int(np.floor(hi_x - 0.5))
            r0 = int(np.ceil(lo_y - 0.5))
            r1 = int(np.floor(hi_y - 0.5))
            if c0 < 0:
                c0 = 0
            if r0 < 0:
                r0 = 0
            if c1 > width - 1:
                c1 = width - 1
            if r1 > height - 1:
                r1 = height - 1
            if c0 > c1 or r0 > r1:
                continue
            # Edge vectors (a->b, b->c, c->a); interior is on the positive
            # side of every edge cross product.
            e0x, e0y = bx - ax, by - ay
            e1x, e1y = cx - bx, cy - by
            e2x, e2y = ax - cx, ay - cy
            tl0 = (e0y == 0.0 and e0x > 0.0) or e0y < 0.0
            tl1 = (e1y == 0.0 and e1x > 0.0) or e1y < 0.0
            tl2 = (e2y == 0.0 and e2x > 0.0) or e2y < 0.0
            for r in range(r0, r1 + 1):
                py = r + 0.5
                for c in range(c0, c1 + 1):
                    px = c + 0.5
                    w0 = e0x * (py - ay) - e0y * (px - ax)
                    w1 = e1x * (py - by) - e1y * (px - bx)
                    w2 = e2x * (py - cy) - e2y * (px - cx)
                    ok0 = w0 > 0.0 or (w0 == 0.0 and tl0)
                    ok1 = w1 > 0.0 or (w1 == 0.0 and tl1)
                    ok2 = w2 > 0.0 or (w2 == 0.0 and tl2)
                    if not (ok0 and ok1 and ok2):
                        continue
                    # w1 spans (b, c, p): barycentric weight of a, etc.
                    lam_a = w1 / area2
                    lam_b = w2 / area2
                    lam_c = w0 / area2
                    zp = lam_a * az + lam_b * bz + lam_c * cz
                    if zp < zbuf[k, r, c]:
                        zbuf[k, r, c] = zp
                        fidx[k, r, c] = f
    return zbuf, fidx


@njit(cache=True)
def _segment_distance(px, py, ux, uy, vx, vy):
    dx, dy = vx - ux, vy - uy
    l2 = dx * dx + dy * dy
    if l2 == 0.0:
        qx, qy = ux, uy
    else:
        t = ((px - ux) * dx + (py - uy) * dy) / l2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        qx, qy = ux + t * dx, uy + t * dy
    rx, ry = px - qx, py - qy
    return np.sqrt(rx * rx + ry * ry)


@njit(cache=True)
def soft_weighted_sum_batch(xy, faces, height, width, sigma, weights, nz_r, nz_c, scratch, out):
    """Per-mesh weighted sums of the soft mask: out[k] = sum_p w_p * m_k(p).

    Identical mask math to soft_raster_batch, but pixels with zero weight are
    skipped outright, which makes probe batches cheap when the weight field
    is sparse. nz_r/nz_c list the nonzero-weight pixels; scratch is an (H, W)
    float64 buffer that must arrive zeroed and is re-zeroed before return.
    """
    K = xy.shape[0]
    F = faces.shape[0]
    M = nz_r.shape[0]
    reach = 3.0 * sigma
    for k in range(K):
        for f in range(F):
            i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
            ax, ay = xy[k, i0, 0], xy[k, i0, 1]
            bx, by = xy[k, i1, 0], xy[k, i1, 1]
            cx, cy = xy[k, i2, 0], xy[k, i2, 1]
            area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            flip = area2 < 0.0
            degenerate = area2 == 0.0
            lo_x = min(ax, min(bx, cx)) - reach
            hi_x = max(ax, max(bx, cx)) + reach
            lo_y = min(ay, min(by, cy)) - reach
            hi_y = max(ay, max(by, cy)) + reach
            c0 = max(int(np.ceil(lo_x - 0.5)), 0)
            c1 = min(int(np.floor(hi_x - 0.5)), width - 1)
            r0 = max(int(np.ceil(lo_y - 0.5)), 0)
            r1 = min(int(np.floor(hi_y - 0.5)), height - 1)
            if c0 > c1 or r0 > r1:
                continue
            for r in range(r0, r1 + 1):
                py = r + 0.5
                for c in range(c0, c1 + 1):
                    if weights[r, c] == 0.0:
                        continue
                    if scratch[r, c] <= _SATURATED_LOG:
                        continue
                    px = c + 0.5
                    w0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                    w1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                    w2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                    if flip:
                        w0, w1, w2 = -w0, -w1, -w2
                    inside = (not degenerate) and w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0
                    d0 = _segment_distance(px, py, ax, ay, bx, by)
                    d1 = _segment_distance(px, py, bx, by, cx, cy)
                    d2 = _segment_distance(px, py, cx, cy, ax, ay)
                    d = min(d0, min(d1, d2))
                    if not inside:
                        d = -d
                        if d < -reach:
                            continue
                    x = d / sigma
                    if x > _LOG1P_EXP_CUTOFF:
                        scratch[r, c] -= x
                    else:
                        scratch[r, c] -= np.log1p(np.exp(x))
        total = 0.0
        for i in range(M):
            r, c = nz_r[i], nz_c[i]
            total += weights[r, c] * (-np.expm1(scratch[r, c]))
            scratch[r, c] = 0.0
        out[k] = total
    return out


@njit(cache=True, inline="always")
def _face_log_factor(px, py, ax, ay, bx, by, cx, cy, flip, degenerate, reach, sigma):
    """Amount a single triangle subtracts from a pixel's log accumulator.

    Returns 0.0 when the pixel is beyond the triangle's reach (factor 1);
    every in-reach pixel gets a strictly positive value, so 0.0 is a safe
    out-of-reach sentinel.
    """
    w0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    w1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
    w2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
    if flip:
        w0, w1, w2 = -w0, -w1, -w2
    inside = (not degenerate) and w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0
    d0 = _segment_distance(px, py, ax, ay, bx, by)
    d1 = _segment_distance(px, py, bx, by, cx, cy)
    d2 = _segment_distance(px, py, cx, cy, ax, ay)
    d = min(d0, min(d1, d2))
    if not inside:
        d = -d
        if d < -reach:
            return 0.0
    x = d / sigma
    if x > _LOG1P_EXP_CUTOFF:
        return x
    return np.log1p(np.exp(x))


@njit(cache=True)
def soft_log_base_kernel(xy, faces, height, width, sigma, weights, nz_r, nz_c, log_acc):
    """Exact log-factor sums of one mesh at every nonzero-weight pixel.

    Same mask math as soft_weighted_sum_batch but without the saturation
    shortcut, so log_acc holds the full sum wherever weights != 0 and stays
    0 elsewhere. log_acc must arrive zeroed. Returns sum_p w_p * m(p).
    """
    F = faces.shape[0]
    reach = 3.0 * sigma
    for f in range(F):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        ax, ay = xy[i0, 0], xy[i0, 1]
        bx, by = xy[i1, 0], xy[i1, 1]
        cx, cy = xy[i2, 0], xy[i2, 1]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        flip = area2 < 0.0
        degenerate = area2 == 0.0
        lo_x = min(ax, min(bx, cx)) - reach
        hi_x = max(ax, max(bx, cx)) + reach
        lo_y = min(ay, min(by, cy)) - reach
        hi_y = max(ay, max(by, cy)) + reach
        c0 = max(int(np.ceil(lo_x - 0.5)), 0)
        c1 = min(int(np.floor(hi_x - 0.5)), width - 1)
        r0 = max(int(np.ceil(lo_y - 0.5)), 0)
        r1 = min(int(np.floor(hi_y - 0.5)), height - 1)
        if c0 > c1 or r0 > r1:
            continue
        for r in range(r0, r1 + 1):
            py = r + 0.5
            for c in range(c0, c1 + 1):
                if weights[r, c] == 0.0:
                    continue
                px = c + 0.5
                log_acc[r, c] -= _face_log_factor(
                    px, py, ax, ay, bx, by, cx, cy, flip, degenerate, reach, sigma
                )
    total = 0.0
    for i in range(nz_r.shape[0]):
        r, c = nz_r[i], nz_c[i]
        total += weights[r, c] * (-np.expm1(log_acc[r, c]))
    return total


@njit(cache=True)
def soft_delta_batch(
    base_xy,
    probe_xy,
    faces,
    probe_face_ids,
    probe_face_off,
    height,
    width,
    sigma,
    weights,
    log_acc,
    base_total,
    stamp,
    dlog,
    touched,
    out,
):
    """Weighted soft-mask sums for probes that each displace a face subset.

    Probe k moves faces probe_face_ids[probe_face_off[k]:probe_face_off[k+1]]
    from their base_xy footprint to probe_xy[k]; every other face must
    project identically in both (their factors then cancel exactly). For each
    touched nonzero-weight pixel the moved faces' base factors are un-applied
    and their probe factors applied on top of log_acc, and

        out[k] = base_total + sum_p w_p * (m_probe(p) - m_base(p)).

    log_acc/base_total come from soft_log_base_kernel at base_xy with the
    same weight field. stamp must arrive filled with -1; dlog and touched are
    uninitialized workspaces ((H, W) float64 and (H*W,) int64).
    """
    K = probe_xy.shape[0]
    reach = 3.0 * sigma
    for k in range(K):
        ntouch = 0
        for fi in range(probe_face_off[k], probe_face_off[k + 1]):
            f = probe_face_ids[fi]
            i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
            for side in range(2):
                if side == 0:
                    ax, ay = base_xy[i0, 0], base_xy[i0, 1]
                    bx, by = base_xy[i1, 0], base_xy[i1, 1]
                    cx, cy = base_xy[i2, 0], base_xy[i2, 1]
                else:
                    ax, ay = probe_xy[k, i0, 0], probe_xy[k, i0, 1]
                    bx, by = probe_xy[k, i1, 0], probe_xy[k, i1, 1]
                    cx, cy = probe_xy[k, i2, 0], probe_xy[k, i2, 1]
                area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
                flip = area2 < 0.0
                degenerate = area2 == 0.0
                lo_x = min(ax, min(bx, cx)) - reach
                hi_x = max(ax, max(bx, cx)) + reach
                lo_y = min(ay, min(by, cy)) - reach
                hi_y = max(ay, max(by, cy)) + reach
                c0 = max(int(np.ceil(lo_x - 0.5)), 0)
                c1 = min(int(np.floor(hi_x - 0.5)), width - 1)
                r0 = max(int(np.ceil(lo_y - 0.5)), 0)
                r1 = min(int(np.floor(hi_y - 0.5)), height - 1)
                if c0 > c1 or r0 > r1:
                    continue
                for r in range(r0, r1 + 1):
                    py = r + 0.5
                    for c in range(c0, c1 + 1):
                        if weights[r, c] == 0.0:
                            continue
                        px = c + 0.5
                        contrib = _face_log_factor(
                            px, py, ax, ay, bx, by, cx, cy, flip, degenerate, reach, sigma
                        )
                        if contrib == 0.0:
                            continue
                        if stamp[r, c] != k:
                            stamp[r, c] = k
                            dlog[r, c] = 0.0
                            touched[ntouch] = r * width + c
                            ntouch += 1
                        if side == 0:
                            dlog[r, c] += contrib
                        else:
                            dlog[r, c] -= contrib
        total = base_total
        for i in range(ntouch):
            p = touched[i]
            r = p // width
            c = p - r * width
            l0 = log_acc[r, c]
            total += weights[r, c] * (np.expm1(l0) - np.expm1(l0 + dlog[r, c]))
        out[k] = total
    return out


@njit(cache=True)
def soft_raster_batch(xy, faces, height, width, sigma, log_acc):
    """Accumulate per-pixel sums of log(1 - sigmoid(d_f/sigma)).

    xy      : (K, V, 2) projected vertices.
    log_acc : (K, H, W) float64, preset to 0; on return the soft mask is
              -expm1(log_acc).

    d_f is the signed 2D distance to triangle f (positive inside). Triangles
    farther than 3*sigma outside a pixel contribute factor 1 (skipped), per
    the mask definition. Pixels whose accumulator is already saturated are
    skipped; the final mask rounds to exactly 1.0 either way.
    """
    K = xy.shape[0]
    F = faces.shape[0]
    reach = 3.0 * sigma
    for k in range(K):
        for f in range(F):
            i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
            ax, ay = xy[k, i0, 0], xy[k, i0, 1]
            bx, by = xy[k, i1, 0], xy[k, i1, 1]
            cx, cy = xy[k, i2, 0], xy[k, i2, 1]
            area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            flip = area2 < 0.0
            degenerate = area2 == 0.0
            lo_x = min(ax, min(bx, cx)) - reach
            hi_x = max(ax, max(bx, cx)) + reach
            lo_y = min(ay, min(by, cy)) - reach
            hi_y = max(ay, max(by, cy)) + reach
            c0 = max(int(np.ceil(lo_x - 0.5)), 0)
            c1 = min(int(np.floor(hi_x - 0.5)), width - 1)
            r0 = max(int(np.ceil(lo_y - 0.5)), 0)
            r1 = min(int(np.floor(hi_y - 0.5)), height - 1)
            if c0 > c1 or r0 > r1:
                continue
            for r in range(r0, r1 + 1):
                py = r + 0.5
                for c in range(c0, c1 + 1):
                    if log_acc[k, r, c] <= _SATURATED_LOG:
                        continue
                    px = c + 0.5
                    w0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                    w1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                    w2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                    if flip:
                        w0, w1, w2 = -w0, -w1, -w2
                    inside = (not degenerate) and w0 >= 0.0 and w1 >= 0.0 and w2 >= 0.0
                    d0 = _segment_distance(px, py, ax, ay, bx, by)
                    d1 = _segment_distance(px, py, bx, by, cx, cy)
                    d2 = _segment_distance(px, py, cx, cy, ax, ay)
                    d = min(d0, min(d1, d2))
                    if not inside:
                        d = -d
                        if d < -reach:
                            continue
                    x = d / sigma
                    if x > _LOG1P_EXP_CUTOFF:
                        log_acc[k, r, c] -= x
                    else:
                        log_acc[k, r, c] -= np.log1p(np.exp(x))
    return log_acc
