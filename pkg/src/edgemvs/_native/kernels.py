"""Hot kernels for PatchMatch sweeps, patch costs, anchor search and RANSAC.

Written in Cython pure-python mode: compiled as a C extension when built,
but also runnable as plain python (bit-identical float64 arithmetic, since
all accumulation happens in double precision in both modes).

All arrays handed to these functions must be C-contiguous float64 /
int32 / uint8 as annotated. Randomness is injected by the caller as
pre-drawn uniform arrays or integer seeds, so results are reproducible
and backend-independent.

Geometry packing convention (see matching.build_geom_pack):
  ref_k           (4,)      fx, fy, cx, cy of the reference camera
  src_geom        (S, 16)   per source view: relative rotation (9),
                            relative translation (3), fx, fy, cx, cy
The relative motion maps reference-camera coordinates to source-camera
coordinates: x_src = R_rel @ x_ref + t_rel.
"""

import cython

import numpy as np

if cython.compiled:
    from cython.cimports.libc.math import (atan2, cos, exp, fabs, floor,
                                           isnan, sin, sqrt)
else:
    from math import atan2, cos, exp, fabs, floor, isnan, sin, sqrt

COMPILED = cython.compiled
INF: cython.double = float("inf")

PI: cython.double = 3.141592653589793
COST_MAX: cython.double = 2.0
VAR_EPS: cython.double = 1e-8
MIN_PATCH_SAMPLES: cython.int = 9
WEIGHT_DENOM: cython.double = 0.72  # 2 * 0.36, gaussian view-weight bandwidth
NORMAL_PERTURB_RAD: cython.double = 0.17453292519943295  # 10 degrees
DEPTH_PERTURB: cython.double = 0.05

_MASK64 = 0xFFFFFFFFFFFFFFFF

# Direction order is fixed everywhere: N, NE, E, SE, S, SW, W, NW.
DIR_DX = np.array([0, 1, 1, 1, 0, -1, -1, -1], dtype=np.int32)
DIR_DY = np.array([-1, -1, 0, 1, 1, 1, 0, -1], dtype=np.int32)


# ---------------------------------------------------------------------------
# seeded integer hashing (splitmix64) for in-kernel triple draws


@cython.ccall
@cython.exceptval(check=False)
def mix64(z: cython.ulonglong) -> cython.ulonglong:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


# ---------------------------------------------------------------------------
# NCC patch cost


@cython.ccall
@cython.exceptval(check=False)
def ncc_from_samples(xs: cython.double[:], ys: cython.double[:]) -> cython.double:
    """NCC matching cost 1 - ncc of two equally sized sample vectors.

    Returns the maximum cost 2.0 for degenerate (near-constant) patches
    or sample counts below the minimum.
    """
    n: cython.Py_ssize_t = xs.shape[0]
    if n != ys.shape[0] or n < MIN_PATCH_SAMPLES:
        return COST_MAX
    sx: cython.double = 0.0
    sy: cython.double = 0.0
    sxx: cython.double = 0.0
    syy: cython.double = 0.0
    sxy: cython.double = 0.0
    i: cython.Py_ssize_t
    for i in range(n):
        x: cython.double = xs[i]
        y: cython.double = ys[i]
        sx += x
        sy += y
        sxx += x * x
        syy += y * y
        sxy += x * y
    cnt: cython.double = n
    vx: cython.double = sxx - sx * sx / cnt
    vy: cython.double = syy - sy * sy / cnt
    if vx / cnt < VAR_EPS or vy / cnt < VAR_EPS:
        return COST_MAX
    ncc: cython.double = (sxy - sx * sy / cnt) / sqrt(vx * vy)
    if ncc > 1.0:
        ncc = 1.0
    elif ncc < -1.0:
        ncc = -1.0
    return 1.0 - ncc


@cython.cfunc
@cython.exceptval(check=False)
def _prep_ref_patch(ref: cython.float[:, :],
                    px: cython.Py_ssize_t, py: cython.Py_ssize_t,
                    radius: cython.Py_ssize_t, stride: cython.Py_ssize_t,
                    bufs: cython.double[:, :, :], row: cython.Py_ssize_t,
                    sums: cython.double[:]) -> cython.Py_ssize_t:
    """Gather the in-bounds samples of the patch at (px, py) into a buffer row.

    bufs[row] receives the sample values, x and y coordinates in its three
    lanes; sums[0] / sums[1] receive their sum and sum of squares. Returns
    the sample count. The gathered set depends only on the pixel and the
    patch shape, so one gather serves every hypothesis evaluated there.
    """
    h: cython.Py_ssize_t = ref.shape[0]
    w: cython.Py_ssize_t = ref.shape[1]
    n: cython.Py_ssize_t = 0
    sx: cython.double = 0.0
    sxx: cython.double = 0.0
    dy: cython.Py_ssize_t = -radius
    dx: cython.Py_ssize_t
    while dy <= radius:
        uy: cython.Py_ssize_t = py + dy
        if 0 <= uy < h:
            dx = -radius
            while dx <= radius:
                ux: cython.Py_ssize_t = px + dx
                if 0 <= ux < w:
                    # float() keeps the uncompiled path in double precision
                    v: cython.double = float(ref[uy, ux])
                    bufs[row, 0, n] = v
                    bufs[row, 1, n] = ux
                    bufs[row, 2, n] = uy
                    sx += v
                    sxx += v * v
                    n += 1
                dx += stride
        dy += stride
    sums[0] = sx
    sums[1] = sxx
    return n


@cython.cfunc
@cython.exceptval(check=False)
def _view_patch_cost(srcs: cython.float[:, :, :], j: cython.Py_ssize_t,
                     h00: cython.double, h01: cython.double, h02: cython.double,
                     h10: cython.double, h11: cython.double, h12: cython.double,
                     h20: cython.double, h21: cython.double, h22: cython.double,
                     bufs: cython.double[:, :, :], row: cython.Py_ssize_t,
                     n: cython.Py_ssize_t,
                     sx: cython.double, sxx: cython.double) -> cython.double:
    """NCC cost of a prepared reference patch warped into source view j.

    Any warped sample outside the source image poisons the whole patch.
    """
    if n < MIN_PATCH_SAMPLES:
        return COST_MAX
    sh: cython.Py_ssize_t = srcs.shape[1]
    sw: cython.Py_ssize_t = srcs.shape[2]
    sy: cython.double = 0.0
    syy: cython.double = 0.0
    sxy: cython.double = 0.0
    t: cython.Py_ssize_t
    for t in range(n):
        fu: cython.double = bufs[row, 1, t]
        fv: cython.double = bufs[row, 2, t]
        qz: cython.double = h20 * fu + h21 * fv + h22
        if fabs(qz) < 1e-12:
            return COST_MAX
        inv: cython.double = 1.0 / qz
        qx: cython.double = (h00 * fu + h01 * fv + h02) * inv
        qy: cython.double = (h10 * fu + h11 * fv + h12) * inv
        if qx < 0.0 or qx > sw - 1 or qy < 0.0 or qy > sh - 1:
            return COST_MAX
        ix: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, qx)
        iy: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, qy)
        if ix > sw - 2:
            ix = sw - 2
        if iy > sh - 2:
            iy = sh - 2
        ax: cython.double = qx - ix
        ay: cython.double = qy - iy
        v00: cython.double = float(srcs[j, iy, ix])
        v01: cython.double = float(srcs[j, iy, ix + 1])
        v10: cython.double = float(srcs[j, iy + 1, ix])
        v11: cython.double = float(srcs[j, iy + 1, ix + 1])
        val: cython.double = (v00 * (1.0 - ax) + v01 * ax) * (1.0 - ay) \
            + (v10 * (1.0 - ax) + v11 * ax) * ay
        sy += val
        syy += val * val
        sxy += bufs[row, 0, t] * val
    cnt: cython.double = n
    vx: cython.double = sxx - sx * sx / cnt
    vy: cython.double = syy - sy * sy / cnt
    if vx / cnt < VAR_EPS or vy / cnt < VAR_EPS:
        return COST_MAX
    ncc: cython.double = (sxy - sx * sy / cnt) / sqrt(vx * vy)
    if ncc > 1.0:
        ncc = 1.0
    elif ncc < -1.0:
        ncc = -1.0
    return 1.0 - ncc


@cython.cfunc
@cython.exceptval(check=False)
def _patch_cost_all_views(srcs: cython.float[:, :, :],
                          ref_k: cython.double[:], src_geom: cython.double[:, :],
                          bufs: cython.double[:, :, :], row: cython.Py_ssize_t,
                          n: cython.Py_ssize_t,
                          sx: cython.double, sxx: cython.double,
                          cx_anchor: cython.double, cy_anchor: cython.double,
                          nx: cython.double, ny: cython.double, nz: cython.double,
                          d: cython.double) -> cython.double:
    """Aggregated multi-view cost of a prepared reference patch under a plane.

    The patch comes from _prep_ref_patch. The plane is anchored at
    continuous pixel (cx_anchor, cy_anchor) of the reference view with
    normal (nx, ny, nz) and depth d there. Per-view costs are combined
    with gaussian weights derived from each view's own cost, which keeps
    the aggregate a pure function of the hypothesis.
    """
    fx: cython.double = ref_k[0]
    fy: cython.double = ref_k[1]
    cx: cython.double = ref_k[2]
    cy: cython.double = ref_k[3]
    arx: cython.double = (cx_anchor - cx) / fx
    ary: cython.double = (cy_anchor - cy) / fy
    rho: cython.double = d * (nx * arx + ny * ary + nz)
    nviews: cython.Py_ssize_t = srcs.shape[0]
    wsum: cython.double = 0.0
    wcsum: cython.double = 0.0
    j: cython.Py_ssize_t
    for j in range(nviews):
        cost_j: cython.double = COST_MAX
        if fabs(rho) >= 1e-12 * d:
            # A = R_rel + t_rel * n^T / rho
            a00: cython.double = src_geom[j, 0] + src_geom[j, 9] * nx / rho
            a01: cython.double = src_geom[j, 1] + src_geom[j, 9] * ny / rho
            a02: cython.double = src_geom[j, 2] + src_geom[j, 9] * nz / rho
            a10: cython.double = src_geom[j, 3] + src_geom[j, 10] * nx / rho
            a11: cython.double = src_geom[j, 4] + src_geom[j, 10] * ny / rho
            a12: cython.double = src_geom[j, 5] + src_geom[j, 10] * nz / rho
            a20: cython.double = src_geom[j, 6] + src_geom[j, 11] * nx / rho
            a21: cython.double = src_geom[j, 7] + src_geom[j, 11] * ny / rho
            a22: cython.double = src_geom[j, 8] + src_geom[j, 11] * nz / rho
            # B = A @ K_ref^-1
            b00: cython.double = a00 / fx
            b01: cython.double = a01 / fy
            b02: cython.double = a02 - b00 * cx - b01 * cy
            b10: cython.double = a10 / fx
            b11: cython.double = a11 / fy
            b12: cython.double = a12 - b10 * cx - b11 * cy
            b20: cython.double = a20 / fx
            b21: cython.double = a21 / fy
            b22: cython.double = a22 - b20 * cx - b21 * cy
            # H = K_src @ B
            sfx: cython.double = src_geom[j, 12]
            sfy: cython.double = src_geom[j, 13]
            scx: cython.double = src_geom[j, 14]
            scy: cython.double = src_geom[j, 15]
            h00: cython.double = sfx * b00 + scx * b20
            h01: cython.double = sfx * b01 + scx * b21
            h02: cython.double = sfx * b02 + scx * b22
            h10: cython.double = sfy * b10 + scy * b20
            h11: cython.double = sfy * b11 + scy * b21
            h12: cython.double = sfy * b12 + scy * b22
            cost_j = _view_patch_cost(srcs, j, h00, h01, h02,
                                      h10, h11, h12, b20, b21, b22,
                                      bufs, row, n, sx, sxx)
        wj: cython.double = exp(-cost_j * cost_j / WEIGHT_DENOM)
        wsum += wj
        wcsum += wj * cost_j
    if wsum <= 0.0:
        return COST_MAX
    return wcsum / wsum


@cython.cfunc
@cython.exceptval(check=False)
def _patch_cap(radius: cython.Py_ssize_t, stride: cython.Py_ssize_t) -> cython.Py_ssize_t:
    """Capacity needed for the sample buffers of one patch shape."""
    axis: cython.Py_ssize_t = (2 * radius) // stride + 1
    return axis * axis


@cython.ccall
def eval_cost_at(ref: cython.float[:, :], srcs: cython.float[:, :, :],
                 ref_k: cython.double[:], src_geom: cython.double[:, :],
                 px: cython.Py_ssize_t, py: cython.Py_ssize_t,
                 nx: cython.double, ny: cython.double, nz: cython.double,
                 d: cython.double,
                 radius: cython.Py_ssize_t, stride: cython.Py_ssize_t) -> cython.double:
    """Aggregated multi-view matching cost of one pixel's plane hypothesis."""
    bufs_np = np.empty((1, 3, _patch_cap(radius, stride)), dtype=np.float64)
    bufs: cython.double[:, :, :] = bufs_np
    sums_np = np.empty(2, dtype=np.float64)
    sums: cython.double[:] = sums_np
    n: cython.Py_ssize_t = _prep_ref_patch(ref, px, py, radius, stride,
                                           bufs, 0, sums)
    return _patch_cost_all_views(srcs, ref_k, src_geom, bufs, 0, n,
                                 sums[0], sums[1], px, py, nx, ny, nz, d)


@cython.ccall
def evaluate_cost_map(ref: cython.float[:, :], srcs: cython.float[:, :, :],
                      ref_k: cython.double[:], src_geom: cython.double[:, :],
                      depth: cython.double[:, :], normal: cython.double[:, :, :],
                      cost_out: cython.double[:, :],
                      radius: cython.Py_ssize_t, stride: cython.Py_ssize_t) -> None:
    """Fill cost_out with the conventional multi-view cost of every pixel."""
    h: cython.Py_ssize_t = ref.shape[0]
    w: cython.Py_ssize_t = ref.shape[1]
    bufs_np = np.empty((1, 3, _patch_cap(radius, stride)), dtype=np.float64)
    bufs: cython.double[:, :, :] = bufs_np
    sums_np = np.empty(2, dtype=np.float64)
    sums: cython.double[:] = sums_np
    y: cython.Py_ssize_t
    x: cython.Py_ssize_t
    for y in range(h):
        for x in range(w):
            n: cython.Py_ssize_t = _prep_ref_patch(ref, x, y, radius, stride,
                                                   bufs, 0, sums)
            cost_out[y, x] = _patch_cost_all_views(
                srcs, ref_k, src_geom, bufs, 0, n, sums[0], sums[1], x, y,
                normal[y, x, 0], normal[y, x, 1], normal[y, x, 2],
                depth[y, x])


@cython.cfunc
@cython.exceptval(check=False)
def _reexpress_depth(ref_k: cython.double[:],
                     nx: cython.double, ny: cython.double, nz: cython.double,
                     d_q: cython.double,
                     qx: cython.Py_ssize_t, qy: cython.Py_ssize_t,
                     px: cython.Py_ssize_t, py: cython.Py_ssize_t) -> cython.double:
    """Depth at pixel p of the plane stored at pixel q; <= 0 when invalid."""
    fx: cython.double = ref_k[0]
    fy: cython.double = ref_k[1]
    cx: cython.double = ref_k[2]
    cy: cython.double = ref_k[3]
    rho: cython.double = d_q * (nx * (qx - cx) / fx + ny * (qy - cy) / fy + nz)
    den: cython.double = nx * (px - cx) / fx + ny * (py - cy) / fy + nz
    if den >= -1e-12:
        return -1.0
    return rho / den


@cython.cfunc
@cython.exceptval(check=False)
def _clamp_depth(d: cython.double, d_min: cython.double, d_max: cython.double) -> cython.double:
    if d < d_min:
        return d_min
    if d > d_max:
        return d_max
    return d


@cython.cfunc
@cython.exceptval(check=False)
def _fill_refine(cands: cython.double[:, :],
                 d: cython.double, nx: cython.double, ny: cython.double, nz: cython.double,
                 rpx: cython.double, rpy: cython.double,
                 r0: cython.double, r1: cython.double, r2: cython.double,
                 r3: cython.double, r4: cython.double, r5: cython.double,
                 d_min: cython.double, d_max: cython.double) -> None:
    """Write the six refinement candidates (depth, normal) into cands (6, 4).

    Candidates combine a +-5% depth perturbation, a <=10 degree cone
    perturbation of the normal, and fully random depth / normal draws.
    """
    dp: cython.double = _clamp_depth(d * (1.0 + DEPTH_PERTURB * (2.0 * r0 - 1.0)),
                                     d_min, d_max)
    # normal perturbed inside a cone around (nx, ny, nz)
    ex: cython.double = 0.0
    ey: cython.double = 0.0
    ez: cython.double = 1.0
    if nz > 0.9 or nz < -0.9:
        ex = 1.0
        ez = 0.0
    t1x: cython.double = ny * ez - nz * ey
    t1y: cython.double = nz * ex - nx * ez
    t1z: cython.double = nx * ey - ny * ex
    t1n: cython.double = sqrt(t1x * t1x + t1y * t1y + t1z * t1z)
    if t1n < 1e-12:
        t1n = 1.0
    t1x /= t1n
    t1y /= t1n
    t1z /= t1n
    t2x: cython.double = ny * t1z - nz * t1y
    t2y: cython.double = nz * t1x - nx * t1z
    t2z: cython.double = nx * t1y - ny * t1x
    alpha: cython.double = NORMAL_PERTURB_RAD * r1
    psi: cython.double = 2.0 * PI * r2
    dx: cython.double = cos(psi) * t1x + sin(psi) * t2x
    dy: cython.double = cos(psi) * t1y + sin(psi) * t2y
    dz: cython.double = cos(psi) * t1z + sin(psi) * t2z
    npx: cython.double = nx * cos(alpha) + dx * sin(alpha)
    npy: cython.double = ny * cos(alpha) + dy * sin(alpha)
    npz: cython.double = nz * cos(alpha) + dz * sin(alpha)
    if npx * rpx + npy * rpy + npz >= -1e-9:
        npx = nx
        npy = ny
        npz = nz
    # fully random depth (uniform in inverse depth) and hemisphere normal
    inv: cython.double = 1.0 / d_max + r3 * (1.0 / d_min - 1.0 / d_max)
    dr: cython.double = 1.0 / inv
    zz: cython.double = 2.0 * r4 - 1.0
    ss: cython.double = 1.0 - zz * zz
    if ss < 0.0:
        ss = 0.0
    ss = sqrt(ss)
    phi2: cython.double = 2.0 * PI * r5
    nrx: cython.double = ss * cos(phi2)
    nry: cython.double = ss * sin(phi2)
    nrz: cython.double = zz
    dot: cython.double = nrx * rpx + nry * rpy + nrz
    if dot > 0.0:
        nrx = -nrx
        nry = -nry
        nrz = -nrz
        dot = -dot
    if dot >= -1e-9:
        nrx = nx
        nry = ny
        nrz = nz
    cands[0, 0] = dp
    cands[0, 1] = nx
    cands[0, 2] = ny
    cands[0, 3] = nz
    cands[1, 0] = d
    cands[1, 1] = npx
    cands[1, 2] = npy
    cands[1, 3] = npz
    cands[2, 0] = dp
    cands[2, 1] = npx
    cands[2, 2] = npy
    cands[2, 3] = npz
    cands[3, 0] = dr
    cands[3, 1] = nrx
    cands[3, 2] = nry
    cands[3, 3] = nrz
    cands[4, 0] = dr
    cands[4, 1] = nx
    cands[4, 2] = ny
    cands[4, 3] = nz
    cands[5, 0] = d
    cands[5, 1] = nrx
    cands[5, 2] = nry
    cands[5, 3] = nrz


@cython.ccall
def sweep_conventional(color: cython.int,
                       ref: cython.float[:, :], srcs: cython.float[:, :, :],
                       ref_k: cython.double[:], src_geom: cython.double[:, :],
                       depth: cython.double[:, :], normal: cython.double[:, :, :],
                       cost: cython.double[:, :],
                       depth_snap: cython.double[:, :], normal_snap: cython.double[:, :, :],
                       cost_snap: cython.double[:, :],
                       update_mask: cython.uchar[:, :],
                       es_enabled: cython.int, have_cues: cython.int,
                       xi: cython.int,
                       fine_mask: cython.uchar[:, :],
                       fine_dist: cython.int[:, :, :],
                       lam_width: cython.double,
                       rand: cython.double[:, :, :],
                       radius: cython.Py_ssize_t, stride: cython.Py_ssize_t,
                       base_count: cython.int, base_step: cython.int,
                       k_min: cython.int, k_max: cython.int,
                       d_min: cython.double, d_max: cython.double) -> cython.int:
    """One checkerboard phase of conventional propagation + refinement.

    Pixels of the given color (0: x+y even, 1: odd) whose update_mask is
    set are re-estimated from strip candidates of the phase-start
    snapshot, then refined. Returns the number of updated pixels.

    lam_width is the edge-guided span limit for the current level
    (image_width / (30 * 4^level)).
    """
    h: cython.Py_ssize_t = ref.shape[0]
    w: cython.Py_ssize_t = ref.shape[1]
    fx: cython.double = ref_k[0]
    fy: cython.double = ref_k[1]
    cxk: cython.double = ref_k[2]
    cyk: cython.double = ref_k[3]
    dirs_dx: cython.int[:] = DIR_DX
    dirs_dy: cython.int[:] = DIR_DY
    cands_np = np.empty((6, 4), dtype=np.float64)
    cands: cython.double[:, :] = cands_np
    bufs_np = np.empty((1, 3, _patch_cap(radius, stride)), dtype=np.float64)
    bufs: cython.double[:, :, :] = bufs_np
    sums_np = np.empty(2, dtype=np.float64)
    sums: cython.double[:] = sums_np
    updated: cython.int = 0
    y: cython.Py_ssize_t
    x: cython.Py_ssize_t
    for y in range(h):
        x = (color + y) % 2
        while x < w:
            if update_mask[y, x] == 0:
                x += 2
                continue
            nsamp: cython.Py_ssize_t = _prep_ref_patch(ref, x, y, radius,
                                                       stride, bufs, 0, sums)
            psx: cython.double = sums[0]
            psxx: cython.double = sums[1]
            best_d: cython.double = depth[y, x]
            best_nx: cython.double = normal[y, x, 0]
            best_ny: cython.double = normal[y, x, 1]
            best_nz: cython.double = normal[y, x, 2]
            best_c: cython.double = cost[y, x]
            inc_c: cython.double = best_c
            rpx: cython.double = (x - cxk) / fx
            rpy: cython.double = (y - cyk) / fy
            d: cython.Py_ssize_t
            for d in range(8):
                ddx: cython.int = dirs_dx[d]
                ddy: cython.int = dirs_dy[d]
                # progressive strip: best stored cost among 11 step-2 samples
                pn_x: cython.Py_ssize_t = -1
                pn_y: cython.Py_ssize_t = -1
                pn_c: cython.double = INF
                i: cython.int
                for i in range(base_count):
                    off: cython.int = xi + i * base_step
                    qx: cython.Py_ssize_t = x + ddx * off
                    qy: cython.Py_ssize_t = y + ddy * off
                    if qx < 0 or qx >= w or qy < 0 or qy >= h:
                        break
                    cq: cython.double = cost_snap[qy, qx]
                    if cq < pn_c:
                        pn_c = cq
                        pn_x = qx
                        pn_y = qy
                eg_x: cython.Py_ssize_t = -1
                eg_y: cython.Py_ssize_t = -1
                if es_enabled != 0 and have_cues != 0 and fine_mask[y, x] == 0:
                    # edge-guided strip: span limited by the fine-edge distance
                    dfe: cython.double = fine_dist[d, y, x]
                    dprime: cython.double = dfe
                    if lam_width < dprime:
                        dprime = lam_width
                    kk: cython.int = cython.cast(cython.int, floor(dprime / 2.0))
                    if kk < k_min:
                        kk = k_min
                    elif kk > k_max:
                        kk = k_max
                    step: cython.int = cython.cast(cython.int, floor(dprime / kk))
                    if step < 1:
                        step = 1
                    eg_c: cython.double = INF
                    for i in range(kk):
                        off2: cython.int = xi + i * step
                        qx2: cython.Py_ssize_t = x + ddx * off2
                        qy2: cython.Py_ssize_t = y + ddy * off2
                        if qx2 < 0 or qx2 >= w or qy2 < 0 or qy2 >= h:
                            break
                        cq2: cython.double = cost_snap[qy2, qx2]
                        if cq2 < eg_c:
                            eg_c = cq2
                            eg_x = qx2
                            eg_y = qy2
                    if eg_x == pn_x and eg_y == pn_y:
                        eg_x = -1  # identical source: single evaluation
                # evaluate the chosen source hypotheses at p
                sel: cython.int
                for sel in range(2):
                    sx_: cython.Py_ssize_t = pn_x if sel == 0 else eg_x
                    sy_: cython.Py_ssize_t = pn_y if sel == 0 else eg_y
                    if sx_ < 0:
                        continue
                    cnx: cython.double = normal_snap[sy_, sx_, 0]
                    cny: cython.double = normal_snap[sy_, sx_, 1]
                    cnz: cython.double = normal_snap[sy_, sx_, 2]
                    dq: cython.double = _reexpress_depth(ref_k, cnx, cny, cnz,
                                                         depth_snap[sy_, sx_],
                                                         sx_, sy_, x, y)
                    if dq <= 0.0:
                        continue
                    dq = _clamp_depth(dq, d_min, d_max)
                    cc: cython.double = _patch_cost_all_views(
                        srcs, ref_k, src_geom, bufs, 0,
                        nsamp, psx, psxx, x, y, cnx, cny, cnz, dq)
                    if cc < best_c:
                        best_c = cc
                        best_d = dq
                        best_nx = cnx
                        best_ny = cny
                        best_nz = cnz
            # refinement around the running best
            _fill_refine(cands, best_d, best_nx, best_ny, best_nz, rpx, rpy,
                         rand[y, x, 0], rand[y, x, 1], rand[y, x, 2],
                         rand[y, x, 3], rand[y, x, 4], rand[y, x, 5],
                         d_min, d_max)
            r: cython.Py_ssize_t
            for r in range(6):
                cc2: cython.double = _patch_cost_all_views(
                    srcs, ref_k, src_geom, bufs, 0, nsamp, psx, psxx, x, y,
                    cands[r, 1], cands[r, 2], cands[r, 3], cands[r, 0])
                if cc2 < best_c:
                    best_c = cc2
                    best_d = cands[r, 0]
                    best_nx = cands[r, 1]
                    best_ny = cands[r, 2]
                    best_nz = cands[r, 3]
            if best_c < inc_c:
                depth[y, x] = best_d
                normal[y, x, 0] = best_nx
                normal[y, x, 1] = best_ny
                normal[y, x, 2] = best_nz
                cost[y, x] = best_c
                updated += 1
            x += 2
    return updated


@cython.cfunc
@cython.exceptval(check=False)
def _center_stride(gamma: cython.int) -> cython.Py_ssize_t:
    """Sample stride of the center patch for a deformable radius gamma."""
    s: cython.Py_ssize_t = ((gamma + 4) // 5) * 2
    if s < 1:
        s = 1
    return s


@cython.cfunc
@cython.exceptval(check=False)
def _deform_cost(srcs: cython.float[:, :, :],
                 ref_k: cython.double[:], src_geom: cython.double[:, :],
                 px: cython.Py_ssize_t, py: cython.Py_ssize_t,
                 nx: cython.double, ny: cython.double, nz: cython.double,
                 d: cython.double,
                 anchors: cython.int[:, :, :], kj: cython.int,
                 gamma: cython.int, lam: cython.double,
                 bufs: cython.double[:, :, :], n_arr: cython.Py_ssize_t[:],
                 sums_arr: cython.double[:, :]) -> cython.double:
    """Deformable matching cost: center patch blended with anchor patches.

    The candidate plane is anchored at p; each anchor patch evaluates the
    same plane re-expressed at the anchor pixel. gamma == 0 discards the
    center term entirely. bufs / n_arr / sums_arr hold the prepared
    reference patches (see _prep_ref_patch): anchor k in row k, the center
    patch in the last row.
    """
    fx: cython.double = ref_k[0]
    fy: cython.double = ref_k[1]
    cxk: cython.double = ref_k[2]
    cyk: cython.double = ref_k[3]
    crow: cython.Py_ssize_t = bufs.shape[0] - 1
    lam_eff: cython.double = lam
    if gamma == 0:
        lam_eff = 0.0
    if kj == 0 and lam_eff == 0.0:
        return COST_MAX
    center: cython.double = 0.0
    if lam_eff > 0.0:
        center = _patch_cost_all_views(srcs, ref_k, src_geom, bufs, crow,
                                       n_arr[crow], sums_arr[crow, 0],
                                       sums_arr[crow, 1], px, py, nx, ny, nz, d)
    acc: cython.double = 0.0
    if kj > 0:
        rho: cython.double = d * (nx * (px - cxk) / fx + ny * (py - cyk) / fy + nz)
        k: cython.int
        for k in range(kj):
            ax: cython.Py_ssize_t = anchors[py, px, k * 2]
            ay: cython.Py_ssize_t = anchors[py, px, k * 2 + 1]
            den: cython.double = (nx * (ax - cxk) / fx + ny * (ay - cyk) / fy + nz)
            if den >= -1e-12:
                acc += COST_MAX
                continue
            da: cython.double = rho / den
            acc += _patch_cost_all_views(srcs, ref_k, src_geom, bufs, k,
                                         n_arr[k], sums_arr[k, 0],
                                         sums_arr[k, 1], ax, ay, nx, ny, nz, da)
        acc = (1.0 - lam_eff) * acc / kj
    return lam_eff * center + acc


@cython.cfunc
@cython.exceptval(check=False)
def _prep_deform_bufs(ref: cython.float[:, :],
                      px: cython.Py_ssize_t, py: cython.Py_ssize_t,
                      anchors: cython.int[:, :, :], kj: cython.int,
                      gamma: cython.int, lam: cython.double,
                      anchor_radius: cython.Py_ssize_t,
                      anchor_stride: cython.Py_ssize_t,
                      bufs: cython.double[:, :, :],
                      n_arr: cython.Py_ssize_t[:],
                      sums_arr: cython.double[:, :],
                      sums: cython.double[:]) -> None:
    """Prepare the reference patches _deform_cost needs at pixel p."""
    crow: cython.Py_ssize_t = bufs.shape[0] - 1
    n_arr[crow] = 0
    sums_arr[crow, 0] = 0.0
    sums_arr[crow, 1] = 0.0
    if gamma > 0 and lam > 0.0:
        n_arr[crow] = _prep_ref_patch(ref, px, py, gamma,
                                      _center_stride(gamma), bufs, crow, sums)
        sums_arr[crow, 0] = sums[0]
        sums_arr[crow, 1] = sums[1]
    k: cython.int
    for k in range(kj):
        n_arr[k] = _prep_ref_patch(ref, anchors[py, px, k * 2],
                                   anchors[py, px, k * 2 + 1],
                                   anchor_radius, anchor_stride, bufs, k, sums)
        sums_arr[k, 0] = sums[0]
        sums_arr[k, 1] = sums[1]


@cython.ccall
def eval_deform_cost_at(ref: cython.float[:, :], srcs: cython.float[:, :, :],
                        ref_k: cython.double[:], src_geom: cython.double[:, :],
                        px: cython.Py_ssize_t, py: cython.Py_ssize_t,
                        nx: cython.double, ny: cython.double, nz: cython.double,
                        d: cython.double,
                        anchors: cython.int[:, :, :], counts: cython.uchar[:, :],
                        gamma: cython.int, lam: cython.double,
                        anchor_radius: cython.Py_ssize_t,
                        anchor_stride: cython.Py_ssize_t) -> cython.double:
    """Deformable cost of one candidate hypothesis at pixel p."""
    kj: cython.int = counts[py, px]
    kmax: cython.Py_ssize_t = anchors.shape[2] // 2
    cap: cython.Py_ssize_t = _patch_cap(anchor_radius, anchor_stride)
    capc: cython.Py_ssize_t = _patch_cap(gamma, _center_stride(gamma))
    if capc > cap:
        cap = capc
    bufs_np = np.empty((kmax + 1, 3, cap), dtype=np.float64)
    bufs: cython.double[:, :, :] = bufs_np
    n_arr_np = np.empty(kmax + 1, dtype=np.intp)
    n_arr: cython.Py_ssize_t[:] = n_arr_np
    sums_arr_np = np.empty((kmax + 1, 2), dtype=np.float64)
    sums_arr: cython.double[:, :] = sums_arr_np
    sums_np = np.empty(2, dtype=np.float64)
    sums: cython.double[:] = sums_np
    _prep_deform_bufs(ref, px, py, anchors, kj, gamma, lam,
                      anchor_radius, anchor_stride, bufs, n_arr, sums_arr, sums)
    return _deform_cost(srcs, ref_k, src_geom, px, py, nx, ny, nz, d,
                        anchors, kj, gamma, lam, bufs, n_arr, sums_arr)


@cython.ccall
def sweep_deformable(color: cython.int,
                     ref: cython.float[:, :], srcs: cython.float[:, :, :],
                     ref_k: cython.double[:], src_geom: cython.double[:, :],
                     depth: cython.double[:, :], normal: cython.double[:, :, :],
                     dcost: cython.double[:, :],
                     active_mask: cython.uchar[:, :],
                     anchors: cython.int[:, :, :], counts: cython.uchar[:, :],
                     plane: cython.double[:, :, :], plane_valid: cython.uchar[:, :],
                     gamma_map: cython.int[:, :],
                     lam: cython.double,
                     anchor_radius: cython.Py_ssize_t, anchor_stride: cython.Py_ssize_t,
                     rand: cython.double[:, :, :],
                     d_min: cython.double, d_max: cython.double) -> cython.int:
    """One checkerboard phase of deformable propagation + refinement.

    Candidates per active pixel: the hypotheses stored at its anchors
    (re-expressed at p), the fitted plane, and six refinements of the
    running best. dcost holds the pixel's deformable cost; NaN entries
    are evaluated lazily for the incumbent. Returns the update count.
    """
    h: cython.Py_ssize_t = ref.shape[0]
    w: cython.Py_ssize_t = ref.shape[1]
    fx: cython.double = ref_k[0]
    fy: cython.double = ref_k[1]
    cxk: cython.double = ref_k[2]
    cyk: cython.double = ref_k[3]
    cands_np = np.empty((6, 4), dtype=np.float64)
    cands: cython.double[:, :] = cands_np
    gmax: cython.int = 1
    yg: cython.Py_ssize_t
    xg: cython.Py_ssize_t
    for yg in range(h):
        for xg in range(w):
            if active_mask[yg, xg] != 0 and gamma_map[yg, xg] > gmax:
                gmax = gamma_map[yg, xg]
    # stride is >= 2 for any gamma >= 1, so (gmax + 1)^2 bounds every
    # pixel's center sample count (the count is not monotone in gamma)
    cap: cython.Py_ssize_t = _patch_cap(anchor_radius, anchor_stride)
    capc: cython.Py_ssize_t = _patch_cap(gmax, 2)
    if capc > cap:
        cap = capc
    kmax: cython.Py_ssize_t = anchors.shape[2] // 2
    bufs_np = np.empty((kmax + 1, 3, cap), dtype=np.float64)
    bufs: cython.double[:, :, :] = bufs_np
    n_arr_np = np.empty(kmax + 1, dtype=np.intp)
    n_arr: cython.Py_ssize_t[:] = n_arr_np
    sums_arr_np = np.empty((kmax + 1, 2), dtype=np.float64)
    sums_arr: cython.double[:, :] = sums_arr_np
    sums_np = np.empty(2, dtype=np.float64)
    sums: cython.double[:] = sums_np
    updated: cython.int = 0
    y: cython.Py_ssize_t
    x: cython.Py_ssize_t
    for y in range(h):
        x = (color + y) % 2
        while x < w:
            if active_mask[y, x] == 0:
                x += 2
                continue
            gamma: cython.int = gamma_map[y, x]
            kj: cython.int = counts[y, x]
            _prep_deform_bufs(ref, x, y, anchors, kj, gamma, lam,
                              anchor_radius, anchor_stride,
                              bufs, n_arr, sums_arr, sums)
            inc_c: cython.double = dcost[y, x]
            if isnan(inc_c):
                inc_c = _deform_cost(srcs, ref_k, src_geom, x, y,
                                     normal[y, x, 0], normal[y, x, 1],
                                     normal[y, x, 2], depth[y, x],
                                     anchors, kj, gamma, lam,
                                     bufs, n_arr, sums_arr)
                dcost[y, x] = inc_c
            best_c: cython.double = inc_c
            best_d: cython.double = depth[y, x]
            best_nx: cython.double = normal[y, x, 0]
            best_ny: cython.double = normal[y, x, 1]
            best_nz: cython.double = normal[y, x, 2]
            rpx: cython.double = (x - cxk) / fx
            rpy: cython.double = (y - cyk) / fy
            k: cython.int
            for k in range(kj):
                ax: cython.Py_ssize_t = anchors[y, x, k * 2]
                ay: cython.Py_ssize_t = anchors[y, x, k * 2 + 1]
                anx: cython.double = normal[ay, ax, 0]
                any_: cython.double = normal[ay, ax, 1]
                anz: cython.double = normal[ay, ax, 2]
                dq: cython.double = _reexpress_depth(ref_k, anx, any_, anz,
                                                     depth[ay, ax], ax, ay, x, y)
                if dq <= 0.0:
                    continue
                dq = _clamp_depth(dq, d_min, d_max)
                cc: cython.double = _deform_cost(srcs, ref_k, src_geom, x, y,
                                                 anx, any_, anz, dq,
                                                 anchors, kj, gamma, lam,
                                                 bufs, n_arr, sums_arr)
                if cc < best_c:
                    best_c = cc
                    best_d = dq
                    best_nx = anx
                    best_ny = any_
                    best_nz = anz
            if plane_valid[y, x] != 0:
                m0: cython.double = plane[y, x, 0]
                m1: cython.double = plane[y, x, 1]
                m2: cython.double = plane[y, x, 2]
                bb: cython.double = plane[y, x, 3]
                den_p: cython.double = (m0 * fy * (x - cxk) + m1 * fx * (y - cyk)
                                        + m2 * fx * fy)
                lim: cython.double = 1e-12 * fx * fy
                if den_p > lim or den_p < -lim:
                    d_pl: cython.double = -bb * fx * fy / den_p
                    if d_pl > 0.0:
                        d_pl = _clamp_depth(d_pl, d_min, d_max)
                        dot_p: cython.double = m0 * rpx + m1 * rpy + m2
                        pnx: cython.double = m0
                        pny: cython.double = m1
                        pnz: cython.double = m2
                        if dot_p > 0.0:
                            pnx = -pnx
                            pny = -pny
                            pnz = -pnz
                            dot_p = -dot_p
                        if dot_p < -1e-9:
                            cc3: cython.double = _deform_cost(
                                srcs, ref_k, src_geom, x, y,
                                pnx, pny, pnz, d_pl, anchors, kj, gamma, lam,
                                bufs, n_arr, sums_arr)
                            if cc3 < best_c:
                                best_c = cc3
                                best_d = d_pl
                                best_nx = pnx
                                best_ny = pny
                                best_nz = pnz
            _fill_refine(cands, best_d, best_nx, best_ny, best_nz, rpx, rpy,
                         rand[y, x, 0], rand[y, x, 1], rand[y, x, 2],
                         rand[y, x, 3], rand[y, x, 4], rand[y, x, 5],
                         d_min, d_max)
            r: cython.Py_ssize_t
            for r in range(6):
                cc2: cython.double = _deform_cost(srcs, ref_k, src_geom, x, y,
                                                  cands[r, 1], cands[r, 2],
                                                  cands[r, 3], cands[r, 0],
                                                  anchors, kj, gamma, lam,
                                                  bufs, n_arr, sums_arr)
                if cc2 < best_c:
                    best_c = cc2
                    best_d = cands[r, 0]
                    best_nx = cands[r, 1]
                    best_ny = cands[r, 2]
                    best_nz = cands[r, 3]
            if best_c < inc_c:
                depth[y, x] = best_d
                normal[y, x, 0] = best_nx
                normal[y, x, 1] = best_ny
                normal[y, x, 2] = best_nz
                dcost[y, x] = best_c
                updated += 1
            x += 2
    return updated


@cython.ccall
def segment_clear(mask: cython.uchar[:, :],
                  x0: cython.Py_ssize_t, y0: cython.Py_ssize_t,
                  x1: cython.Py_ssize_t, y1: cython.Py_ssize_t) -> cython.int:
    """1 when the Bresenham segment between the endpoints (exclusive)
    touches no set pixel of mask, else 0."""
    dx: cython.Py_ssize_t = x1 - x0
    if dx < 0:
        dx = -dx
    dy: cython.Py_ssize_t = y1 - y0
    if dy < 0:
        dy = -dy
    dy = -dy
    sx: cython.Py_ssize_t = 1 if x0 < x1 else -1
    sy: cython.Py_ssize_t = 1 if y0 < y1 else -1
    err: cython.Py_ssize_t = dx + dy
    x: cython.Py_ssize_t = x0
    y: cython.Py_ssize_t = y0
    while True:
        if x == x1 and y == y1:
            break
        e2: cython.Py_ssize_t = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
        if x == x1 and y == y1:
            break
        if mask[y, x] != 0:
            return 0
    return 1


@cython.cfunc
def _eval_triple(X: cython.double[:, :], nrm: cython.double[:, :],
                 dd: cython.double[:], ppx: cython.int[:], ppy: cython.int[:],
                 n: cython.Py_ssize_t,
                 i: cython.Py_ssize_t, j: cython.Py_ssize_t, k: cython.Py_ssize_t,
                 po: cython.int, use_c1: cython.int, enforce_c2: cython.int,
                 fine_mask: cython.uchar[:, :],
                 eps_rel: cython.double, c2_tau: cython.double,
                 fx: cython.double, fy: cython.double,
                 cxk: cython.double, cyk: cython.double,
                 px: cython.Py_ssize_t, py: cython.Py_ssize_t,
                 d_p: cython.double,
                 best7: cython.double[:], bt3: cython.Py_ssize_t[:]) -> None:
    """Score one candidate triple and update the running best in-place.

    best7 holds (inliers, c2-flag, residual at p, m0, m1, m2, b); bt3 the
    winning triple's candidate indices.
    """
    c2ok: cython.int = 0
    if po != 0:
        dij: cython.double = (nrm[i, 0] * nrm[j, 0] + nrm[i, 1] * nrm[j, 1]
                              + nrm[i, 2] * nrm[j, 2])
        dik: cython.double = (nrm[i, 0] * nrm[k, 0] + nrm[i, 1] * nrm[k, 1]
                              + nrm[i, 2] * nrm[k, 2])
        djk: cython.double = (nrm[j, 0] * nrm[k, 0] + nrm[j, 1] * nrm[k, 1]
                              + nrm[j, 2] * nrm[k, 2])
        if dij > c2_tau and dik > c2_tau and djk > c2_tau:
            c2ok = 1
    if enforce_c2 != 0 and c2ok == 0:
        return
    if use_c1 != 0:
        if segment_clear(fine_mask, ppx[i], ppy[i], ppx[j], ppy[j]) == 0:
            return
        if segment_clear(fine_mask, ppx[i], ppy[i], ppx[k], ppy[k]) == 0:
            return
        if segment_clear(fine_mask, ppx[j], ppy[j], ppx[k], ppy[k]) == 0:
            return
    e1x: cython.double = X[j, 0] - X[i, 0]
    e1y: cython.double = X[j, 1] - X[i, 1]
    e1z: cython.double = X[j, 2] - X[i, 2]
    e2x: cython.double = X[k, 0] - X[i, 0]
    e2y: cython.double = X[k, 1] - X[i, 1]
    e2z: cython.double = X[k, 2] - X[i, 2]
    mx: cython.double = e1y * e2z - e1z * e2y
    my: cython.double = e1z * e2x - e1x * e2z
    mz: cython.double = e1x * e2y - e1y * e2x
    mn: cython.double = sqrt(mx * mx + my * my + mz * mz)
    l1: cython.double = sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    l2: cython.double = sqrt(e2x * e2x + e2y * e2y + e2z * e2z)
    if mn <= 1e-10 * l1 * l2 or mn == 0.0:
        return
    mx /= mn
    my /= mn
    mz /= mn
    b: cython.double = -(mx * X[i, 0] + my * X[i, 1] + mz * X[i, 2])
    lim: cython.double = 1e-12 * fx * fy
    cnt: cython.Py_ssize_t = 0
    t: cython.Py_ssize_t
    for t in range(n):
        delta: cython.double
        if po != 0:
            den: cython.double = (mx * fy * (ppx[t] - cxk) + my * fx * (ppy[t] - cyk)
                                  + mz * fx * fy)
            if -lim < den < lim:
                continue
            dfit: cython.double = -b * fx * fy / den
            if dfit <= 0.0:
                continue
            delta = dfit - dd[t]
            if delta < 0.0:
                delta = -delta
        else:
            delta = mx * X[t, 0] + my * X[t, 1] + mz * X[t, 2] + b
            if delta < 0.0:
                delta = -delta
        if delta < eps_rel * dd[t]:
            cnt += 1
    dp_res: cython.double = INF
    if po != 0:
        den_p: cython.double = (mx * fy * (px - cxk) + my * fx * (py - cyk)
                                + mz * fx * fy)
        if den_p > lim or den_p < -lim:
            dfp: cython.double = -b * fx * fy / den_p
            if dfp > 0.0:
                dp_res = dfp - d_p
                if dp_res < 0.0:
                    dp_res = -dp_res
    cnt_d: cython.double = cnt
    better: cython.int = 0
    if cnt_d > best7[0]:
        better = 1
    elif po != 0 and cnt_d == best7[0]:
        if c2ok > best7[1]:
            better = 1
        elif c2ok == best7[1] and dp_res < best7[2]:
            better = 1
    if better != 0:
        best7[0] = cnt_d
        best7[1] = c2ok
        best7[2] = dp_res
        best7[3] = mx
        best7[4] = my
        best7[5] = mz
        best7[6] = b
        bt3[0] = i
        bt3[1] = j
        bt3[2] = k


@cython.ccall
def ransac_batch(qx: cython.int[:], qy: cython.int[:],
                 cand_off: cython.long[:], cand_x: cython.int[:], cand_y: cython.int[:],
                 depth: cython.double[:, :], normal: cython.double[:, :, :],
                 ref_k: cython.double[:],
                 fine_mask: cython.uchar[:, :], stoch_mask: cython.uchar[:, :],
                 po: cython.int, iters: cython.Py_ssize_t,
                 eps_rel: cython.double, c2_tau: cython.double,
                 anchor_cap: cython.Py_ssize_t, seed: cython.ulonglong,
                 ok_out: cython.uchar[:], plane_out: cython.double[:, :],
                 anchors_out: cython.int[:, :, :], anchor_n_out: cython.int[:],
                 triple_out: cython.int[:, :]) -> None:
    """Fit a local plane per query pixel by constrained random sampling.

    Candidates per query arrive in CSR layout (cand_off into
    cand_x/cand_y). Outputs: ok flag, camera-frame plane (m, b), chosen
    anchor pixels (smallest-residual inliers), and the winning triple.
    """
    fx: cython.double = ref_k[0]
    fy: cython.double = ref_k[1]
    cxk: cython.double = ref_k[2]
    cyk: cython.double = ref_k[3]
    w: cython.Py_ssize_t = depth.shape[1]
    nq: cython.Py_ssize_t = qx.shape[0]
    max_n: cython.Py_ssize_t = 0
    u: cython.Py_ssize_t
    for u in range(nq):
        ln: cython.Py_ssize_t = cand_off[u + 1] - cand_off[u]
        if ln > max_n:
            max_n = ln
    if max_n < 3:
        for u in range(nq):
            ok_out[u] = 0
            anchor_n_out[u] = 0
        return
    X_np = np.empty((max_n, 3), dtype=np.float64)
    nrm_np = np.empty((max_n, 3), dtype=np.float64)
    dd_np = np.empty(max_n, dtype=np.float64)
    ppx_np = np.empty(max_n, dtype=np.int32)
    ppy_np = np.empty(max_n, dtype=np.int32)
    delta_np = np.empty(max_n, dtype=np.float64)
    used_np = np.empty(max_n, dtype=np.uint8)
    best7_np = np.empty(7, dtype=np.float64)
    bt3_np = np.empty(3, dtype=np.intp)
    X: cython.double[:, :] = X_np
    nrm: cython.double[:, :] = nrm_np
    dd: cython.double[:] = dd_np
    ppx: cython.int[:] = ppx_np
    ppy: cython.int[:] = ppy_np
    delta: cython.double[:] = delta_np
    used: cython.uchar[:] = used_np
    best7: cython.double[:] = best7_np
    bt3: cython.Py_ssize_t[:] = bt3_np
    for u in range(nq):
        ok_out[u] = 0
        anchor_n_out[u] = 0
        base: cython.Py_ssize_t = cand_off[u]
        n: cython.Py_ssize_t = cand_off[u + 1] - base
        if n < 3:
            continue
        px: cython.Py_ssize_t = qx[u]
        py: cython.Py_ssize_t = qy[u]
        t: cython.Py_ssize_t
        for t in range(n):
            cx_t: cython.Py_ssize_t = cand_x[base + t]
            cy_t: cython.Py_ssize_t = cand_y[base + t]
            d_t: cython.double = depth[cy_t, cx_t]
            X[t, 0] = d_t * (cx_t - cxk) / fx
            X[t, 1] = d_t * (cy_t - cyk) / fy
            X[t, 2] = d_t
            nrm[t, 0] = normal[cy_t, cx_t, 0]
            nrm[t, 1] = normal[cy_t, cx_t, 1]
            nrm[t, 2] = normal[cy_t, cx_t, 2]
            dd[t] = d_t
            ppx[t] = cx_t
            ppy[t] = cy_t
        use_c1: cython.int = 0
        if po != 0 and stoch_mask[py, px] == 0:
            use_c1 = 1
        d_p: cython.double = depth[py, px]
        best7[0] = -1.0
        best7[1] = 0.0
        best7[2] = INF
        bt3[0] = 0
        bt3[1] = 0
        bt3[2] = 0
        n_triples: cython.Py_ssize_t = n * (n - 1) * (n - 2) // 6
        i: cython.Py_ssize_t
        j: cython.Py_ssize_t
        k: cython.Py_ssize_t
        if n_triples <= iters:
            for i in range(n - 2):
                for j in range(i + 1, n - 1):
                    for k in range(j + 1, n):
                        _eval_triple(X, nrm, dd, ppx, ppy, n, i, j, k,
                                     po, use_c1, 0, fine_mask,
                                     eps_rel, c2_tau, fx, fy, cxk, cyk,
                                     px, py, d_p, best7, bt3)
        else:
            # int() keeps the interpreted path on python ints; numpy scalars
            # would overflow when multiplied by the 64-bit hash constant
            pidx: cython.ulonglong = int(py * w + px)
            salt: cython.ulonglong = ((pidx + 1) * 0x9E3779B97F4A7C15) & _MASK64
            state: cython.ulonglong = mix64(seed ^ salt)
            n_draw: cython.ulonglong = int(n)
            budget_c2: cython.Py_ssize_t = 0
            if po != 0:
                budget_c2 = (7 * iters + 9) // 10
            it: cython.Py_ssize_t
            for it in range(iters):
                state = mix64(state)
                i = cython.cast(cython.Py_ssize_t, state % n_draw)
                j = i
                while j == i:
                    state = mix64(state)
                    j = cython.cast(cython.Py_ssize_t, state % n_draw)
                k = i
                while k == i or k == j:
                    state = mix64(state)
                    k = cython.cast(cython.Py_ssize_t, state % n_draw)
                enforce: cython.int = 1 if it < budget_c2 else 0
                _eval_triple(X, nrm, dd, ppx, ppy, n, i, j, k,
                             po, use_c1, enforce, fine_mask,
                             eps_rel, c2_tau, fx, fy, cxk, cyk,
                             px, py, d_p, best7, bt3)
        if best7[0] < 3.0:
            continue
        mx: cython.double = best7[3]
        my: cython.double = best7[4]
        mz: cython.double = best7[5]
        bb: cython.double = best7[6]
        lim: cython.double = 1e-12 * fx * fy
        for t in range(n):
            used[t] = 0
            if po != 0:
                den: cython.double = (mx * fy * (ppx[t] - cxk)
                                      + my * fx * (ppy[t] - cyk) + mz * fx * fy)
                if -lim < den < lim:
                    delta[t] = INF
                    continue
                dfit: cython.double = -bb * fx * fy / den
                if dfit <= 0.0:
                    delta[t] = INF
                    continue
                dres: cython.double = dfit - dd[t]
                delta[t] = dres if dres >= 0.0 else -dres
            else:
                dres2: cython.double = mx * X[t, 0] + my * X[t, 1] + mz * X[t, 2] + bb
                delta[t] = dres2 if dres2 >= 0.0 else -dres2
        na: cython.Py_ssize_t = 0
        a: cython.Py_ssize_t
        for a in range(anchor_cap):
            sel: cython.Py_ssize_t = -1
            sel_delta: cython.double = INF
            sel_pid: cython.Py_ssize_t = 0
            for t in range(n):
                if used[t] != 0:
                    continue
                if delta[t] >= eps_rel * dd[t]:
                    continue
                pid: cython.Py_ssize_t = ppy[t] * w + ppx[t]
                if delta[t] < sel_delta or (delta[t] == sel_delta and pid < sel_pid):
                    sel = t
                    sel_delta = delta[t]
                    sel_pid = pid
            if sel < 0:
                break
            used[sel] = 1
            anchors_out[u, na, 0] = ppx[sel]
            anchors_out[u, na, 1] = ppy[sel]
            na += 1
        if na == 0:
            continue
        ok_out[u] = 1
        plane_out[u, 0] = mx
        plane_out[u, 1] = my
        plane_out[u, 2] = mz
        plane_out[u, 3] = bb
        anchor_n_out[u] = cython.cast(cython.int, na)
        triple_out[u, 0] = ppx[bt3[0]]
        triple_out[u, 1] = ppy[bt3[0]]
        triple_out[u, 2] = ppx[bt3[1]]
        triple_out[u, 3] = ppy[bt3[1]]
        triple_out[u, 4] = ppx[bt3[2]]
        triple_out[u, 5] = ppy[bt3[2]]


@cython.cfunc
@cython.exceptval(check=False)
def _sector_scan_cell8(cid: cython.Py_ssize_t,
                       px: cython.Py_ssize_t, py: cython.Py_ssize_t,
                       pt_x: cython.int[:], pt_y: cython.int[:],
                       cell_start: cython.long[:],
                       img_w: cython.Py_ssize_t, cap_sq: cython.double,
                       best_d2: cython.double[:], best_x: cython.long[:],
                       best_y: cython.long[:], best_pid: cython.long[:],
                       active: cython.uchar[:]) -> cython.int:
    """Scan one bucket cell for the 8-sector search (query excluded).

    Sector bins follow the atan2 convention of the scalar reference, but
    computed with integer comparisons: for 8 sectors every bin boundary
    is a principal direction, and the float binning provably agrees with
    the sign/diagonal tests on all integer offsets of realistic size.
    """
    tt: cython.Py_ssize_t
    for tt in range(cell_start[cid], cell_start[cid + 1]):
        dxi: cython.Py_ssize_t = pt_x[tt] - px
        dyi: cython.Py_ssize_t = pt_y[tt] - py
        sbin: cython.Py_ssize_t
        if dyi < 0:
            if dxi < dyi:
                sbin = 0
            elif dxi < 0:
                sbin = 1
            elif dxi + dyi < 0:
                sbin = 2
            else:
                sbin = 3
        elif dyi > 0:
            if dxi > dyi:
                sbin = 4
            elif dxi > 0:
                sbin = 5
            elif dxi + dyi > 0:
                sbin = 6
            else:
                sbin = 7
        elif dxi < 0:
            sbin = 0
        elif dxi > 0:
            sbin = 4
        else:
            continue  # the query pixel itself
        if active[sbin] == 0:
            continue
        ddx: cython.double = dxi
        ddy: cython.double = dyi
        d2: cython.double = ddx * ddx + ddy * ddy
        if d2 > cap_sq or d2 > best_d2[sbin]:
            continue
        pid: cython.Py_ssize_t = pt_y[tt] * img_w + pt_x[tt]
        if d2 < best_d2[sbin] or pid < best_pid[sbin]:
            best_d2[sbin] = d2
            best_x[sbin] = pt_x[tt]
            best_y[sbin] = pt_y[tt]
            best_pid[sbin] = pid
    return 0


@cython.ccall
def sector_search(qx: cython.int[:], qy: cython.int[:],
                  pt_x: cython.int[:], pt_y: cython.int[:],
                  cell_start: cython.long[:],
                  grid_w: cython.Py_ssize_t, grid_h: cython.Py_ssize_t,
                  cell: cython.Py_ssize_t,
                  img_w: cython.Py_ssize_t, phi: cython.Py_ssize_t,
                  cap: cython.double, cone_mask: cython.uchar[:, :],
                  use_cone: cython.int,
                  out_xy: cython.int[:, :, :], out_d2: cython.double[:, :]) -> None:
    """Nearest reliable pixel per angular sector around each query.

    Points are bucketed into a cell grid (CSR via cell_start, points
    sorted by cell). Rings are walked as 8 perimeter runs, one per
    nominal sector; expansion stops once every sector's best distance
    provably beats anything a farther ring could hold. Sectors whose
    cone_mask bit is clear hold no points at all and are finalized as
    empty up front (pid sentinel -2), and from ring 2 outward a run is
    skipped entirely when its nominal sector and both neighbors are
    final, which keeps blob-interior and border queries cheap. The
    query pixel itself is never a result.
    """
    nq: cython.Py_ssize_t = qx.shape[0]
    best_d2_np = np.empty(phi, dtype=np.float64)
    best_x_np = np.empty(phi, dtype=np.int64)
    best_y_np = np.empty(phi, dtype=np.int64)
    best_pid_np = np.empty(phi, dtype=np.int64)
    active_np = np.empty(phi, dtype=np.uint8)
    best_d2: cython.double[:] = best_d2_np
    best_x: cython.long[:] = best_x_np
    best_y: cython.long[:] = best_y_np
    best_pid: cython.long[:] = best_pid_np
    active: cython.uchar[:] = active_np
    cap_sq: cython.double = cap * cap
    u: cython.Py_ssize_t
    for u in range(nq):
        px: cython.Py_ssize_t = qx[u]
        py: cython.Py_ssize_t = qy[u]
        gx0: cython.Py_ssize_t = px // cell
        gy0: cython.Py_ssize_t = py // cell
        # rings beyond the farthest grid corner contain no cells at all
        max_rc: cython.Py_ssize_t = gx0 if gx0 > grid_w - 1 - gx0 else grid_w - 1 - gx0
        rc_y: cython.Py_ssize_t = gy0 if gy0 > grid_h - 1 - gy0 else grid_h - 1 - gy0
        if rc_y > max_rc:
            max_rc = rc_y
        cone_bits: cython.Py_ssize_t = cone_mask[py, px] if use_cone != 0 \
            else -1
        fast8: cython.int = 1 if phi == 8 else 0
        s: cython.Py_ssize_t
        for s in range(phi):
            best_d2[s] = INF
            best_x[s] = -1
            best_y[s] = -1
            if (cone_bits >> s) & 1 != 0:
                best_pid[s] = -1
                active[s] = 1
            else:
                best_pid[s] = -2
                active[s] = 0
        rc: cython.Py_ssize_t = 0
        while rc <= max_rc:
            lower: cython.double = (rc - 1) * cell
            if rc >= 1:
                if lower > cap:
                    break
                all_final: cython.int = 1
                for s in range(phi):
                    if best_pid[s] == -1 or (best_pid[s] >= 0
                                             and lower * lower <= best_d2[s]):
                        active[s] = 1
                        all_final = 0
                    else:
                        active[s] = 0
                if all_final != 0:
                    break
            if rc == 0:
                cid0: cython.Py_ssize_t = gy0 * grid_w + gx0
                if fast8 != 0:
                    _sector_scan_cell8(cid0, px, py, pt_x, pt_y, cell_start,
                                       img_w, cap_sq, best_d2, best_x,
                                       best_y, best_pid, active)
                    rc += 1
                    continue
            if fast8 != 0:
                run: cython.Py_ssize_t
                for run in range(8):
                    if rc >= 2:
                        # beyond ring 1 a run's cells only hold points
                        # of its nominal sector or a direct neighbor
                        smn: cython.Py_ssize_t = run - 1 if run > 0 else 7
                        spn: cython.Py_ssize_t = run + 1 if run < 7 else 0
                        if (active[smn] == 0 and active[run] == 0
                                and active[spn] == 0):
                            continue
                    tpos: cython.Py_ssize_t
                    for tpos in range(rc + 1):
                        gx_r: cython.Py_ssize_t
                        gy_r: cython.Py_ssize_t
                        if run == 0:
                            gx_r = gx0 - rc
                            gy_r = gy0 - tpos
                        elif run == 1:
                            gx_r = gx0 - rc + tpos
                            gy_r = gy0 - rc
                        elif run == 2:
                            gx_r = gx0 + tpos
                            gy_r = gy0 - rc
                        elif run == 3:
                            gx_r = gx0 + rc
                            gy_r = gy0 - rc + tpos
                        elif run == 4:
                            gx_r = gx0 + rc
                            gy_r = gy0 + tpos
                        elif run == 5:
                            gx_r = gx0 + rc - tpos
                            gy_r = gy0 + rc
                        elif run == 6:
                            gx_r = gx0 - tpos
                            gy_r = gy0 + rc
                        else:
                            gx_r = gx0 - rc
                            gy_r = gy0 + rc - tpos
                        if gx_r < 0 or gx_r >= grid_w \
                                or gy_r < 0 or gy_r >= grid_h:
                            continue
                        cid: cython.Py_ssize_t = gy_r * grid_w + gx_r
                        if cell_start[cid + 1] > cell_start[cid]:
                            _sector_scan_cell8(cid, px, py, pt_x, pt_y,
                                               cell_start, img_w, cap_sq,
                                               best_d2, best_x, best_y,
                                               best_pid, active)
            else:
                # generic sector count: plain square-ring scan with
                # float binning (small inputs only)
                gy_r2: cython.Py_ssize_t
                gx_r2: cython.Py_ssize_t
                for gy_r2 in range(gy0 - rc, gy0 + rc + 1):
                    if gy_r2 < 0 or gy_r2 >= grid_h:
                        continue
                    edge_row: cython.int = 1 if (gy_r2 == gy0 - rc
                                                 or gy_r2 == gy0 + rc) else 0
                    for gx_r2 in range(gx0 - rc, gx0 + rc + 1):
                        if gx_r2 < 0 or gx_r2 >= grid_w:
                            continue
                        if edge_row == 0 and gx_r2 != gx0 - rc \
                                and gx_r2 != gx0 + rc:
                            continue
                        cid2: cython.Py_ssize_t = gy_r2 * grid_w + gx_r2
                        tt: cython.Py_ssize_t
                        for tt in range(cell_start[cid2], cell_start[cid2 + 1]):
                            dx: cython.double = pt_x[tt] - px
                            dy: cython.double = pt_y[tt] - py
                            if dx == 0.0 and dy == 0.0:
                                continue  # the query pixel itself
                            d2: cython.double = dx * dx + dy * dy
                            if d2 > cap_sq:
                                continue
                            ang: cython.double = atan2(dy, dx)
                            binf: cython.double = (ang + PI) * phi / (2.0 * PI)
                            sbin: cython.Py_ssize_t = cython.cast(
                                cython.Py_ssize_t, floor(binf))
                            if sbin >= phi:
                                sbin -= phi
                            if sbin < 0:
                                sbin = 0
                            if active[sbin] == 0:
                                continue
                            pid: cython.Py_ssize_t = pt_y[tt] * img_w + pt_x[tt]
                            if d2 < best_d2[sbin] or (d2 == best_d2[sbin]
                                                      and pid < best_pid[sbin]):
                                best_d2[sbin] = d2
                                best_x[sbin] = pt_x[tt]
                                best_y[sbin] = pt_y[tt]
                                best_pid[sbin] = pid
            rc += 1
        for s in range(phi):
            out_xy[u, s, 0] = cython.cast(cython.int, best_x[s])
            out_xy[u, s, 1] = cython.cast(cython.int, best_y[s])
            out_d2[u, s] = best_d2[s]
