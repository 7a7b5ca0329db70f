"""Anchor discovery for unreliable pixels: search, fitting, selection.

Unreliable pixels borrow structure from reliable ones. Candidate
reliable pixels come from two searches: equal-angle sector search around
the pixel, and — inside large low-texture regions — a boundary-aware
extended search that walks toward the region border in 8 directions,
budgeting waypoints by how far the border is on each side. A constrained
RANSAC then fits a plane through candidate 3D points, rejecting triples
whose connecting segments cross fine edges and preferring triples whose
normals agree; the smallest-residual inliers become the pixel's anchors.

The per-pixel work runs in the compiled kernels; this module builds the
candidate sets (cacheable per level, since reliability and cues are
fixed within one), drives the batch kernel, and provides scalar
reference implementations for testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _native
from .edges import DIRECTIONS, EdgeCues

#: opposite-direction pairs (indices into DIRECTIONS): N/S, NE/SW, E/W, SE/NW
DIRECTION_PAIRS = ((0, 4), (1, 5), (2, 6), (3, 7))


@dataclass
class SearchConfig:
    """Anchor discovery parameters."""

    eta: int = 4             # per direction-pair waypoint budget (sum 2*eta)
    phi: int = 8             # sector count
    anchor_cap: int = 8      # max anchors kept per pixel
    epsilon: float = 0.005   # inlier threshold, relative to candidate depth
    tau: float = 0.87        # pairwise normal agreement for C2
    ransac_iters: int = 32   # sampled triples per pixel
    cell: int = 4            # bucket-grid cell side for sector search
    backend: str | None = None

    def __post_init__(self):
        if self.eta < 1:
            raise ValueError("eta must be >= 1")
        if self.phi < 3:
            raise ValueError("phi must be >= 3")
        if self.anchor_cap < 3:
            raise ValueError("anchor_cap must be >= 3")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must be in (0, 1)")


# ---------------------------------------------------------------------------
# region-boundary distances


def region_boundary(p: tuple[int, int], direction: int,
                    cues: EdgeCues) -> int:
    """Steps from p to the first pixel outside p's region.

    Stops at a coarse-edge pixel (label 0) or any label change; runs that
    reach the image border return the distance to the border pixel.
    """
    labels = cues.regions
    h, w = labels.shape
    dx, dy = DIRECTIONS[direction]
    x, y = p
    own = labels[y, x]
    t = 0
    while True:
        nx_, ny_ = x + dx, y + dy
        if nx_ < 0 or nx_ >= w or ny_ < 0 or ny_ >= h:
            return t
        t += 1
        if labels[ny_, nx_] != own:
            return t
        x, y = nx_, ny_


def region_boundary_map(labels: np.ndarray) -> np.ndarray:
    """region_boundary for all pixels/directions as (8, H, W) int32."""
    lab = np.asarray(labels)
    h, w = lab.shape
    out = np.empty((8, h, w), dtype=np.int32)
    xs = np.arange(w)
    big = w + h + 2
    for d, (dx, dy) in enumerate(DIRECTIONS):
        dist = np.zeros((h, w), dtype=np.int32)
        if dy == 0:
            for y in range(h):
                row = lab[y]
                # run ends: last index x with row[x] != row[x+1] marks a change
                changes = np.flatnonzero(row[:-1] != row[1:])
                if dx > 0:
                    ends = np.concatenate([changes, [w - 1]])
                    e = ends[np.searchsorted(ends, xs)]
                    dist[y] = np.where(e < w - 1, e + 1 - xs, w - 1 - xs)
                else:
                    starts = np.concatenate([[0], changes + 1])
                    s = starts[np.searchsorted(starts, xs, side="right") - 1]
                    dist[y] = np.where(s > 0, xs - (s - 1), xs)
        else:
            ys = range(h - 1, -1, -1) if dy > 0 else range(h)
            nb_lab = np.empty(w, dtype=lab.dtype)
            nb_dist = np.empty(w, dtype=np.int32)
            nb_ok = np.empty(w, dtype=bool)
            for y in ys:
                py = y + dy
                if not 0 <= py < h:
                    dist[y, :] = 0
                    continue
                if dx == 0:
                    nb_lab[:] = lab[py]
                    nb_dist[:] = dist[py]
                    nb_ok[:] = True
                elif dx > 0:
                    nb_lab[:-1] = lab[py, 1:]
                    nb_dist[:-1] = dist[py, 1:]
                    nb_ok[:-1] = True
                    nb_ok[-1] = False
                    nb_lab[-1] = 0
                    nb_dist[-1] = 0
                else:
                    nb_lab[1:] = lab[py, :-1]
                    nb_dist[1:] = dist[py, :-1]
                    nb_ok[1:] = True
                    nb_ok[0] = False
                    nb_lab[0] = 0
                    nb_dist[0] = 0
                same = nb_lab == lab[y]
                dist[y] = np.where(~nb_ok, 0, np.where(same, nb_dist + 1, 1))
        out[d] = dist
    return out


# ---------------------------------------------------------------------------
# search-space expansion


def allocate_search(d_a: float, d_b: float, eta: int) -> tuple[int, int]:
    """Split the 2*eta waypoint budget between two opposite directions.

    Proportional to the boundary distances, but every direction keeps at
    least one waypoint. Zero distances on both sides split evenly.
    """
    if d_a < 0 or d_b < 0:
        raise ValueError("distances must be >= 0")
    total = d_a + d_b
    if total == 0:
        return eta, eta
    n_a = int(2 * eta * d_a / total)
    n_a = max(1, min(2 * eta - 1, n_a))
    return n_a, 2 * eta - n_a


def waypoints(p: tuple[int, int], direction: int, n: int,
              boundary: int, shape: tuple[int, int]) -> list[tuple[int, int]]:
    """n equally spaced pixels from p toward the region boundary."""
    h, w = shape
    dx, dy = DIRECTIONS[direction]
    out = []
    for j in range(1, n + 1):
        off = int(j * boundary / (n + 1) + 0.5)
        if off < 1:
            continue
        x = p[0] + dx * off
        y = p[1] + dy * off
        if 0 <= x < w and 0 <= y < h:
            out.append((x, y))
    return out


#: wedge spans per angular sector, for phi = 8.  Sector k of the search
#: covers atan2 angles [k*pi/4 - pi, (k+1)*pi/4 - pi); on the integer
#: grid that half-open wedge is exactly {a*d1 + b*d2 : a >= 1, b >= 0}
#: for these two boundary directions (the float bin assignment puts
#: every boundary ray in the sector it bounds from below, verified for
#: all magnitudes covering realistic image sizes).  (dx, dy), y down.
CONE_SPANS = (((-1, 0), (-1, -1)), ((-1, -1), (0, -1)),
              ((0, -1), (1, -1)), ((1, -1), (1, 0)),
              ((1, 0), (1, 1)), ((1, 1), (0, 1)),
              ((0, 1), (-1, 1)), ((-1, 1), (-1, 0)))


def cone_occupancy(reliable: np.ndarray) -> np.ndarray:
    """Per-pixel bitmask of sectors that hold at least one reliable pixel.

    Bit k of the result is set when sector k's wedge (see CONE_SPANS)
    contains a reliable pixel.  The sector kernel uses a zero bit to
    finalize that sector as empty up front, which bounds ring expansion
    for pixels whose wedges leave the image.  The apex-inclusive span
    occupancy F(p) = R(p) or F(p + d1) or F(p + d2) is swept once in
    the direction both offsets share; the wedge of p is then F(p + d1).
    """
    rel = np.asarray(reliable, dtype=bool)
    h, w = rel.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for k, ((dx1, dy1), (dx2, dy2)) in enumerate(CONE_SPANS):
        occ = np.zeros((h, w), dtype=bool)  # F: apex-inclusive occupancy
        if dx1 == dx2:  # both offsets step one column; sweep along x
            dy = dy1 if dy1 != 0 else dy2  # the other offset's row step
            first = 0 if dx1 < 0 else w - 1
            occ[:, first] = rel[:, first]
            rng = range(1, w) if dx1 < 0 else range(w - 2, -1, -1)
            for x in rng:
                src = occ[:, x + dx1]
                f = rel[:, x] | src
                if dy < 0:
                    f[1:] |= src[:-1]
                else:
                    f[:-1] |= src[1:]
                occ[:, x] = f
        else:  # dy1 == dy2; sweep along y
            dx = dx1 if dx1 != 0 else dx2
            first = 0 if dy1 < 0 else h - 1
            occ[first] = rel[first]
            rng = range(1, h) if dy1 < 0 else range(h - 2, -1, -1)
            for y in rng:
                src = occ[y + dy1]
                f = rel[y] | src
                if dx < 0:
                    f[1:] |= src[:-1]
                else:
                    f[:-1] |= src[1:]
                occ[y] = f
        # the half-open wedge at p is the span at p + d1 (a >= 1, b >= 0)
        cone = np.zeros((h, w), dtype=bool)
        xs_lo, xs_hi = max(0, -dx1), min(w, w - dx1)
        ys_lo, ys_hi = max(0, -dy1), min(h, h - dy1)
        cone[ys_lo:ys_hi, xs_lo:xs_hi] = \
            occ[ys_lo + dy1:ys_hi + dy1, xs_lo + dx1:xs_hi + dx1]
        out |= (cone.astype(np.uint8) << k)
    return out


class ReliableIndex:
    """Shared lookup structures over one level's reliable mask.

    Bundles the nearest-reliable transform (for waypoint snapping) and
    the cell-bucketed point list (for the sector-search kernel).
    """

    def __init__(self, reliable: np.ndarray, cell: int = 4):
        self.reliable = np.asarray(reliable, dtype=bool)
        h, w = self.reliable.shape
        self.shape = (h, w)
        self.cell = cell
        self.count = int(self.reliable.sum())
        if self.count > 0:
            edt_idx = ndimage.distance_transform_edt(
                ~self.reliable, return_distances=False, return_indices=True)
            self.nearest_y = edt_idx[0]
            self.nearest_x = edt_idx[1]
        else:
            self.nearest_y = np.zeros((h, w), dtype=np.int64)
            self.nearest_x = np.zeros((h, w), dtype=np.int64)
        ys, xs = np.nonzero(self.reliable)
        self.grid_w = (w + cell - 1) // cell
        self.grid_h = (h + cell - 1) // cell
        cells = (ys // cell) * self.grid_w + (xs // cell)
        order = np.argsort(cells, kind="stable")
        self.pt_x = xs[order].astype(np.int32)
        self.pt_y = ys[order].astype(np.int32)
        counts = np.bincount(cells, minlength=self.grid_w * self.grid_h)
        self.cell_start = np.concatenate(
            [[0], np.cumsum(counts)]).astype(np.int64)
        self._cone: np.ndarray | None = None

    @property
    def cone(self) -> np.ndarray:
        """Lazily built cone_occupancy bitmask for the sector kernel."""
        if self._cone is None:
            self._cone = cone_occupancy(self.reliable)
        return self._cone

    def nearest(self, p: tuple[int, int]) -> tuple[int, int] | None:
        if self.count == 0:
            return None
        x, y = p
        return int(self.nearest_x[y, x]), int(self.nearest_y[y, x])


def extended_search(p: tuple[int, int], boundary_dists: np.ndarray,
                    index: ReliableIndex, cfg: SearchConfig) -> list[tuple[int, int]]:
    """Reliable pixels near boundary-aware waypoints around p.

    boundary_dists is the (8, H, W) region-boundary field. Waypoints with
    no reliable pixel within their direction's boundary distance are
    dropped; results keep first-occurrence order without duplicates.
    """
    x, y = p
    out: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for da, db in DIRECTION_PAIRS:
        dist_a = int(boundary_dists[da, y, x])
        dist_b = int(boundary_dists[db, y, x])
        n_a, n_b = allocate_search(dist_a, dist_b, cfg.eta)
        for d, n, bnd in ((da, n_a, dist_a), (db, n_b, dist_b)):
            for wp in waypoints(p, d, n, bnd, index.shape):
                near = index.nearest(wp)
                if near is None:
                    continue
                dd = math.hypot(near[0] - wp[0], near[1] - wp[1])
                if dd > bnd:
                    continue
                if near not in seen:
                    seen.add(near)
                    out.append(near)
    return out


def sector_search_py(p: tuple[int, int], reliable: np.ndarray,
                     phi: int, cap: float) -> list[tuple[int, int]]:
    """Brute-force nearest reliable pixel per angular sector (reference).

    The query pixel itself is never a result, even when reliable.
    """
    ys, xs = np.nonzero(reliable)
    best: list[tuple[float, int, tuple[int, int]] | None] = [None] * phi
    for x, y in zip(xs, ys):
        if x == p[0] and y == p[1]:
            continue
        dx = float(x - p[0])
        dy = float(y - p[1])
        d2 = dx * dx + dy * dy
        if d2 > cap * cap:
            continue
        ang = math.atan2(dy, dx)
        sbin = int((ang + math.pi) * phi / (2.0 * math.pi))
        if sbin >= phi:
            sbin -= phi
        pid = int(y) * reliable.shape[1] + int(x)
        cur = best[sbin]
        if cur is None or (d2, pid) < (cur[0], cur[1]):
            best[sbin] = (d2, pid, (int(x), int(y)))
    return [b[2] for b in best if b is not None]


def sector_search_batch(qx: np.ndarray, qy: np.ndarray,
                        index: ReliableIndex, cfg: SearchConfig) -> tuple[np.ndarray, np.ndarray]:
    """Kernel-backed sector search for many query pixels at once."""
    kern = _native.get_kernels(cfg.backend)
    h, w = index.shape
    m = len(qx)
    out_xy = np.full((m, cfg.phi, 2), -1, dtype=np.int32)
    out_d2 = np.full((m, cfg.phi), np.inf)
    if index.count == 0 or m == 0:
        return out_xy, out_d2
    cap = math.hypot(w, h)
    use_cone = 1 if cfg.phi == 8 else 0  # cone spans assume 8 sectors
    cone = index.cone if use_cone else np.zeros((h, w), dtype=np.uint8)
    kern.sector_search(np.ascontiguousarray(qx, dtype=np.int32),
                       np.ascontiguousarray(qy, dtype=np.int32),
                       index.pt_x, index.pt_y, index.cell_start,
                       index.grid_w, index.grid_h, index.cell,
                       w, cfg.phi, cap, cone, use_cone, out_xy, out_d2)
    return out_xy, out_d2


# ---------------------------------------------------------------------------
# candidate assembly and plane fitting


@dataclass
class CandidateField:
    """Per-unreliable-pixel candidate lists in CSR layout (level-cached)."""

    qx: np.ndarray          # int32 (M,)
    qy: np.ndarray          # int32 (M,)
    offsets: np.ndarray     # int64 (M+1,)
    cand_x: np.ndarray      # int32 (total,)
    cand_y: np.ndarray      # int32 (total,)

    @property
    def n_queries(self) -> int:
        return len(self.qx)

    def candidates_of(self, i: int) -> list[tuple[int, int]]:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return [(int(x), int(y)) for x, y in
                zip(self.cand_x[lo:hi], self.cand_y[lo:hi])]


def _extended_batch(qx: np.ndarray, qy: np.ndarray,
                    boundary_dists: np.ndarray, index: ReliableIndex,
                    cfg: SearchConfig) -> tuple[np.ndarray, ...]:
    """Vectorized extended_search over many queries.

    Returns flat (query_index, slot, x, y) arrays, where slot reproduces
    the scalar traversal order: direction pairs in DIRECTION_PAIRS order,
    the first direction's waypoints before the second's.
    """
    m = len(qx)
    eta = cfg.eta
    out_qi: list[np.ndarray] = []
    out_slot: list[np.ndarray] = []
    out_x: list[np.ndarray] = []
    out_y: list[np.ndarray] = []
    if m == 0 or index.count == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty, empty
    qi = np.arange(m, dtype=np.int64)
    h, w = index.shape
    for pair_idx, (da, db) in enumerate(DIRECTION_PAIRS):
        dist_a = boundary_dists[da, qy, qx].astype(np.int64)
        dist_b = boundary_dists[db, qy, qx].astype(np.int64)
        total = dist_a + dist_b
        with np.errstate(divide="ignore", invalid="ignore"):
            n_a = (2 * eta * dist_a / np.where(total == 0, 1, total)).astype(np.int64)
        n_a = np.clip(n_a, 1, 2 * eta - 1)
        n_a = np.where(total == 0, eta, n_a)
        n_b = 2 * eta - n_a
        slot0 = cfg.phi + pair_idx * 2 * eta
        for d, n_dir, bnd, base in ((da, n_a, dist_a, None),
                                    (db, n_b, dist_b, n_a)):
            dx, dy = DIRECTIONS[d]
            for j in range(1, 2 * eta):
                live = j <= n_dir
                if not live.any():
                    break
                off = (j * bnd / (n_dir + 1) + 0.5).astype(np.int64)
                live &= off >= 1
                wx = qx + dx * off
                wy = qy + dy * off
                live &= (wx >= 0) & (wx < w) & (wy >= 0) & (wy < h)
                if not live.any():
                    continue
                wxl = wx[live]
                wyl = wy[live]
                nx_ = index.nearest_x[wyl, wxl]
                ny_ = index.nearest_y[wyl, wxl]
                dd = np.hypot(nx_ - wxl, ny_ - wyl)
                keep = dd <= bnd[live]
                if not keep.any():
                    continue
                slot = slot0 + (j - 1) if base is None else \
                    slot0 + base[live] + (j - 1)
                out_qi.append(qi[live][keep])
                out_slot.append(np.broadcast_to(slot, wxl.shape)[keep]
                                if np.isscalar(slot) or slot.ndim == 0
                                else slot[keep])
                out_x.append(nx_[keep])
                out_y.append(ny_[keep])
    if not out_qi:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty, empty
    return (np.concatenate(out_qi), np.concatenate(out_slot),
            np.concatenate(out_x), np.concatenate(out_y))


def build_candidates(unreliable_xy: tuple[np.ndarray, np.ndarray],
                     cues: EdgeCues, index: ReliableIndex,
                     boundary_dists: np.ndarray,
                     cfg: SearchConfig, extended: bool = True) -> CandidateField:
    """Collect sector + extended-search candidates for each query pixel.

    Sector results come first, then extended-search results for pixels in
    low-texture regions; duplicates keep their first position. The output
    depends only on reliability and cues, so it is valid for a whole
    pyramid level. extended=False keeps only the sector stage.
    """
    qx, qy = unreliable_xy
    qx = np.asarray(qx, dtype=np.int32)
    qy = np.asarray(qy, dtype=np.int32)
    m = len(qx)
    sec_xy, _ = sector_search_batch(qx, qy, index, cfg)
    low_mask = cues.low_texture_mask
    h, w = index.shape

    # flatten sector results (slots 0..phi-1) and extended results
    # (slots phi..) into one (query, slot) stream, then sort + dedup
    sec_valid = sec_xy[:, :, 0] >= 0
    sqi, sslot = np.nonzero(sec_valid)
    parts_qi = [sqi.astype(np.int64)]
    parts_slot = [sslot.astype(np.int64)]
    parts_x = [sec_xy[sqi, sslot, 0].astype(np.int64)]
    parts_y = [sec_xy[sqi, sslot, 1].astype(np.int64)]
    low_q = low_mask[qy, qx] if extended else np.zeros(m, dtype=bool)
    if low_q.any():
        lsel = np.flatnonzero(low_q)
        eqi, eslot, ex, ey = _extended_batch(
            qx[lsel].astype(np.int64), qy[lsel].astype(np.int64),
            boundary_dists, index, cfg)
        parts_qi.append(lsel[eqi])
        parts_slot.append(eslot)
        parts_x.append(ex)
        parts_y.append(ey)
    all_qi = np.concatenate(parts_qi)
    all_slot = np.concatenate(parts_slot)
    all_x = np.concatenate(parts_x)
    all_y = np.concatenate(parts_y)
    order = np.lexsort((all_slot, all_qi))
    all_qi = all_qi[order]
    all_x = all_x[order]
    all_y = all_y[order]
    # first-occurrence dedup of pixel ids within each query group: unique
    # on (query, pixel) keys returns the earliest (lowest-slot) instance
    key = all_qi * (h * w) + all_y * w + all_x
    kept = np.sort(np.unique(key, return_index=True)[1])
    kept_qi = all_qi[kept]
    counts = np.bincount(kept_qi, minlength=m)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return CandidateField(qx=qx, qy=qy, offsets=offsets,
                          cand_x=all_x[kept].astype(np.int32),
                          cand_y=all_y[kept].astype(np.int32))


@dataclass
class AnchorField:
    """Batch RANSAC output: per-pixel plane fits and anchor pixels."""

    ok: np.ndarray          # bool (H, W)
    anchors: np.ndarray     # int32 (H, W, 2*cap) packed x,y pairs
    counts: np.ndarray      # uint8 (H, W)
    plane_cam: np.ndarray   # float64 (H, W, 4) camera-frame (m, b)
    triple: np.ndarray      # int32 (H, W, 6) winning triple pixels

    def anchors_of(self, x: int, y: int) -> list[tuple[int, int]]:
        k = int(self.counts[y, x])
        row = self.anchors[y, x]
        return [(int(row[2 * i]), int(row[2 * i + 1])) for i in range(k)]


def fit_planes(cands: CandidateField, depth: np.ndarray, normal: np.ndarray,
               ref_k: np.ndarray, cues: EdgeCues, cfg: SearchConfig,
               po_enabled: bool, seed: int) -> AnchorField:
    """Run the constrained RANSAC kernel over all candidate lists."""
    kern = _native.get_kernels(cfg.backend)
    h, w = depth.shape
    m = cands.n_queries
    ok = np.zeros(m, dtype=np.uint8)
    plane = np.zeros((m, 4))
    anchors = np.full((m, cfg.anchor_cap, 2), -1, dtype=np.int32)
    anchor_n = np.zeros(m, dtype=np.int32)
    triple = np.full((m, 6), -1, dtype=np.int32)
    if m > 0:
        kern.ransac_batch(cands.qx, cands.qy, cands.offsets,
                          cands.cand_x, cands.cand_y,
                          np.ascontiguousarray(depth),
                          np.ascontiguousarray(normal),
                          np.ascontiguousarray(ref_k),
                          np.ascontiguousarray(cues.fine, dtype=np.uint8),
                          np.ascontiguousarray(cues.stochastic, dtype=np.uint8),
                          1 if po_enabled else 0, cfg.ransac_iters,
                          cfg.epsilon, cfg.tau, cfg.anchor_cap,
                          int(seed) & 0xFFFFFFFFFFFFFFFF,
                          ok, plane, anchors, anchor_n, triple)
    field = AnchorField(
        ok=np.zeros((h, w), dtype=bool),
        anchors=np.full((h, w, 2 * cfg.anchor_cap), -1, dtype=np.int32),
        counts=np.zeros((h, w), dtype=np.uint8),
        plane_cam=np.zeros((h, w, 4)),
        triple=np.full((h, w, 6), -1, dtype=np.int32),
    )
    for i in range(m):
        if not ok[i]:
            continue
        x, y = int(cands.qx[i]), int(cands.qy[i])
        field.ok[y, x] = True
        field.counts[y, x] = anchor_n[i]
        field.anchors[y, x, :2 * anchor_n[i]] = anchors[i, :anchor_n[i]].ravel()
        field.plane_cam[y, x] = plane[i]
        field.triple[y, x] = triple[i]
    return field


def discover_anchors(depth: np.ndarray, normal: np.ndarray, ref_k: np.ndarray,
                     cues: EdgeCues, reliable: np.ndarray, cfg: SearchConfig,
                     po_enabled: bool, seed: int,
                     cands: CandidateField | None = None,
                     extended: bool = True,
                     ) -> tuple[AnchorField, CandidateField]:
    """Full anchor discovery for every unreliable pixel of one view.

    Pass a cached CandidateField to skip the search stage (valid as long
    as reliability and cues are unchanged, i.e. within a pyramid level).
    """
    if cands is None:
        index = ReliableIndex(reliable, cfg.cell)
        bmap = region_boundary_map(cues.regions)
        qy, qx = np.nonzero(~np.asarray(reliable, dtype=bool))
        cands = build_candidates((qx.astype(np.int32), qy.astype(np.int32)),
                                 cues, index, bmap, cfg, extended)
    field = fit_planes(cands, depth, normal, ref_k, cues, cfg,
                       po_enabled, seed)
    return field, cands


# ---------------------------------------------------------------------------
# scalar reference RANSAC (exhaustive; used by tests as an oracle)


def ransac_reference(p: tuple[int, int], candidates: list[tuple[int, int]],
                     depth: np.ndarray, normal: np.ndarray, ref_k: np.ndarray,
                     fine: np.ndarray, stochastic: bool, po_enabled: bool,
                     cfg: SearchConfig):
    """Exhaustive-triple plane fit matching the kernel's scoring rules.

    Returns (inlier_count, plane(m0,m1,m2,b), triple_indices) or None.
    Only meant for small candidate lists in tests.
    """
    kern = _native.get_kernels("python")
    fx, fy, cxk, cyk = ref_k
    n = len(candidates)
    if n < 3:
        return None
    X = np.empty((n, 3))
    nrm = np.empty((n, 3))
    dd = np.empty(n)
    for t, (cx, cy) in enumerate(candidates):
        d = depth[cy, cx]
        X[t] = (d * (cx - cxk) / fx, d * (cy - cyk) / fy, d)
        nrm[t] = normal[cy, cx]
        dd[t] = d
    use_c1 = po_enabled and not stochastic
    fine_u8 = np.ascontiguousarray(fine, dtype=np.uint8)
    best = None
    for i in range(n - 2):
        for j in range(i + 1, n - 1):
            for k in range(j + 1, n):
                c2ok = False
                if po_enabled:
                    c2ok = (nrm[i] @ nrm[j] > cfg.tau
                            and nrm[i] @ nrm[k] > cfg.tau
                            and nrm[j] @ nrm[k] > cfg.tau)
                if use_c1:
                    blocked = False
                    for (a, b) in ((i, j), (i, k), (j, k)):
                        pa, pb = candidates[a], candidates[b]
                        if kern.segment_clear(fine_u8, pa[0], pa[1],
                                              pb[0], pb[1]) == 0:
                            blocked = True
                            break
                    if blocked:
                        continue
                e1 = X[j] - X[i]
                e2 = X[k] - X[i]
                mvec = np.cross(e1, e2)
                mn = np.linalg.norm(mvec)
                if mn <= 1e-10 * np.linalg.norm(e1) * np.linalg.norm(e2) or mn == 0:
                    continue
                mvec = mvec / mn
                b = -float(mvec @ X[i])
                cnt = 0
                lim = 1e-12 * fx * fy
                for t in range(n):
                    if po_enabled:
                        den = (mvec[0] * fy * (candidates[t][0] - cxk)
                               + mvec[1] * fx * (candidates[t][1] - cyk)
                               + mvec[2] * fx * fy)
                        if abs(den) < lim:
                            continue
                        dfit = -b * fx * fy / den
                        if dfit <= 0:
                            continue
                        delta = abs(dfit - dd[t])
                    else:
                        delta = abs(float(mvec @ X[t]) + b)
                    if delta < cfg.epsilon * dd[t]:
                        cnt += 1
                dp_res = np.inf
                if po_enabled:
                    den_p = (mvec[0] * fy * (p[0] - cxk)
                             + mvec[1] * fx * (p[1] - cyk) + mvec[2] * fx * fy)
                    if abs(den_p) >= lim:
                        dfp = -b * fx * fy / den_p
                        if dfp > 0:
                            dp_res = abs(dfp - depth[p[1], p[0]])
                if best is None:
                    better = cnt >= 3
                else:
                    better = cnt > best[0]
                    if po_enabled and not better and cnt == best[0]:
                        if c2ok and not best[3]:
                            better = True
                        elif c2ok == best[3] and dp_res < best[4]:
                            better = True
                if better and cnt >= 3:
                    best = (cnt, (mvec[0], mvec[1], mvec[2], b),
                            (i, j, k), c2ok, dp_res)
    if best is None:
        return None
    return best[0], best[1], best[2]
