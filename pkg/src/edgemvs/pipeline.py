"""Coarse-to-fine orchestration of both matching phases, plus fusion.

The schedule: build a factor-2 image pyramid; bootstrap the coarsest
level with random hypotheses and conventional sweeps; at each finer
level upsample the previous state, re-classify reliability, then per
full iteration discover anchored plane models, run edge-aware
conventional sweeps over the reliable pixels and deformable sweeps over
the unreliable ones. Fusion cross-checks the per-view depth maps and
averages the consistent observations into one oriented point cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .deformable import DeformableConfig, gamma_map, sweep_deformable_view
from .edges import EdgeCues, TextureConfig, build_cues, directional_distances
from .geometry import CameraModel
from .matching import MatchConfig, MatchView, classify_reliability, sweep_view
from .planar import SearchConfig, discover_anchors
from .sampling import exclusion_radius, span_limit

__all__ = [
    "PyramidConfig", "FusionConfig", "PipelineConfig", "PipelineResult",
    "DepthView", "FusedCloud", "num_levels", "build_pyramid",
    "upsample_state", "run_pipeline", "consistency_support", "fuse_views",
]

# seed-sequence namespaces; every random stream in the pipeline is keyed
# (master_seed, namespace, level, ...) so streams never collide
_NS_INIT = 0
_NS_SWEEP = 1
_NS_CUES = 2
_NS_RANSAC = 3
_NS_DEFORM = 4


@dataclass
class PyramidConfig:
    """Pyramid shape and per-level sweep counts.

    levels=None picks the deepest pyramid whose coarsest level keeps a
    minimum dimension of at least min_coarse_dim, capped at max_levels.
    """

    levels: int | None = None
    scale_factor: int = 2
    sweeps_conventional: int = 3
    sweeps_deformable: int = 3
    full_iterations: int = 2
    min_coarse_dim: int = 64
    max_levels: int = 4

    def __post_init__(self):
        if self.levels is not None and self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.scale_factor != 2:
            raise ValueError("only factor-2 pyramids are supported")
        if self.sweeps_conventional < 1 or self.sweeps_deformable < 0:
            raise ValueError("invalid sweep counts")
        if self.full_iterations < 1:
            raise ValueError("full_iterations must be >= 1")


@dataclass
class FusionConfig:
    """Cross-view consistency thresholds for depth-map fusion."""

    min_consistent_views: int = 1
    depth_rel_tol: float = 0.01
    reproj_tol: float = 2.0

    def __post_init__(self):
        if self.min_consistent_views < 1:
            raise ValueError("min_consistent_views must be >= 1")
        if self.depth_rel_tol <= 0.0 or self.reproj_tol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class PipelineConfig:
    """Every knob of the end-to-end pipeline in one place.

    The four toggles correspond to the separately switchable components:
    edge_sampling (edge-guided non-local strips + the shrinking start
    offset), range_expansion (extended anchor search beyond region
    boundaries), plane_opt (depth-consistency scoring and edge
    constraints inside the plane fit), adaptive_patch (data-driven
    center-patch radius with the stochastic discard path).
    """

    seed: int = 0
    pyramid: PyramidConfig = dc_field(default_factory=PyramidConfig)
    match: MatchConfig = dc_field(default_factory=MatchConfig)
    search: SearchConfig = dc_field(default_factory=SearchConfig)
    deform: DeformableConfig = dc_field(default_factory=DeformableConfig)
    texture: TextureConfig = dc_field(default_factory=TextureConfig)
    fusion: FusionConfig = dc_field(default_factory=FusionConfig)
    edge_sampling: bool = True
    range_expansion: bool = True
    plane_opt: bool = True
    adaptive_patch: bool = True
    keep_levels: bool = False
    backend: str | None = None

    def resolved(self) -> "PipelineConfig":
        """Copy with an explicit backend pushed into every sub-config."""
        if self.backend is None:
            return self
        return replace(
            self,
            match=replace(self.match, backend=self.backend),
            search=replace(self.search, backend=self.backend),
            deform=replace(self.deform, backend=self.backend),
        )


@dataclass
class PipelineResult:
    """Finest-level state of every view plus run diagnostics.

    gamma / active / unreliable come from the last anchor discovery at
    the finest level (None when that level never ran the deformable
    phase, e.g. a one-level pyramid).
    """

    views: list[MatchView]
    stats: dict
    gamma: list[np.ndarray | None]
    active: list[np.ndarray | None]
    unreliable: list[np.ndarray | None]
    anchor_fields: list | None = None
    level_maps: list[list[dict]] | None = None


@dataclass
class DepthView:
    """Minimal per-view state accepted by fusion (no matching buffers)."""

    name: str
    image: np.ndarray
    cam: CameraModel
    depth: np.ndarray
    normal: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass
class FusedCloud:
    """Fusion output: one row per accepted pixel."""

    points: np.ndarray   # float64 (N, 3) world positions
    normals: np.ndarray  # float64 (N, 3) world unit normals
    gray: np.ndarray     # float64 (N,) reference intensity in [0, 1]
    view_id: np.ndarray  # int32 (N,) reference view of each point
    pixel: np.ndarray    # int32 (N, 2) x, y in the reference view


def num_levels(shape: tuple[int, int], cfg: PyramidConfig) -> int:
    """Pyramid depth: explicit if configured, else deepest that keeps
    the coarsest minimum dimension >= min_coarse_dim (capped)."""
    h, w = shape
    if cfg.levels is not None:
        if (min(h, w) >> (cfg.levels - 1)) < cfg.min_coarse_dim:
            raise ValueError(
                f"image {w}x{h} too small for {cfg.levels} pyramid levels")
        return cfg.levels
    levels = 1
    while levels < cfg.max_levels and (min(h, w) >> levels) >= cfg.min_coarse_dim:
        levels += 1
    return levels


def _downsample_image(img: np.ndarray) -> np.ndarray:
    """2x2 box-filter downsampling; odd trailing rows/columns dropped."""
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    c = img[:h2 * 2, :w2 * 2]
    return 0.25 * (c[0::2, 0::2] + c[1::2, 0::2] + c[0::2, 1::2] + c[1::2, 1::2])


def _downsample_camera(cam: CameraModel) -> CameraModel:
    """Halve the intrinsics; principal point gets the pixel-center shift."""
    return CameraModel(fx=cam.fx / 2.0, fy=cam.fy / 2.0,
                       cx=(cam.cx + 0.5) / 2.0 - 0.5,
                       cy=(cam.cy + 0.5) / 2.0 - 0.5,
                       R=cam.R, C=cam.C, d_min=cam.d_min, d_max=cam.d_max)


def build_pyramid(images: list[np.ndarray], cams: list[CameraModel],
                  cfg: PyramidConfig) -> list[list[tuple[np.ndarray, CameraModel]]]:
    """Per-view pyramids, finest first: result[view][level] = (image, cam)."""
    shape = images[0].shape
    for img in images:
        if img.shape != shape:
            raise ValueError("all views must share one image size")
    levels = num_levels(shape, cfg)
    pyramids = []
    for img, cam in zip(images, cams):
        img = np.ascontiguousarray(img, dtype=np.float64)
        steps = [(img, cam)]
        for _ in range(levels - 1):
            img = np.ascontiguousarray(_downsample_image(img))
            cam = _downsample_camera(cam)
            steps.append((img, cam))
        pyramids.append(steps)
    return pyramids


def _nn_upsample(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor 2x upsampling onto shape (edge rows/cols repeat)."""
    up = np.repeat(np.repeat(arr, 2, axis=0), 2, axis=1)
    if up.shape[0] < shape[0]:
        up = np.concatenate([up, up[-1:]], axis=0)
    if up.shape[1] < shape[1]:
        up = np.concatenate([up, up[:, -1:]], axis=1)
    return np.ascontiguousarray(up[:shape[0], :shape[1]])


def upsample_state(depth: np.ndarray, normal: np.ndarray,
                   reliable: np.ndarray, shape: tuple[int, int]
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Carry a coarse level's state to the next finer resolution.

    Depth is nearest-neighbor upsampled so discontinuities stay step
    edges; normals and reliability ride along unchanged. Costs are not
    carried: the caller re-evaluates them at the finer resolution.
    """
    return (_nn_upsample(depth, shape), _nn_upsample(normal, shape),
            _nn_upsample(reliable, shape))


def _rng(key: tuple) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(key))


def _ransac_seed(key: tuple) -> int:
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0])


def _run_coarsest(mviews: list[MatchView], li: int, cfg: PipelineConfig,
                  level_stats: dict) -> None:
    """Bootstrap stage: conventional sweeps over every pixel, no cues."""
    pcfg = cfg.pyramid
    for it in range(pcfg.full_iterations):
        it_stats = {"view": [{"conv_updates": []} for _ in mviews]}
        for t in range(pcfg.sweeps_conventional):
            xi = exclusion_radius(t) if cfg.edge_sampling else 1
            for vi, mv in enumerate(mviews):
                rand = _rng((cfg.seed, _NS_SWEEP, li, it, t, vi)).random(
                    mv.shape + (8,))
                n = sweep_view(mv, cfg.match, rand,
                               es_enabled=cfg.edge_sampling, xi=xi)
                it_stats["view"][vi]["conv_updates"].append(n)
        level_stats["iterations"].append(it_stats)


def _run_finer(mviews: list[MatchView], li: int, lnum: int,
               cfg: PipelineConfig, cues_list: list[EdgeCues],
               coarse_dists: list[np.ndarray], level_stats: dict,
               result: PipelineResult) -> None:
    """One full level of the alternating conventional/deformable schedule."""
    pcfg = cfg.pyramid
    # candidate sets depend only on reliability and cues, so they are
    # reused across iterations whenever the reliability mask is unchanged
    cand_cache: list = [None] * len(mviews)
    lam = span_limit(mviews[0].shape[1], lnum)
    for it in range(pcfg.full_iterations):
        it_stats = {"view": []}
        for vi, mv in enumerate(mviews):
            cues = cues_list[vi]
            vstat = {"candidates": 0, "fit_ok": 0, "active": 0,
                     "gamma_zero": 0, "conv_updates": [], "deform_updates": []}
            unreliable = ~mv.reliable
            # anchored plane models for the unreliable pixels, once per
            # full iteration
            have_work = bool(unreliable.any()) and pcfg.sweeps_deformable > 0
            anchor_field = None
            gam = None
            if have_work:
                cached = None
                if (cand_cache[vi] is not None
                        and np.array_equal(cand_cache[vi][0], mv.reliable)):
                    cached = cand_cache[vi][1]
                seed_r = _ransac_seed((cfg.seed, _NS_RANSAC, li, it, vi))
                anchor_field, cands = discover_anchors(
                    mv.depth, mv.normal, mv.ref_k, cues, mv.reliable,
                    cfg.search, cfg.plane_opt, seed_r, cands=cached,
                    extended=cfg.range_expansion)
                cand_cache[vi] = (mv.reliable.copy(), cands)
                if cfg.adaptive_patch:
                    gam = gamma_map(anchor_field, cues, cfg.deform,
                                    coarse_dists[vi])
                else:
                    gam = np.where(anchor_field.ok, cfg.deform.fixed_radius,
                                   0).astype(np.int32)
                vstat["candidates"] = int(len(cands.cand_x))
                vstat["fit_ok"] = int(anchor_field.ok.sum())
            # conventional sweeps polish the reliable pixels with the
            # edge-aware candidate strips
            conv_mask = mv.reliable.astype(np.uint8)
            for t in range(pcfg.sweeps_conventional):
                xi = exclusion_radius(t) if cfg.edge_sampling else 1
                rand = _rng((cfg.seed, _NS_SWEEP, li, it, t, vi)).random(
                    mv.shape + (8,))
                n = sweep_view(mv, cfg.match, rand, update_mask=conv_mask,
                               es_enabled=cfg.edge_sampling, have_cues=True,
                               xi=xi, fine_mask=cues.fine,
                               fine_dist=cues.fine_dist, lam_width=lam)
                vstat["conv_updates"].append(n)
            # deformable sweeps rebuild the unreliable pixels that got a
            # plane model
            if have_work and anchor_field.ok.any():
                active = unreliable & anchor_field.ok
                vstat["active"] = int(active.sum())
                vstat["gamma_zero"] = int(((gam == 0) & active).sum())
                dcost = np.full(mv.shape, np.nan)
                for t in range(pcfg.sweeps_deformable):
                    rand = _rng((cfg.seed, _NS_DEFORM, li, it, t, vi)).random(
                        mv.shape + (8,))
                    n = sweep_deformable_view(mv, anchor_field, gam, dcost,
                                              active, cfg.deform, rand)
                    vstat["deform_updates"].append(n)
                mv.refresh_costs(cfg.match)
                if li == 0:
                    result.gamma[vi] = gam
                    result.active[vi] = active
                    result.unreliable[vi] = unreliable
                    result.anchor_fields[vi] = anchor_field
            it_stats["view"].append(vstat)
        # every full iteration ends with a joint re-classification, so
        # pixels repaired by the deformable stage graduate into the next
        # iteration's conventional polish
        classify_reliability(mviews, cfg.match)
        it_stats["reliable"] = [float(mv.reliable.mean()) for mv in mviews]
        level_stats["iterations"].append(it_stats)


def run_pipeline(images: list[np.ndarray], cams: list[CameraModel],
                 cfg: PipelineConfig | None = None,
                 names: list[str] | None = None) -> PipelineResult:
    """Run the whole coarse-to-fine pipeline over a set of views.

    images are grayscale float arrays in [0, 1], one per camera. The
    returned result holds every view's finest-level depth/normal/cost
    maps and reliability masks, ready for fusion.
    """
    if cfg is None:
        cfg = PipelineConfig()
    cfg = cfg.resolved()
    if len(images) < 2:
        raise ValueError("need at least two views")
    if len(images) != len(cams):
        raise ValueError("one camera per image required")
    if names is None:
        names = [f"view{i:02d}" for i in range(len(images))]
    pyramids = build_pyramid(images, cams, cfg.pyramid)
    levels = len(pyramids[0])
    nview = len(images)
    result = PipelineResult(views=[], stats={"levels": levels, "level": []},
                            gamma=[None] * nview, active=[None] * nview,
                            unreliable=[None] * nview,
                            anchor_fields=[None] * nview,
                            level_maps=[] if cfg.keep_levels else None)
    mviews: list[MatchView] = []
    for li in range(levels - 1, -1, -1):
        lnum = li + 1
        prev = mviews
        mviews = []
        for vi in range(nview):
            img, cam = pyramids[vi][li]
            others = [j for j in range(nview) if j != vi]
            mviews.append(MatchView(
                name=names[vi], image=img, cam=cam,
                src_images=np.stack([pyramids[j][li][0] for j in others]),
                src_cams=[pyramids[j][li][1] for j in others]))
        level_stats = {"level": lnum, "shape": mviews[0].shape,
                       "reliable_start": None, "reliable_end": [],
                       "iterations": []}
        if li == levels - 1:
            for vi, mv in enumerate(mviews):
                mv.initialize(_rng((cfg.seed, _NS_INIT, li, vi)), cfg.match)
            _run_coarsest(mviews, li, cfg, level_stats)
        else:
            for vi, mv in enumerate(mviews):
                d, n, r = upsample_state(prev[vi].depth, prev[vi].normal,
                                         prev[vi].reliable, mv.shape)
                mv.depth, mv.normal, mv.reliable = d, n, r
                mv.refresh_costs(cfg.match)
            classify_reliability(mviews, cfg.match)
            level_stats["reliable_start"] = [
                float(mv.reliable.mean()) for mv in mviews]
            cues_list = [
                build_cues(mv.image * 255.0, lnum, cfg.texture,
                           _rng((cfg.seed, _NS_CUES, li, vi)))
                for vi, mv in enumerate(mviews)]
            coarse_dists = [directional_distances(c.coarse) for c in cues_list]
            _run_finer(mviews, li, lnum, cfg, cues_list, coarse_dists,
                       level_stats, result)
        classify_reliability(mviews, cfg.match)
        level_stats["reliable_end"] = [
            float(mv.reliable.mean()) for mv in mviews]
        result.stats["level"].append(level_stats)
        if cfg.keep_levels:
            result.level_maps.append([
                {"depth": mv.depth.copy(), "normal": mv.normal.copy(),
                 "cost": mv.cost.copy(), "reliable": mv.reliable.copy()}
                for mv in mviews])
    result.views = mviews
    return result


def _unproject(depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    """World positions of every pixel at its stored depth, (H, W, 3)."""
    h, w = depth.shape
    ys, xs = np.mgrid[0:h, 0:w]
    rx = (xs - cam.cx) / cam.fx
    ry = (ys - cam.cy) / cam.fy
    pts_cam = np.stack([rx * depth, ry * depth, depth], axis=-1)
    return pts_cam @ cam.R + cam.C


def consistency_support(views: list[MatchView], vi: int,
                        fcfg: FusionConfig) -> tuple[np.ndarray, np.ndarray,
                                                     np.ndarray]:
    """Cross-view agreement of one view's depth map.

    For each pixel p of view vi: project its point into every other
    view, look up that view's depth at the hit pixel, lift it back to
    3D and reproject into vi. The observation is consistent when it
    lands within reproj_tol pixels of p and within depth_rel_tol
    relative depth. Returns (support count (H, W), summed consistent
    world positions (H, W, 3), summed consistent world normals).
    """
    view = views[vi]
    cam = view.cam
    h, w = view.shape
    pts = _unproject(view.depth, cam)
    ys, xs = np.mgrid[0:h, 0:w]
    count = np.zeros((h, w), dtype=np.int32)
    pos_sum = np.zeros((h, w, 3))
    nrm_sum = np.zeros((h, w, 3))
    for j, other in enumerate(views):
        if j == vi:
            continue
        oc = other.cam
        rel = (pts - oc.C) @ oc.R.T
        z = rel[..., 2]
        ok = z > 1e-9
        zs = np.where(ok, z, 1.0)
        u = oc.fx * rel[..., 0] / zs + oc.cx
        v = oc.fy * rel[..., 1] / zs + oc.cy
        qu = np.rint(u).astype(np.int64)
        qv = np.rint(v).astype(np.int64)
        ok &= (qu >= 0) & (qu < other.shape[1]) & (qv >= 0) & (qv < other.shape[0])
        qu_s = np.where(ok, qu, 0)
        qv_s = np.where(ok, qv, 0)
        # lift the other view's estimate at the hit pixel back to world
        od = other.depth[qv_s, qu_s]
        orx = (qu_s - oc.cx) / oc.fx
        ory = (qv_s - oc.cy) / oc.fy
        opts = np.stack([orx * od, ory * od, np.broadcast_to(od, orx.shape)],
                        axis=-1) @ oc.R + oc.C
        # and reproject it into this view
        brel = (opts - cam.C) @ cam.R.T
        bz = brel[..., 2]
        ok &= bz > 1e-9
        bzs = np.where(ok, bz, 1.0)
        bu = cam.fx * brel[..., 0] / bzs + cam.cx
        bv = cam.fy * brel[..., 1] / bzs + cam.cy
        ok &= np.hypot(bu - xs, bv - ys) <= fcfg.reproj_tol
        ok &= np.abs(bz - view.depth) <= fcfg.depth_rel_tol * view.depth
        count += ok
        pos_sum += np.where(ok[..., None], opts, 0.0)
        onrm = other.normal @ other.cam.R  # camera-frame rows -> world
        nrm_sum += np.where(ok[..., None], onrm[qv_s, qu_s], 0.0)
    return count, pos_sum, nrm_sum


def fuse_views(views: list[MatchView], fcfg: FusionConfig | None = None
               ) -> FusedCloud:
    """Fuse every view's depth map into one consistency-checked cloud.

    A pixel is accepted when at least min_consistent_views other views
    agree with it; its position and normal are averaged over the
    agreeing observations (plus its own).
    """
    if fcfg is None:
        fcfg = FusionConfig()
    if len(views) < 2:
        raise ValueError("fusion needs at least two views")
    all_pts, all_nrm, all_gray, all_vid, all_pix = [], [], [], [], []
    for vi, view in enumerate(views):
        count, pos_sum, nrm_sum = consistency_support(views, vi, fcfg)
        accept = count >= fcfg.min_consistent_views
        if not accept.any():
            continue
        pts = _unproject(view.depth, view.cam)
        own_nrm = view.normal @ view.cam.R
        denom = (count[accept] + 1.0)[:, None]
        mean_pts = (pts[accept] + pos_sum[accept]) / denom
        mean_nrm = own_nrm[accept] + nrm_sum[accept]
        norms = np.linalg.norm(mean_nrm, axis=1, keepdims=True)
        small = norms[:, 0] < 1e-12
        mean_nrm = np.where(small[:, None], own_nrm[accept],
                            mean_nrm / np.where(norms < 1e-12, 1.0, norms))
        ys, xs = np.nonzero(accept)
        all_pts.append(mean_pts)
        all_nrm.append(mean_nrm)
        all_gray.append(view.image[accept])
        all_vid.append(np.full(len(xs), vi, dtype=np.int32))
        all_pix.append(np.stack([xs, ys], axis=1).astype(np.int32))
    if not all_pts:
        z3 = np.zeros((0, 3))
        return FusedCloud(z3, z3.copy(), np.zeros(0),
                          np.zeros(0, dtype=np.int32),
                          np.zeros((0, 2), dtype=np.int32))
    return FusedCloud(points=np.concatenate(all_pts),
                      normals=np.concatenate(all_nrm),
                      gray=np.concatenate(all_gray),
                      view_id=np.concatenate(all_vid),
                      pixel=np.concatenate(all_pix))
