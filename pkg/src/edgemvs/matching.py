"""Per-view PatchMatch state: initialization, sweeps, reliability.

A MatchView bundles one reference view's images, cameras and the evolving
plane-hypothesis maps (depth, normal, cost). The heavy lifting happens in
the compiled kernels; this module packs geometry into the flat layout the
kernels expect, draws all randomness up front from seeded generators, and
applies the checkerboard phase bookkeeping (costs and hypotheses are read
from a phase-start snapshot while updates land in the live maps).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _native
from .geometry import CameraModel

log = logging.getLogger(__name__)

COST_MAX = 2.0
#: per-view weight of a poisoned view, exp(-2^2 / 0.72)
POISONED_WEIGHT = 3.865920148655546e-3


@dataclass
class MatchConfig:
    """Knobs of the conventional PatchMatch matcher."""

    patch_radius: int = 5
    patch_stride: int = 2
    num_sweeps: int = 3          # checkerboard sweeps per pass
    reliable_cost: float = 0.25  # aggregate cost below which a pixel may count
    geom_rel_tol: float = 0.01   # relative depth agreement for consistency
    backend: str | None = None   # None: best available; "python"/"native"


def get_kernels(backend: str | None = None):
    return _native.get_kernels(backend)


def build_geom_pack(ref: CameraModel, srcs: list[CameraModel]) -> tuple[np.ndarray, np.ndarray]:
    """Flatten camera geometry into the kernel layout.

    Returns (ref_k, src_geom): ref intrinsics (4,), and per source view a
    row of 16 values (relative rotation, relative translation, source
    intrinsics) mapping reference-camera points into the source camera.
    """
    ref_k = np.array([ref.fx, ref.fy, ref.cx, ref.cy], dtype=np.float64)
    src_geom = np.empty((len(srcs), 16), dtype=np.float64)
    for j, src in enumerate(srcs):
        r_rel = src.R @ ref.R.T
        t_rel = src.R @ (ref.C - src.C)
        src_geom[j, 0:9] = r_rel.reshape(-1)
        src_geom[j, 9:12] = t_rel
        src_geom[j, 12:16] = (src.fx, src.fy, src.cx, src.cy)
    return ref_k, src_geom


def random_init(shape: tuple[int, int], cam: CameraModel,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random plane hypotheses: inverse-uniform depths, camera-facing normals.

    Depths are uniform in inverse depth over the camera's range; normals
    are uniform on the sphere, flipped to face the camera along each
    pixel's ray.
    """
    h, w = shape
    inv = rng.uniform(1.0 / cam.d_max, 1.0 / cam.d_min, size=(h, w))
    depth = 1.0 / inv
    z = rng.uniform(-1.0, 1.0, size=(h, w))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=(h, w))
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    normal = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)
    xs = (np.arange(w) - cam.cx) / cam.fx
    ys = (np.arange(h) - cam.cy) / cam.fy
    rays = np.empty((h, w, 3))
    rays[..., 0] = xs[None, :]
    rays[..., 1] = ys[:, None]
    rays[..., 2] = 1.0
    dots = np.sum(normal * rays, axis=-1)
    normal[dots > 0] *= -1.0
    dots = np.sum(normal * rays, axis=-1)
    # the rare hypothesis parallel to its ray gets pushed onto -ray
    bad = dots > -1e-9
    if np.any(bad):
        unit = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
        normal[bad] = -unit[bad]
    return depth, normal


@dataclass
class MatchView:
    """Matching state of one reference view against its source views."""

    name: str
    image: np.ndarray            # float64 intensity (H, W)
    cam: CameraModel
    src_images: np.ndarray       # float64 (S, H, W)
    src_cams: list[CameraModel]
    depth: np.ndarray = field(init=False)
    normal: np.ndarray = field(init=False)
    cost: np.ndarray = field(init=False)
    reliable: np.ndarray = field(init=False)
    ref_k: np.ndarray = field(init=False)
    src_geom: np.ndarray = field(init=False)

    def __post_init__(self):
        h, w = self.image.shape
        self.image = np.ascontiguousarray(self.image, dtype=np.float64)
        self.src_images = np.ascontiguousarray(self.src_images, dtype=np.float64)
        self.depth = np.zeros((h, w))
        self.normal = np.zeros((h, w, 3))
        self.cost = np.full((h, w), COST_MAX)
        self.reliable = np.zeros((h, w), dtype=bool)
        self.ref_k, self.src_geom = build_geom_pack(self.cam, self.src_cams)

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape

    def initialize(self, rng: np.random.Generator, cfg: MatchConfig) -> None:
        """Draw random hypotheses and evaluate their costs."""
        kern = get_kernels(cfg.backend)
        self.depth, self.normal = random_init(self.shape, self.cam, rng)
        self.depth = np.ascontiguousarray(self.depth)
        self.normal = np.ascontiguousarray(self.normal)
        kern.evaluate_cost_map(self.image, self.src_images, self.ref_k,
                               self.src_geom, self.depth, self.normal,
                               self.cost, cfg.patch_radius, cfg.patch_stride)

    def refresh_costs(self, cfg: MatchConfig) -> None:
        """Re-evaluate stored costs (after upsampling or external edits)."""
        kern = get_kernels(cfg.backend)
        kern.evaluate_cost_map(self.image, self.src_images, self.ref_k,
                               self.src_geom, self.depth, self.normal,
                               self.cost, cfg.patch_radius, cfg.patch_stride)


def sweep_view(view: MatchView, cfg: MatchConfig, rand: np.ndarray,
               update_mask: np.ndarray | None = None,
               es_enabled: bool = True, have_cues: bool = False,
               xi: int = 1,
               fine_mask: np.ndarray | None = None,
               fine_dist: np.ndarray | None = None,
               lam_width: float = 0.0) -> int:
    """Run one full sweep (both checkerboard phases) of conventional updates.

    rand is a (H, W, 8) uniform array; each phase reads hypotheses and
    costs from a snapshot taken at phase start, so results match a fully
    parallel checkerboard schedule. Returns the number of updated pixels.
    """
    kern = get_kernels(cfg.backend)
    h, w = view.shape
    if update_mask is None:
        update_mask = np.ones((h, w), dtype=np.uint8)
    else:
        update_mask = np.ascontiguousarray(update_mask, dtype=np.uint8)
    if fine_mask is None:
        fine_mask = np.zeros((h, w), dtype=np.uint8)
    else:
        fine_mask = np.ascontiguousarray(fine_mask, dtype=np.uint8)
    if fine_dist is None:
        fine_dist = np.zeros((8, h, w), dtype=np.int32)
    else:
        fine_dist = np.ascontiguousarray(fine_dist, dtype=np.int32)
    rand = np.ascontiguousarray(rand, dtype=np.float64)
    updated = 0
    for color in (0, 1):
        depth_snap = view.depth.copy()
        normal_snap = view.normal.copy()
        cost_snap = view.cost.copy()
        updated += kern.sweep_conventional(
            color, view.image, view.src_images, view.ref_k, view.src_geom,
            view.depth, view.normal, view.cost,
            depth_snap, normal_snap, cost_snap,
            update_mask,
            1 if es_enabled else 0, 1 if have_cues else 0, int(xi),
            fine_mask, fine_dist, float(lam_width),
            rand, cfg.patch_radius, cfg.patch_stride,
            11, 2, 11, 22,
            view.cam.d_min, view.cam.d_max)
    return updated


def propagation_offset(sweep_index: int, es_enabled: bool) -> int:
    """Strip start offset: starts far (5) and closes in as sweeps progress."""
    if not es_enabled:
        return 1
    return max(1, 5 - 2 * sweep_index)


def reproject_depth(view: MatchView, other: MatchView,
                    other_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Depth consistency of view's map against one source view's map.

    Returns (consistent, valid): consistent pixels agree with the source
    view's own depth estimate within the relative tolerance; valid pixels
    project inside the source image with positive depth.
    """
    h, w = view.shape
    cam, oc = view.cam, other.cam
    ys, xs = np.mgrid[0:h, 0:w]
    rx = (xs - cam.cx) / cam.fx
    ry = (ys - cam.cy) / cam.fy
    d = view.depth
    pts_cam = np.stack([rx * d, ry * d, d], axis=-1)
    pts_world = pts_cam @ cam.R + cam.C
    pts_src = (pts_world - oc.C) @ oc.R.T
    z = pts_src[..., 2]
    valid = z > 1e-9
    zsafe = np.where(valid, z, 1.0)
    u = oc.fx * pts_src[..., 0] / zsafe + oc.cx
    v = oc.fy * pts_src[..., 1] / zsafe + oc.cy
    oh, ow = other.shape
    ui = np.round(u).astype(np.int64)
    vi = np.round(v).astype(np.int64)
    inside = valid & (ui >= 0) & (ui < ow) & (vi >= 0) & (vi < oh)
    uc = np.clip(ui, 0, ow - 1)
    vc = np.clip(vi, 0, oh - 1)
    d_src = other.depth[vc, uc]
    rel = np.abs(d_src - z) / np.maximum(z, 1e-12)
    consistent = inside & (rel < 0.01)
    return consistent, inside


def classify_reliability(views: list[MatchView], cfg: MatchConfig) -> None:
    """Mark pixels reliable: low aggregate cost plus geometric support.

    A pixel must have cost below the threshold and reproject onto at
    least one source view whose own depth estimate agrees within 1%.
    All views must be at the same resolution; classification is joint,
    so every view's map is final for the current pass before any flag
    is computed.
    """
    by_name = {v.name: v for v in views}
    for view in views:
        support = np.zeros(view.shape, dtype=bool)
        for j, sc in enumerate(view.src_cams):
            other = _find_view(by_name, views, sc)
            if other is None:
                continue
            consistent, _ = reproject_depth(view, other, j)
            support |= consistent
        view.reliable = (view.cost < cfg.reliable_cost) & support


def _find_view(by_name: dict, views: list[MatchView], cam: CameraModel):
    for v in views:
        if v.cam is cam or (np.array_equal(v.cam.R, cam.R)
                            and np.array_equal(v.cam.C, cam.C)):
            return v
    return None
