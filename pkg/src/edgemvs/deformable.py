"""Deformable patch matching for unreliable pixels with anchors.

Pixels that failed conventional matching but gained a plane fit and
anchor set borrow appearance evidence from their anchors: the matching
cost mixes a (possibly enlarged) patch at the pixel with fixed patches
at the anchor positions, all warped under the same plane hypothesis.
The center patch radius adapts to local structure — large in blank
regions, zero in stochastic texture where only anchors are trustworthy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._native import get_kernels
from .edges import EdgeCues, directional_distances
from .matching import MatchView
from .planar import AnchorField


@dataclass
class DeformableConfig:
    """Parameters of the deformable cost and its adaptive center patch."""

    lam: float = 0.5          # center-patch weight (anchors share the rest)
    anchor_radius: int = 5    # fixed patch radius at anchor positions
    anchor_stride: int = 2
    omega: float = 2.5        # anchor-distance scale in the radius rule
    fixed_radius: int = 5     # smallest useful center radius
    num_sweeps: int = 3
    backend: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if self.fixed_radius < 1:
            raise ValueError("fixed_radius must be >= 1")


def radius_rule(area: float, anchor_dists: list[float],
                fine_dists: list[int] | None,
                coarse_dists: list[int] | None,
                stochastic: bool, low_texture: bool,
                cfg: DeformableConfig) -> int:
    """Center patch radius from the raw structural quantities.

    Starts from half the side length of a square matching the defining
    triangle's area, shrinks to stay inside the anchor neighbourhood and
    away from edges, then snaps: radii below the fixed minimum use the
    fixed radius, while stochastic pixels drop the center patch entirely.
    """
    best = np.sqrt(area) / 2.0
    for dist in anchor_dists:
        best = min(best, cfg.omega * dist)
    if not stochastic:
        if fine_dists:
            best = min(best, min(fine_dists))
        if low_texture and coarse_dists:
            best = min(best, min(coarse_dists))
    gamma = int(np.floor(best))
    if cfg.fixed_radius > gamma:
        return cfg.fixed_radius
    if stochastic:
        return 0
    return gamma


def adaptive_patch_radius(p: tuple[int, int],
                          triple: list[tuple[int, int]],
                          fine_dists: list[int] | None,
                          coarse_dists: list[int] | None,
                          stochastic: bool, low_texture: bool,
                          cfg: DeformableConfig) -> int:
    """Center patch radius at one pixel (scalar reference over geometry)."""
    (x1, y1), (x2, y2), (x3, y3) = triple
    area = 0.5 * abs(x1 * (y2 - y3) + x2 * (y3 - y1) + x3 * (y1 - y2))
    dists = [float(np.hypot(ax - p[0], ay - p[1])) for ax, ay in triple]
    return radius_rule(area, dists, fine_dists, coarse_dists,
                       stochastic, low_texture, cfg)


def gamma_map(field: AnchorField, cues: EdgeCues, cfg: DeformableConfig,
              coarse_dist: np.ndarray | None = None) -> np.ndarray:
    """adaptive_patch_radius for every fitted pixel as (H, W) int32.

    Unfitted pixels get 0 (they never run the deformable stage anyway).
    Pass a cached coarse-edge distance field to skip recomputing it.
    """
    h, w = field.ok.shape
    gam = np.zeros((h, w), dtype=np.int32)
    ys, xs = np.nonzero(field.ok)
    if len(ys) == 0:
        return gam
    if coarse_dist is None:
        coarse_dist = directional_distances(cues.coarse)
    t = field.triple[ys, xs].astype(np.float64)
    x1, y1, x2, y2, x3, y3 = (t[:, i] for i in range(6))
    area = 0.5 * np.abs(x1 * (y2 - y3) + x2 * (y3 - y1) + x3 * (y1 - y2))
    best = np.sqrt(area) / 2.0
    for ax, ay in ((x1, y1), (x2, y2), (x3, y3)):
        best = np.minimum(best, cfg.omega * np.hypot(ax - xs, ay - ys))
    stoch = cues.stochastic[ys, xs]
    low = cues.low_texture_mask[ys, xs]
    fine_min = cues.fine_dist[:, ys, xs].min(axis=0)
    coarse_min = coarse_dist[:, ys, xs].min(axis=0)
    best = np.where(~stoch, np.minimum(best, fine_min), best)
    best = np.where(~stoch & low, np.minimum(best, coarse_min), best)
    g = np.floor(best).astype(np.int32)
    g = np.where(g < cfg.fixed_radius, cfg.fixed_radius,
                 np.where(stoch, 0, g))
    gam[ys, xs] = g
    return gam


def deform_cost(view: MatchView, p: tuple[int, int],
                normal: np.ndarray, depth: float,
                field: AnchorField, gamma: int,
                cfg: DeformableConfig) -> float:
    """Deformable cost of one hypothesis at one pixel (for tests/tools)."""
    kern = get_kernels(cfg.backend)
    counts = np.ascontiguousarray(field.counts, dtype=np.uint8)
    anchors = np.ascontiguousarray(field.anchors, dtype=np.int32)
    return kern.eval_deform_cost_at(
        view.image, view.src_images, view.ref_k, view.src_geom,
        p[0], p[1], float(normal[0]), float(normal[1]), float(normal[2]),
        float(depth), anchors, counts, int(gamma), cfg.lam,
        cfg.anchor_radius, cfg.anchor_stride)


def sweep_deformable_view(view: MatchView, field: AnchorField,
                          gam: np.ndarray, dcost: np.ndarray,
                          active_mask: np.ndarray, cfg: DeformableConfig,
                          rand: np.ndarray) -> int:
    """One full sweep (both checkerboard phases) of deformable updates.

    dcost is the persistent per-pixel deformable cost buffer; reset it to
    NaN whenever hypotheses or anchors change outside this function.
    Returns the number of updated pixels.
    """
    kern = get_kernels(cfg.backend)
    h, w = view.shape
    anchors = np.ascontiguousarray(field.anchors, dtype=np.int32)
    counts = np.ascontiguousarray(field.counts, dtype=np.uint8)
    plane = np.ascontiguousarray(field.plane_cam)
    plane_valid = np.ascontiguousarray(field.ok, dtype=np.uint8)
    active = np.ascontiguousarray(active_mask, dtype=np.uint8)
    gam = np.ascontiguousarray(gam, dtype=np.int32)
    rand = np.ascontiguousarray(rand, dtype=np.float64)
    updated = 0
    for color in (0, 1):
        updated += kern.sweep_deformable(
            color, view.image, view.src_images, view.ref_k, view.src_geom,
            view.depth, view.normal, dcost, active, anchors, counts,
            plane, plane_valid, gam, cfg.lam,
            cfg.anchor_radius, cfg.anchor_stride, rand,
            view.cam.d_min, view.cam.d_max)
    return updated
