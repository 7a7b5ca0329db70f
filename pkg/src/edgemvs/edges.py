"""Edge cues: fine/coarse edges, regions, texture classification.

Two complementary edge maps steer the matcher. Fine edges (auto-threshold
Canny) are precise but may be unclosed; they fence plane fitting and
bound non-local sampling. Coarse edges (Roberts magnitude filtered
through a Hough line detector) are blunt but closed; they cut the image
into regions whose size decides where plane priors take over.

On top of the masks, a local edge-density field feeds a sigmoid that
scores each pixel's chance of lying in stochastic texture (dense edges
that carry no usable matching signal, like grass); the per-pixel verdict
is a single cached draw against that probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

#: direction order used everywhere: N, NE, E, SE, S, SW, W, NW
DIRECTIONS = ((0, -1), (1, -1), (1, 0), (1, 1),
              (0, 1), (-1, 1), (-1, 0), (-1, -1))


@dataclass
class TextureConfig:
    """Edge extraction and texture classification knobs."""

    sigma: float = 0.67        # Canny threshold spread around the median
    alpha: float = 0.5         # fine vs coarse mix in the density field
    beta1: float = 25.0        # sigmoid steepness
    beta2: float = 0.35        # sigmoid midpoint density
    window: int = 11           # density window side (the fixed patch side)
    blur_sigma: float = 1.4
    blur_kernel: int = 5
    roberts_frac: float = 0.15     # threshold as fraction of max magnitude
    hough_votes_min: int = 30      # vote floor; actual = max(this, side/8)
    hough_gap: int = 5

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("sigma must be in (0, 1)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.beta1 <= 0.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError("invalid sigmoid parameters")
        if self.window % 2 != 1:
            raise ValueError("window side must be odd")


@dataclass
class EdgeCues:
    """Immutable per-level edge information."""

    fine: np.ndarray             # bool (H, W)
    coarse: np.ndarray           # bool (H, W)
    regions: np.ndarray          # int32 (H, W); 0 on coarse edges, else >= 1
    low_texture: np.ndarray      # bool (R+1,) indexed by region label
    stochastic_prob: np.ndarray  # float64 (H, W) in [0, 1]
    stochastic: np.ndarray       # bool (H, W), cached draw < prob
    fine_dist: np.ndarray        # int32 (8, H, W) distance to fine edge

    @property
    def low_texture_mask(self) -> np.ndarray:
        return self.low_texture[self.regions]


def extract_fine_edges(image: np.ndarray, sigma: float = 0.67,
                       cfg: TextureConfig | None = None) -> np.ndarray:
    """Canny edges with hysteresis thresholds spread around the median."""
    cfg = cfg or TextureConfig(sigma=sigma)
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    blurred = cv2.GaussianBlur(img, (cfg.blur_kernel, cfg.blur_kernel),
                               cfg.blur_sigma)
    med = float(np.median(blurred))
    lo = max(0.0, (1.0 - sigma) * med)
    hi = min(255.0, (1.0 + sigma) * med)
    return cv2.Canny(blurred, lo, hi).astype(bool)


def extract_coarse_edges(image: np.ndarray,
                         cfg: TextureConfig | None = None) -> np.ndarray:
    """Roberts-gradient candidates filtered and closed by Hough lines.

    Only pixels supported by detected line segments survive; segments are
    drawn back into the mask so they form closed region boundaries.
    """
    cfg = cfg or TextureConfig()
    img = np.asarray(image, dtype=np.float64)
    if img.dtype == np.uint8:
        img = img.astype(np.float64)
    gx = img[:-1, :-1] - img[1:, 1:]
    gy = img[:-1, 1:] - img[1:, :-1]
    mag = np.zeros_like(img)
    mag[:-1, :-1] = np.hypot(gx, gy)
    peak = mag.max()
    out = np.zeros(img.shape, dtype=np.uint8)
    if peak <= 0.0:
        return out.astype(bool)
    cand = (mag > cfg.roberts_frac * peak).astype(np.uint8) * 255
    votes = max(cfg.hough_votes_min, min(img.shape) // 8)
    lines = cv2.HoughLinesP(cand, 1, np.pi / 180.0, votes,
                            minLineLength=votes, maxLineGap=cfg.hough_gap)
    if lines is not None:
        for x0, y0, x1, y1 in lines.reshape(-1, 4):
            cv2.line(out, (int(x0), int(y0)), (int(x1), int(y1)), 1,
                     thickness=1, lineType=cv2.LINE_8)
    return out.astype(bool)


def segment_regions(coarse: np.ndarray, level: int,
                    image_area: int) -> tuple[np.ndarray, np.ndarray]:
    """Label 4-connected non-edge regions and flag the low-textured ones.

    Edge pixels get label 0; regions are 1..R. A region is low-textured
    when its pixel count exceeds image_area / (256 * 4**level) with the
    finest level numbered 1.
    """
    nonedge = (~np.asarray(coarse, dtype=bool)).astype(np.uint8)
    n_labels, labels = cv2.connectedComponents(nonedge, connectivity=4)
    labels = labels.astype(np.int32)
    threshold = image_area / (256.0 * 4.0 ** level)
    counts = np.bincount(labels.ravel(), minlength=n_labels)
    flags = counts > threshold
    flags[0] = False
    return labels, flags


def low_texture_threshold(level: int, image_area: int) -> float:
    """Region pixel count above which a region counts as low-textured."""
    return image_area / (256.0 * 4.0 ** level)


def edge_distance(p: tuple[int, int], direction: int,
                  mask: np.ndarray) -> int:
    """Steps from p along one of 8 rays to the first set pixel.

    Runs of clear pixels ending at the image border return the distance
    to the border pixel itself (the border acts as an edge).
    """
    h, w = mask.shape
    dx, dy = DIRECTIONS[direction]
    x, y = p
    t = 0
    while True:
        nx_, ny_ = x + dx, y + dy
        if nx_ < 0 or nx_ >= w or ny_ < 0 or ny_ >= h:
            return t
        t += 1
        if mask[ny_, nx_]:
            return t
        x, y = nx_, ny_


def directional_distances(mask: np.ndarray) -> np.ndarray:
    """edge_distance for all pixels and all 8 directions, as (8, H, W).

    Dynamic programming in each direction's scan order; matches the
    scalar edge_distance exactly.
    """
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    out = np.empty((8, h, w), dtype=np.int32)
    xs = np.arange(w)
    for d, (dx, dy) in enumerate(DIRECTIONS):
        dist = np.zeros((h, w), dtype=np.int32)
        if dy == 0:
            # horizontal runs: index of the next set pixel via suffix scan
            big = np.int64(w + h + 2)
            for y in range(h):
                if dx > 0:
                    pos = np.where(m[y], xs, big)
                    nxt = np.empty(w, dtype=np.int64)
                    nxt[:-1] = np.minimum.accumulate(pos[::-1])[::-1][1:]
                    nxt[-1] = big
                    dist[y] = np.where(nxt < big, nxt - xs, w - 1 - xs)
                else:
                    pos = np.where(m[y], xs, -big)
                    prv = np.empty(w, dtype=np.int64)
                    prv[1:] = np.maximum.accumulate(pos)[:-1]
                    prv[0] = -big
                    dist[y] = np.where(prv > -big, xs - prv, xs)
        else:
            ys = range(h - 1, -1, -1) if dy > 0 else range(h)
            shifted_m = np.empty(w, dtype=bool)
            shifted_d = np.empty(w, dtype=np.int32)
            for y in ys:
                py = y + dy
                if not 0 <= py < h:
                    dist[y, :] = 0
                    continue
                if dx == 0:
                    dist[y, :] = np.where(m[py, :], 1, dist[py, :] + 1)
                elif dx > 0:
                    shifted_m[:-1] = m[py, 1:]
                    shifted_d[:-1] = dist[py, 1:]
                    shifted_m[-1] = False
                    shifted_d[-1] = -1  # border neighbour: 1 + (-1) = 0
                    dist[y, :] = np.where(shifted_m, 1, shifted_d + 1)
                else:
                    shifted_m[1:] = m[py, :-1]
                    shifted_d[1:] = dist[py, :-1]
                    shifted_m[0] = False
                    shifted_d[0] = -1
                    dist[y, :] = np.where(shifted_m, 1, shifted_d + 1)
        out[d] = dist
    return out


def stochastic_probability(fine: np.ndarray, coarse: np.ndarray,
                           cfg: TextureConfig) -> np.ndarray:
    """Sigmoid of the mixed local edge density, per pixel.

    Window counts use the window clipped to the image, and the density
    denominator is the clipped area, so border pixels are not biased low.
    """
    k = (cfg.window, cfg.window)
    fine_f = np.asarray(fine, dtype=np.float64)
    coarse_f = np.asarray(coarse, dtype=np.float64)
    ones = np.ones_like(fine_f)
    n_fe = cv2.boxFilter(fine_f, -1, k, normalize=False,
                         borderType=cv2.BORDER_CONSTANT)
    n_ce = cv2.boxFilter(coarse_f, -1, k, normalize=False,
                         borderType=cv2.BORDER_CONSTANT)
    area = cv2.boxFilter(ones, -1, k, normalize=False,
                         borderType=cv2.BORDER_CONSTANT)
    phi = (cfg.alpha * n_fe + (1.0 - cfg.alpha) * n_ce) / area
    return 1.0 / (1.0 + np.exp(-cfg.beta1 * (phi - cfg.beta2)))


def is_stochastic(prob: float, rng_draw: float) -> bool:
    """One pixel's stochastic-texture verdict from its cached draw."""
    return rng_draw < prob


def build_cues(image: np.ndarray, level: int, cfg: TextureConfig,
               rng: np.random.Generator) -> EdgeCues:
    """Extract every per-level cue in one pass; the result is immutable.

    The stochastic draw happens here, once per pixel per level, so every
    later consumer sees the same verdict.
    """
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    fine = extract_fine_edges(img, cfg.sigma, cfg)
    coarse = extract_coarse_edges(img, cfg)
    regions, low_texture = segment_regions(coarse, level, img.size)
    prob = stochastic_probability(fine, coarse, cfg)
    draws = rng.random(img.shape)
    stochastic = draws < prob
    fine_dist = directional_distances(fine)
    return EdgeCues(fine=fine, coarse=coarse, regions=regions,
                    low_texture=low_texture, stochastic_prob=prob,
                    stochastic=stochastic, fine_dist=fine_dist)
