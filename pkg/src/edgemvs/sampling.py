"""Candidate sampling rules for checkerboard propagation.

Reference implementations of the strip-sampling logic that the compiled
sweeps inline: progressive non-local strips (fixed count and step) and
edge-guided strips whose reach adapts to the distance of the nearest
fine edge. The sweeps must agree with these functions exactly; tests
compare both paths on small states.

All strip scans read stored per-pixel costs from an immutable snapshot,
so a full checkerboard phase behaves as if every pixel of the active
color updated simultaneously.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .edges import DIRECTIONS

N_DIRECTIONS = 8


@dataclass
class SamplingConfig:
    """Strip sampling parameters; defaults follow the fixed scheme."""

    base_count: int = 11
    base_step: int = 2
    k_min: int = 11
    k_max: int = 22
    level: int = 1           # pyramid level, finest = 1
    image_width: int = 0     # width of the current level

    def __post_init__(self):
        if self.k_min > self.k_max:
            raise ValueError("k_min must not exceed k_max")
        if self.base_count < 1:
            raise ValueError("base_count must be >= 1")


def exclusion_radius(t_iter: int) -> int:
    """Strip start offset; begins at 5 and shrinks to 1 over iterations."""
    if t_iter < 0:
        raise ValueError("iteration index must be >= 0")
    return max(1, 5 - 2 * t_iter)


def span_limit(image_width: int, level: int) -> float:
    """Upper bound on the edge-guided sampling span at a pyramid level."""
    return image_width / (30.0 * 4.0 ** level)


def extended_params(d_fe: float, cfg: SamplingConfig) -> tuple[int, int]:
    """Edge-guided sample count and step from the fine-edge distance.

    The span is the fine-edge distance capped by the level's limit; the
    count is span/2 clamped to [k_min, k_max] and the step spreads the
    samples over the span, never below 1.
    """
    if d_fe < 0:
        raise ValueError("edge distance must be >= 0")
    d_prime = min(float(d_fe), span_limit(cfg.image_width, cfg.level))
    k = int(d_prime // 2)
    k = min(cfg.k_max, max(cfg.k_min, k))
    s = max(1, int(d_prime // k))
    return k, s


def strip_positions(p: tuple[int, int], direction: int, xi: int,
                    count: int, step: int,
                    shape: tuple[int, int]) -> list[tuple[int, int]]:
    """Sample positions along one strip, truncated at the image border."""
    h, w = shape
    dx, dy = DIRECTIONS[direction]
    out = []
    for i in range(count):
        off = xi + i * step
        x = p[0] + dx * off
        y = p[1] + dy * off
        if not (0 <= x < w and 0 <= y < h):
            break
        out.append((x, y))
    return out


def _best_source(positions: list[tuple[int, int]],
                 cost_snap: np.ndarray) -> tuple[int, int] | None:
    """Position with the lowest stored cost; earlier (nearer) wins ties."""
    best = None
    best_c = np.inf
    for (x, y) in positions:
        c = cost_snap[y, x]
        if c < best_c:
            best_c = c
            best = (x, y)
    return best


def progressive_nonlocal(p: tuple[int, int], cost_snap: np.ndarray,
                         xi: int, cfg: SamplingConfig) -> list[tuple[int, int] | None]:
    """Best source pixel per direction from the fixed-size strips."""
    out = []
    for d in range(N_DIRECTIONS):
        pos = strip_positions(p, d, xi, cfg.base_count, cfg.base_step,
                              cost_snap.shape)
        out.append(_best_source(pos, cost_snap))
    return out


def edge_guided(p: tuple[int, int], cost_snap: np.ndarray,
                fine_dist: np.ndarray, xi: int,
                cfg: SamplingConfig) -> list[tuple[int, int] | None]:
    """Best source per direction from strips sized by the fine-edge distance.

    fine_dist is the (8, H, W) directional distance field of the fine
    edge mask; callers must not invoke this for fine-edge pixels.
    """
    x, y = p
    out = []
    for d in range(N_DIRECTIONS):
        k, s = extended_params(float(fine_dist[d, y, x]), cfg)
        pos = strip_positions(p, d, xi, k, s, cost_snap.shape)
        out.append(_best_source(pos, cost_snap))
    return out


def merge_samples(pn: list[tuple[int, int] | None],
                  eg: list[tuple[int, int] | None],
                  evaluate) -> list[tuple[tuple[int, int], float] | None]:
    """Per direction, keep whichever source scores cheaper re-evaluated at p.

    evaluate(source_pixel) must return the candidate's multi-view cost at
    the pixel being processed. The progressive candidate wins ties, and a
    direction with no sources yields None.
    """
    out = []
    for a, b in zip(pn, eg):
        if a is None and b is None:
            out.append(None)
            continue
        if b is None or b == a:
            ca = evaluate(a)
            out.append((a, ca))
            continue
        if a is None:
            cb = evaluate(b)
            out.append((b, cb))
            continue
        ca = evaluate(a)
        cb = evaluate(b)
        out.append((a, ca) if ca <= cb else (b, cb))
    return out
