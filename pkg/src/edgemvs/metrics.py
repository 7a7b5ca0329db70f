"""Point-cloud quality metrics and the toggle-ablation driver.

Accuracy and completeness follow the fraction-within-threshold
convention: accuracy is the fraction of reconstructed points within
distance t of the ground truth, completeness the fraction of ground
truth within t of the reconstruction, and f1 their harmonic mean.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .pipeline import PipelineConfig, run_pipeline, fuse_views
from .scenes import SceneSpec, get_scene, gt_point_cloud, render_scene

__all__ = [
    "EvalReport", "f1_score", "evaluate", "depth_range",
    "facet_edge_mask", "edge_band", "local_depth_gap",
    "band_error_fraction", "TOGGLE_NAMES", "TOGGLE_SHORT", "AblationRow",
    "default_toggle_sets", "ablation_run", "ablation_table", "ablation_csv",
]


def f1_score(accuracy: float, completeness: float) -> float:
    s = accuracy + completeness
    if s <= 0.0:
        return 0.0
    return 2.0 * accuracy * completeness / s


@dataclass
class EvalReport:
    """Symmetric cloud-to-cloud scores, one row per threshold.

    The top-level accuracy/completeness/f1 are the first threshold's.
    """

    thresholds: tuple[float, ...]
    accuracy: float
    completeness: float
    f1: float
    table: list[dict]

    def row(self, threshold: float) -> dict:
        for entry in self.table:
            if entry["threshold"] == threshold:
                return entry
        raise KeyError(f"no row for threshold {threshold}")


def evaluate(cloud: np.ndarray, gt_cloud: np.ndarray,
             thresholds) -> EvalReport:
    """Exact nearest-neighbor fractions at each distance threshold."""
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("need at least one threshold")
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    gt_cloud = np.asarray(gt_cloud, dtype=np.float64).reshape(-1, 3)
    if len(cloud) and len(gt_cloud):
        d_rec = cKDTree(gt_cloud).query(cloud, k=1)[0]
        d_gt = cKDTree(cloud).query(gt_cloud, k=1)[0]
    else:
        d_rec = np.full(len(cloud), np.inf)
        d_gt = np.full(len(gt_cloud), np.inf)
    table = []
    for t in thresholds:
        acc = float((d_rec <= t).mean()) if len(d_rec) else 0.0
        comp = float((d_gt <= t).mean()) if len(d_gt) else 0.0
        table.append({"threshold": t, "accuracy": acc, "completeness": comp,
                      "f1": f1_score(acc, comp)})
    first = table[0]
    return EvalReport(thresholds=thresholds, accuracy=first["accuracy"],
                      completeness=first["completeness"], f1=first["f1"],
                      table=table)


def depth_range(depths: list[np.ndarray]) -> float:
    """Scene depth span: max minus min over all valid (> 0) pixels."""
    lo, hi = np.inf, -np.inf
    for d in depths:
        good = d > 0
        if good.any():
            lo = min(lo, float(d[good].min()))
            hi = max(hi, float(d[good].max()))
    if not np.isfinite(lo):
        raise ValueError("no valid depths")
    return hi - lo


def facet_edge_mask(facet_id: np.ndarray) -> np.ndarray:
    """Pixels bordering a different facet (both sides of the contact)."""
    fid = np.asarray(facet_id)
    edge = np.zeros(fid.shape, dtype=bool)
    edge[:-1, :] |= fid[:-1, :] != fid[1:, :]
    edge[1:, :] |= fid[1:, :] != fid[:-1, :]
    edge[:, :-1] |= fid[:, :-1] != fid[:, 1:]
    edge[:, 1:] |= fid[:, 1:] != fid[:, :-1]
    return edge


def edge_band(mask: np.ndarray, band_px: float) -> np.ndarray:
    """All pixels within band_px (Euclidean) of a marked pixel."""
    if not mask.any():
        return np.zeros_like(mask, dtype=bool)
    return ndimage.distance_transform_edt(~mask) <= band_px


def local_depth_gap(gt_depth: np.ndarray, radius: int = 3) -> np.ndarray:
    """Depth span inside a (2r+1)-square window around each pixel.

    Near a depth discontinuity this approximates the inter-plane gap."""
    size = 2 * radius + 1
    return (ndimage.maximum_filter(gt_depth, size=size)
            - ndimage.minimum_filter(gt_depth, size=size))


def band_error_fraction(est_depth: np.ndarray, gt_depth: np.ndarray,
                        band: np.ndarray, gap: np.ndarray,
                        frac: float = 0.1) -> float:
    """Fraction of band pixels whose depth error exceeds frac * gap."""
    sel = band & (gt_depth > 0)
    if not sel.any():
        return 0.0
    err = np.abs(est_depth - gt_depth)[sel]
    return float((err > frac * gap[sel]).mean())


# ---------------------------------------------------------------------------
# ablation driver

TOGGLE_NAMES = ("edge_sampling", "range_expansion", "plane_opt",
                "adaptive_patch")
TOGGLE_SHORT = {"edge_sampling": "ES", "range_expansion": "PE",
                "plane_opt": "PO", "adaptive_patch": "AA"}


@dataclass
class AblationRow:
    toggles: dict
    report: EvalReport
    seconds: float

    @property
    def label(self) -> str:
        on = [TOGGLE_SHORT[k] for k in TOGGLE_NAMES if self.toggles[k]]
        return "+".join(on) if on else "none"


def default_toggle_sets() -> list[dict]:
    """All-off, each component alone, all-on."""
    sets = [{k: False for k in TOGGLE_NAMES}]
    for name in TOGGLE_NAMES:
        s = {k: False for k in TOGGLE_NAMES}
        s[name] = True
        sets.append(s)
    sets.append({k: True for k in TOGGLE_NAMES})
    return sets


def ablation_run(scene: str | SceneSpec, toggle_sets: list[dict] | None = None,
                 seed: int = 0, cfg: PipelineConfig | None = None,
                 thresholds=None) -> list[AblationRow]:
    """Full pipeline once per toggle set, scored against ground truth.

    The scene renders once and every run shares the same seed, so rows
    differ only through the toggles. Default thresholds are 1% and 2%
    of the scene's depth range.
    """
    spec = get_scene(scene) if isinstance(scene, str) else scene
    views = render_scene(spec)
    gt = gt_point_cloud(spec, views)
    if thresholds is None:
        span = depth_range([v.depth for v in views])
        thresholds = (0.01 * span, 0.02 * span)
    if toggle_sets is None:
        toggle_sets = default_toggle_sets()
    if cfg is None:
        cfg = PipelineConfig()
    images = [v.image for v in views]
    rows = []
    for toggles in toggle_sets:
        run_cfg = replace(cfg, seed=seed, **toggles)
        t0 = time.perf_counter()
        result = run_pipeline(images, spec.cameras, run_cfg)
        cloud = fuse_views(result.views, run_cfg.fusion)
        dt = time.perf_counter() - t0
        rows.append(AblationRow(toggles=dict(toggles),
                                report=evaluate(cloud.points, gt, thresholds),
                                seconds=dt))
    return rows


def ablation_table(rows: list[AblationRow]) -> str:
    """Human-readable comparison at the first threshold."""
    lines = [f"{'toggles':<14} {'acc':>7} {'comp':>7} {'f1':>7} {'sec':>7}"]
    for row in rows:
        r = row.report
        lines.append(f"{row.label:<14} {r.accuracy:7.4f} "
                     f"{r.completeness:7.4f} {r.f1:7.4f} {row.seconds:7.1f}")
    return "\n".join(lines)


def ablation_csv(rows: list[AblationRow], path) -> None:
    """One row per (toggle set, threshold)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(TOGGLE_NAMES)
                        + ["threshold", "accuracy", "completeness", "f1",
                           "seconds"])
        for row in rows:
            for entry in row.report.table:
                writer.writerow(
                    [int(row.toggles[k]) for k in TOGGLE_NAMES]
                    + [f"{entry['threshold']:.6g}", f"{entry['accuracy']:.6f}",
                       f"{entry['completeness']:.6f}", f"{entry['f1']:.6f}",
                       f"{row.seconds:.2f}"])
