"""Command-line frontend: edges, depth, fuse, synth, eval, ablate.

Every subcommand is a thin shell around the library; all heavy state
stays in PFM/PGM/PLY files plus the camera text format, so stages can
be run and inspected independently.
"""

from __future__ import annotations

import argparse
import ast
import sys
from dataclasses import fields as dc_fields, is_dataclass, replace
from pathlib import Path

import cv2
import numpy as np

from . import fileio, metrics, pipeline, scenes
from .edges import build_cues
from .matching import classify_reliability

# ---------------------------------------------------------------------------
# shared helpers


def _load_gray(path: Path) -> np.ndarray:
    """Load any supported image as float64 intensity in [0, 1]."""
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        return np.asarray(fileio.read_pfm(path), dtype=np.float64)
    if suffix == ".pgm":
        data = fileio.read_pgm(path)
        scale = 65535.0 if data.dtype == np.uint16 else 255.0
        return data.astype(np.float64) / scale
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise FileNotFoundError(f"cannot read image {path}")
    return img.astype(np.float64) / 255.0


def _set_by_path(cfg, dotted: str, value):
    """replace() a possibly nested dataclass field named a.b.c."""
    head, _, rest = dotted.partition(".")
    names = {f.name for f in dc_fields(cfg)}
    if head not in names:
        raise KeyError(f"unknown config field {head!r}")
    if rest:
        return replace(cfg, **{head: _set_by_path(getattr(cfg, head),
                                                  rest, value)})
    current = getattr(cfg, head)
    if is_dataclass(current):
        raise KeyError(f"{dotted!r} names a config section, not a value")
    return replace(cfg, **{head: value})


def _parse_value(text: str):
    lowered = text.strip().lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


def load_config(path, base: pipeline.PipelineConfig | None = None
                ) -> pipeline.PipelineConfig:
    """Apply a key = value overrides file to a PipelineConfig.

    Keys use dotted paths into the nested config, e.g.::

        pyramid.full_iterations = 1
        match.patch_radius = 5
        edge_sampling = false
    """
    cfg = base if base is not None else pipeline.PipelineConfig()
    for ln, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{ln}: expected key = value")
        try:
            cfg = _set_by_path(cfg, key.strip(), _parse_value(value))
        except KeyError as exc:
            raise ValueError(f"{path}:{ln}: {exc}") from None
    return cfg


def _pipeline_config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "backend", None):
        cfg = replace(cfg, backend=args.backend)
    for flag, name in (("no_es", "edge_sampling"), ("no_pe", "range_expansion"),
                       ("no_po", "plane_opt"), ("no_aa", "adaptive_patch")):
        if getattr(args, flag, False):
            cfg = replace(cfg, **{name: False})
    return cfg


def _load_views(camfile: Path) -> tuple[list[np.ndarray], list, list[str]]:
    cams, names = fileio.read_cameras(camfile)
    images = [_load_gray(camfile.parent / n) for n in names]
    return images, cams, names


# ---------------------------------------------------------------------------
# subcommands


def cmd_edges(args) -> int:
    path = Path(args.image)
    image = _load_gray(path) * 255.0
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 2, 0, 0)))
    cues = build_cues(image, args.level, pipeline.PipelineConfig().texture,
                      rng)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(prefix) + ".fine.png",
                np.where(cues.fine, 255, 0).astype(np.uint8))
    cv2.imwrite(str(prefix) + ".coarse.png",
                np.where(cues.coarse, 255, 0).astype(np.uint8))
    fileio.write_pgm(str(prefix) + ".regions.pgm",
                     cues.regions.astype(np.uint16))
    fileio.write_pfm(str(prefix) + ".prob.pfm", cues.stochastic_prob)
    print(f"fine {int(cues.fine.sum())} px, coarse {int(cues.coarse.sum())} "
          f"px, {int(cues.regions.max())} regions")
    return 0


def _write_view_maps(outdir: Path, depth, normal, cost, reliable) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    fileio.write_pfm(outdir / "depth.pfm", depth)
    fileio.write_pfm(outdir / "normal.pfm", normal)
    fileio.write_pfm(outdir / "cost.pfm", cost)
    fileio.write_mask_pgm(outdir / "reliable.pgm", reliable)


def cmd_depth(args) -> int:
    camfile = Path(args.camfile)
    images, cams, _ = _load_views(camfile)
    if not 0 <= args.ref < len(images):
        raise SystemExit(f"--ref {args.ref} out of range (have {len(images)})")
    cfg = _pipeline_config(args)
    if args.dump_levels:
        cfg = replace(cfg, keep_levels=True)
    result = pipeline.run_pipeline(images, cams, cfg)
    view = result.views[args.ref]
    outdir = Path(args.out) / f"view{args.ref:02d}"
    _write_view_maps(outdir, view.depth, view.normal, view.cost,
                     view.reliable)
    if args.dump_levels:
        levels = result.stats["levels"]
        for idx, level in enumerate(result.level_maps):
            maps = level[args.ref]
            _write_view_maps(outdir / f"level{levels - idx}", maps["depth"],
                             maps["normal"], maps["cost"], maps["reliable"])
    if args.dump_anchors:
        field = result.anchor_fields[args.ref]
        unreliable = result.unreliable[args.ref]
        lines = []
        if field is not None and unreliable is not None:
            for y, x in np.argwhere(unreliable):
                anchors = field.anchors_of(int(x), int(y))
                parts = [str(int(x)), str(int(y)), str(len(anchors))]
                for ax, ay in anchors:
                    parts += [str(int(ax)), str(int(ay))]
                lines.append(" ".join(parts))
        Path(args.dump_anchors).write_text("\n".join(lines) + "\n")
    print(f"wrote {outdir} (reliable {view.reliable.mean():.3f})")
    return 0


def cmd_fuse(args) -> int:
    camfile = Path(args.camfile)
    cams, names = fileio.read_cameras(camfile)
    depthdir = Path(args.depthdir)
    views = []
    for i, (cam, name) in enumerate(zip(cams, names)):
        vdir = depthdir / f"view{i:02d}"
        if not (vdir / "depth.pfm").exists():
            raise SystemExit(f"missing {vdir}/depth.pfm "
                             "(run the depth command for every view)")
        depth = np.asarray(fileio.read_pfm(vdir / "depth.pfm"),
                           dtype=np.float64)
        normal = np.asarray(fileio.read_pfm(vdir / "normal.pfm"),
                            dtype=np.float64)
        img_path = camfile.parent / name
        image = (_load_gray(img_path) if img_path.exists()
                 else np.zeros_like(depth))
        views.append(pipeline.DepthView(name=name, image=image, cam=cam,
                                        depth=depth, normal=normal))
    fcfg = pipeline.FusionConfig(min_consistent_views=args.min_views,
                                 depth_rel_tol=args.depth_tol,
                                 reproj_tol=args.reproj_tol)
    cloud = pipeline.fuse_views(views, fcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_ply(out, cloud.points, cloud.normals, cloud.gray)
    print(f"wrote {out} ({len(cloud.points)} points)")
    return 0


def cmd_synth(args) -> int:
    scene_arg = args.scene
    if Path(scene_arg).suffix == ".txt" and Path(scene_arg).exists():
        spec = scenes.parse_scene_text(Path(scene_arg).read_text(),
                                       name=Path(scene_arg).stem)
    else:
        spec = scenes.get_scene(scene_arg)
    views = scenes.render_scene(spec)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    png_names = [f"view{i:02d}.png" for i in range(len(views))]
    for name, view in zip(png_names, views):
        cv2.imwrite(str(outdir / name),
                    np.clip(np.round(view.image * 255.0), 0,
                            255).astype(np.uint8))
    fileio.write_cameras(outdir / "cameras.txt", spec.cameras, png_names)
    for i, view in enumerate(views):
        fileio.write_pfm(outdir / f"gt_depth{i:02d}.pfm", view.depth)
        fileio.write_pfm(outdir / f"gt_normal{i:02d}.pfm", view.normal)
    gt = scenes.gt_point_cloud(spec, views)
    fileio.write_ply(outdir / "gt_cloud.ply", gt)
    print(f"wrote {len(views)} views of {spec.name} to {outdir}")
    return 0


def cmd_eval(args) -> int:
    cloud = fileio.read_ply(Path(args.cloud))["points"]
    gt = fileio.read_ply(Path(args.gt))["points"]
    thresholds = [float(t) for t in args.thresholds.split(",")]
    report = metrics.evaluate(cloud, gt, thresholds)
    print(f"{'threshold':>10} {'acc':>8} {'comp':>8} {'f1':>8}")
    for row in report.table:
        print(f"{row['threshold']:10.5g} {row['accuracy']:8.4f} "
              f"{row['completeness']:8.4f} {row['f1']:8.4f}")
    with open(args.csv, "w") as fh:
        fh.write("threshold,accuracy,completeness,f1\n")
        for row in report.table:
            fh.write(f"{row['threshold']:.6g},{row['accuracy']:.6f},"
                     f"{row['completeness']:.6f},{row['f1']:.6f}\n")
    return 0


def cmd_ablate(args) -> int:
    cfg = _pipeline_config(args)
    if args.full:
        toggle_sets = None  # metrics default: off, singles, all-on
    else:
        toggle_sets = [{k: False for k in metrics.TOGGLE_NAMES},
                       {k: True for k in metrics.TOGGLE_NAMES}]
    rows = metrics.ablation_run(args.scene, toggle_sets=toggle_sets,
                                seed=cfg.seed, cfg=cfg)
    print(metrics.ablation_table(rows))
    metrics.ablation_csv(rows, args.out)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0, help="master RNG seed")
    sub.add_argument("--backend", choices=("native", "python"),
                     help="force the kernel backend")
    sub.add_argument("--config", help="key = value config overrides file")
    sub.add_argument("--no-es", action="store_true", dest="no_es",
                     help="disable edge-guided sampling")
    sub.add_argument("--no-pe", action="store_true", dest="no_pe",
                     help="disable perception range expansion")
    sub.add_argument("--no-po", action="store_true", dest="no_po",
                     help="disable plane construction optimization")
    sub.add_argument("--no-aa", action="store_true", dest="no_aa",
                     help="disable adaptive patch sizing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgemvs",
        description="edge-guided deformable PatchMatch multi-view stereo")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("edges", help="extract edge cues from one image")
    p.add_argument("image")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--level", type=int, default=1,
                   help="pyramid level the thresholds assume (1 = finest)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_edges)

    p = subs.add_parser("depth", help="run the pipeline, write one view's maps")
    p.add_argument("camfile")
    p.add_argument("--ref", type=int, required=True, help="reference view index")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dump-levels", action="store_true",
                   help="also write every pyramid level's maps")
    p.add_argument("--dump-anchors", metavar="PATH",
                   help="write anchor pixels per unreliable pixel")
    _add_common(p)
    p.set_defaults(func=cmd_depth)

    p = subs.add_parser("fuse", help="fuse per-view depth maps into a cloud")
    p.add_argument("camfile")
    p.add_argument("depthdir")
    p.add_argument("--out", required=True, help="output PLY path")
    p.add_argument("--min-views", type=int, default=1)
    p.add_argument("--depth-tol", type=float, default=0.01)
    p.add_argument("--reproj-tol", type=float, default=2.0)
    p.set_defaults(func=cmd_fuse)

    p = subs.add_parser("synth", help="render a synthetic scene with GT")
    p.add_argument("scene", help="built-in scene name or scene .txt file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("eval", help="score a cloud against ground truth")
    p.add_argument("cloud")
    p.add_argument("gt")
    p.add_argument("--thresholds", default="0.01,0.02,0.05")
    p.add_argument("--csv", default="eval.csv")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("ablate", help="toggle study on one scene")
    p.add_argument("scene")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--full", action="store_true",
                   help="run singles too, not just all-off vs all-on")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
