"""Synthetic multi-view scenes with exact ground truth.

Scenes are built from bounded planar facets carrying plane-local texture
functions. Rendering is exact ray casting: every pixel ray is intersected
with every facet and the nearest hit is shaded by evaluating the facet's
texture at the hit point's local coordinates. That makes ground-truth
depth, normals and point clouds exact by construction, so reconstruction
error measurements are not polluted by renderer approximations.

The four named scenes exercise the matcher in different regimes:

* ``textured-box``    well-textured box corner; easy everywhere.
* ``lowtex-wall``     slanted wall with a large textureless interior and a
                      closer textured distractor in front of it.
* ``two-plane-edge``  foreground plane occluding a farther one, with an
                      intensity step on the silhouette and textureless
                      bands beside it.
* ``stochastic-lawn`` oblique ground under fine block noise (stochastic
                      texture) with smooth on-plane blobs and one
                      checkered block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import CameraModel

_U64 = np.uint64


def _hash01(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic uniform [0,1) noise from integer lattice coordinates."""
    salted = _U64((salt * 0x94D049BB133111EB) % (1 << 64))
    z = (ix.astype(np.int64).view(np.uint64) * _U64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.int64).view(np.uint64) * _U64(0xBF58476D1CE4E5B9)
         ^ salted)
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    z = z ^ (z >> _U64(31))
    return z.astype(np.float64) / 18446744073709551616.0


def checker(cell: float, lo: float = 0.25, hi: float = 0.85) -> Callable:
    def tex(u, v):
        par = (np.floor(u / cell) + np.floor(v / cell)).astype(np.int64) & 1
        return np.where(par == 0, lo, hi)
    return tex


def uniform(value: float) -> Callable:
    def tex(u, v):
        return np.full_like(u, value, dtype=np.float64)
    return tex


def gradient(scale: float, lo: float = 0.15, hi: float = 0.9) -> Callable:
    """Sawtooth intensity ramp along the local u axis, period scale."""
    def tex(u, v):
        return lo + (hi - lo) * np.mod(u / scale, 1.0)
    return tex


def framed(texture: Callable, half_u: float, half_v: float,
           interior: float = 0.55) -> Callable:
    """texture outside a flat rectangular interior around local (0, 0)."""
    def tex(u, v):
        inside = (np.abs(u) < half_u) & (np.abs(v) < half_v)
        return np.where(inside, interior, texture(u, v))
    return tex


def banded(texture: Callable, flat_to: float, base: float) -> Callable:
    """Flat near the local u = 0 line, textured beyond flat_to."""
    def tex(u, v):
        return np.where(np.abs(u) < flat_to, base, texture(u, v))
    return tex


def block_noise(block: float, lo: float, hi: float, salt: int) -> Callable:
    def tex(u, v):
        ix = np.floor(u / block)
        iy = np.floor(v / block)
        return lo + (hi - lo) * _hash01(ix, iy, salt)
    return tex


def noise_with_blobs(block: float, lo: float, hi: float, salt: int,
                     n_blobs: int, blob_sigma: float,
                     half_u: float, half_v: float) -> Callable:
    """Block noise with smooth gaussian bumps at hash-placed positions.

    The bumps are wide compared to the noise blocks, so they match well
    across views while the noise between them does not.
    """
    noise = block_noise(block, lo, hi, salt)
    idx = np.arange(n_blobs)
    bu = (2.0 * _hash01(idx, idx * 0 + 1, salt + 101) - 1.0) * half_u
    bv = (2.0 * _hash01(idx, idx * 0 + 2, salt + 202) - 1.0) * half_v
    amp = np.where(_hash01(idx, idx * 0 + 3, salt + 303) < 0.5, -0.45, 0.45)

    def tex(u, v):
        out = noise(u, v)
        w = np.zeros_like(out)
        for i in range(n_blobs):
            r2 = (u - bu[i]) ** 2 + (v - bv[i]) ** 2
            g = np.exp(-r2 / (2.0 * blob_sigma ** 2))
            mask = g > 0.05
            out = np.where(mask, 0.55 + amp[i] * g, out)
            w = np.maximum(w, np.where(mask, g, 0.0))
        return np.clip(out, 0.02, 0.98)
    return tex


@dataclass
class Facet:
    """A textured, bounded rectangle in world space.

    Local coordinates (u, v) measure metres along u_vec / v_vec from the
    origin; a ray hit counts only if they fall inside the ranges.
    """

    origin: np.ndarray
    u_vec: np.ndarray
    v_vec: np.ndarray
    u_range: tuple[float, float]
    v_range: tuple[float, float]
    texture: Callable
    name: str = "facet"

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.u_vec = np.asarray(self.u_vec, dtype=np.float64)
        self.v_vec = np.asarray(self.v_vec, dtype=np.float64)
        self.u_vec = self.u_vec / np.linalg.norm(self.u_vec)
        self.v_vec = self.v_vec / np.linalg.norm(self.v_vec)
        if abs(np.dot(self.u_vec, self.v_vec)) > 1e-9:
            raise ValueError(f"facet {self.name}: axes must be orthogonal")
        self.normal = np.cross(self.u_vec, self.v_vec)


@dataclass
class SceneSpec:
    """A named scene: facets plus the camera rig observing them."""

    name: str
    width: int
    height: int
    facets: list[Facet]
    cameras: list[CameraModel]
    image_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.image_names:
            self.image_names = [f"view{i:02d}.pgm" for i in range(len(self.cameras))]


@dataclass
class RenderedView:
    """One rendered view with exact ground truth."""

    image: np.ndarray      # float64 intensity in [0, 1], (H, W)
    depth: np.ndarray      # float64 camera-frame depth, 0 where no hit
    normal: np.ndarray     # float64 world-frame unit normals, camera-facing
    facet_id: np.ndarray   # int32 facet index, -1 where no hit


def look_at(C, target) -> np.ndarray:
    """Rotation of a camera at C looking at target, y axis pointing down."""
    C = np.asarray(C, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - C
    z = z / np.linalg.norm(z)
    down = np.array([0.0, 1.0, 0.0])
    x = np.cross(down, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("camera looks straight along the world vertical")
    x = x / nx
    y = np.cross(z, x)
    return np.stack([x, y, z])


def render_view(spec: SceneSpec, cam: CameraModel,
                background: float = 0.06) -> RenderedView:
    """Ray-cast all facets for one camera; nearest hit per pixel wins."""
    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w]
    rx = (xs - cam.cx) / cam.fx
    ry = (ys - cam.cy) / cam.fy
    dirs_cam = np.stack([rx, ry, np.ones_like(rx)], axis=-1)
    dirs = dirs_cam @ cam.R  # world directions; depth along ray == ray parameter
    depth = np.full((h, w), np.inf)
    image = np.full((h, w), background)
    normal = np.zeros((h, w, 3))
    facet_id = np.full((h, w), -1, dtype=np.int32)
    for fi, facet in enumerate(spec.facets):
        n = facet.normal
        denom = dirs @ n
        offs = np.dot(facet.origin - cam.C, n)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, offs / denom, np.inf)
        hit = np.isfinite(t) & (t > 1e-6)
        t_safe = np.where(hit, t, 1.0)
        pts = cam.C + dirs * t_safe[..., None]
        rel = pts - facet.origin
        u = rel @ facet.u_vec
        v = rel @ facet.v_vec
        hit &= (u >= facet.u_range[0]) & (u <= facet.u_range[1])
        hit &= (v >= facet.v_range[0]) & (v <= facet.v_range[1])
        hit &= t < depth
        if not np.any(hit):
            continue
        vals = facet.texture(u[hit], v[hit])
        image[hit] = vals
        depth[hit] = t[hit]
        fnorm = np.where(np.dot(n, cam.C - facet.origin) >= 0, 1.0, -1.0) * n
        normal[hit] = fnorm
        facet_id[hit] = fi
    depth[~np.isfinite(depth)] = 0.0
    return RenderedView(image=image, depth=depth, normal=normal,
                        facet_id=facet_id)


def render_scene(spec: SceneSpec) -> list[RenderedView]:
    return [render_view(spec, cam) for cam in spec.cameras]


def gt_point_cloud(spec: SceneSpec, views: list[RenderedView],
                   grid: float = 1e-4) -> np.ndarray:
    """World points from all ground-truth depth maps, deduplicated on a grid."""
    pts = []
    for cam, view in zip(spec.cameras, views):
        h, w = view.depth.shape
        ys, xs = np.mgrid[0:h, 0:w]
        good = view.depth > 0
        rx = (xs[good] - cam.cx) / cam.fx
        ry = (ys[good] - cam.cy) / cam.fy
        d = view.depth[good]
        pc = np.stack([rx * d, ry * d, d], axis=-1)
        pts.append(pc @ cam.R + cam.C)
    allp = np.concatenate(pts, axis=0)
    key = np.round(allp / grid).astype(np.int64)
    _, idx = np.unique(key, axis=0, return_index=True)
    return allp[np.sort(idx)]


# ---------------------------------------------------------------------------
# scene definitions


def _textured_box() -> SceneSpec:
    """Box corner (back wall, side wall, floor) under dense block noise.

    The noise is aperiodic, so no wrong plane can shift the pattern
    onto itself the way a checkerboard allows.
    """
    facets = [
        Facet(origin=(0.0, 0.0, 3.0), u_vec=(1, 0, 0), v_vec=(0, 1, 0),
              u_range=(-1.9, 1.9), v_range=(-1.5, 1.5),
              texture=block_noise(0.05, 0.12, 0.95, salt=11), name="back"),
        Facet(origin=(-1.1, 0.0, 0.0), u_vec=(0, 0, 1), v_vec=(0, 1, 0),
              u_range=(1.2, 3.0), v_range=(-1.5, 1.5),
              texture=block_noise(0.045, 0.2, 0.9, salt=23), name="side"),
        Facet(origin=(0.0, 0.85, 0.0), u_vec=(1, 0, 0), v_vec=(0, 0, 1),
              u_range=(-1.9, 1.9), v_range=(1.2, 3.0),
              texture=block_noise(0.055, 0.15, 0.85, salt=37), name="floor"),
    ]
    target = np.array([0.0, 0.0, 2.7])
    centers = [(-0.28, -0.1, 0.0), (0.27, -0.12, 0.0), (-0.02, 0.2, 0.05)]
    cams = [CameraModel(700.0, 700.0, 319.5, 239.5, look_at(c, target),
                        np.array(c), 1.0, 6.0) for c in centers]
    return SceneSpec("textured-box", 640, 480, facets, cams)


def _lowtex_wall() -> SceneSpec:
    """Slanted wall with a flat featureless middle and a closer distractor.

    The distractor is a small well-textured card floating in front of the
    featureless region: matchers that ignore planarity cues lock parts of
    the flat region onto the card's depth.
    """
    # wall through (0, 0, 2.5), receding to the right
    nrm = np.array([0.45, 0.0, -1.0])
    nrm = nrm / np.linalg.norm(nrm)
    u_vec = np.array([1.0, 0.0, 0.0])
    u_vec = u_vec - np.dot(u_vec, nrm) * nrm
    facets = [
        Facet(origin=(0.0, 0.0, 2.5), u_vec=u_vec, v_vec=(0, 1, 0),
              u_range=(-2.3, 2.3), v_range=(-1.6, 1.6),
              texture=framed(block_noise(0.07, 0.1, 0.92, salt=5),
                             0.42, 0.33, interior=0.55),
              name="wall"),
        Facet(origin=(0.1, 0.05, 1.35), u_vec=(1, 0, 0), v_vec=(0, 1, 0),
              u_range=(-0.075, 0.075), v_range=(-0.06, 0.06),
              texture=checker(0.03, lo=0.15, hi=0.95), name="card"),
    ]
    target = np.array([0.0, 0.0, 2.4])
    centers = [(0.0, 0.0, 0.0), (0.24, -0.03, 0.0),
               (-0.22, 0.05, 0.0), (0.05, 0.21, 0.0)]
    cams = [CameraModel(300.0, 300.0, 127.5, 95.5, look_at(c, target),
                        np.array(c), 0.8, 5.0) for c in centers]
    return SceneSpec("lowtex-wall", 256, 192, facets, cams)


def _two_plane_edge() -> SceneSpec:
    """Foreground plane occluding a background plane across a depth step.

    The silhouette of the foreground's right edge is also an intensity
    step, so the fine-edge mask traces the depth discontinuity exactly;
    both planes are featureless in a band beside it, and hypotheses
    there stand or fall with the plane models anchored farther out.
    """
    facets = [
        # background, slightly receding to the right; its flat band
        # covers the strip the foreground edge sweeps across the views
        Facet(origin=(0.2, 0.0, 2.75), u_vec=(1, 0, 0.15), v_vec=(0, 1, 0),
              u_range=(-2.6, 2.3), v_range=(-1.55, 1.55),
              texture=banded(block_noise(0.07, 0.1, 0.5, salt=13),
                             0.38, 0.3), name="back"),
        # foreground covering the left half, closer by about 0.55
        Facet(origin=(0.0, 0.0, 2.15), u_vec=(1, 0, 0.1), v_vec=(0, 1, 0),
              u_range=(-2.0, 0.0), v_range=(-1.5, 1.5),
              texture=banded(block_noise(0.07, 0.52, 0.92, salt=29),
                             0.33, 0.72), name="front"),
    ]
    target = np.array([0.0, 0.0, 2.2])
    centers = [(0.0, 0.0, 0.0), (0.26, -0.04, 0.0),
               (-0.24, 0.04, 0.0), (0.02, -0.24, 0.0)]
    cams = [CameraModel(300.0, 300.0, 127.5, 95.5, look_at(c, target),
                        np.array(c), 0.8, 5.0) for c in centers]
    return SceneSpec("two-plane-edge", 256, 192, facets, cams)


def _stochastic_lawn() -> SceneSpec:
    """Oblique ground under dense fine noise, with smooth bumps and a block.

    The noise blocks project to roughly a pixel, so their appearance is
    view-dependent and matching on them is hopeless, while edge detectors
    fire everywhere. The smooth bumps and the checkered block are the only
    honestly matchable structure, and they lie on the ground plane.
    """
    facets = [
        Facet(origin=(0.0, 0.55, 2.6), u_vec=(1, 0, 0), v_vec=(0, 0, 1),
              u_range=(-1.9, 1.9), v_range=(-2.3, 1.8),
              texture=noise_with_blobs(0.011, 0.25, 0.85, salt=7,
                                       n_blobs=26, blob_sigma=0.075,
                                       half_u=1.5, half_v=1.3),
              name="ground"),
        Facet(origin=(-0.55, 0.53, 2.1), u_vec=(1, 0, 0), v_vec=(0, -1, 0.02),
              u_range=(-0.11, 0.11), v_range=(0.0, 0.22),
              texture=block_noise(0.05, 0.12, 0.95, salt=41), name="block"),
        # backdrop closing the frame above the ground's horizon
        Facet(origin=(0.0, 0.0, 4.9), u_vec=(1, 0, 0), v_vec=(0, 1, 0),
              u_range=(-3.6, 3.6), v_range=(-2.8, 2.8),
              texture=block_noise(0.2, 0.25, 0.75, salt=53), name="backdrop"),
    ]
    target = np.array([0.0, 0.55, 2.4])
    centers = [(0.0, -0.15, 0.0), (0.24, -0.12, 0.0),
               (-0.22, -0.1, 0.0), (0.03, -0.33, 0.0)]
    cams = [CameraModel(300.0, 300.0, 127.5, 95.5, look_at(c, target),
                        np.array(c), 0.8, 6.0) for c in centers]
    return SceneSpec("stochastic-lawn", 256, 192, facets, cams)


_SCENES: dict[str, Callable[[], SceneSpec]] = {
    "textured-box": _textured_box,
    "lowtex-wall": _lowtex_wall,
    "two-plane-edge": _two_plane_edge,
    "stochastic-lawn": _stochastic_lawn,
}

SCENE_NAMES = tuple(sorted(_SCENES))


def get_scene(name: str) -> SceneSpec:
    try:
        return _SCENES[name]()
    except KeyError:
        raise KeyError(f"unknown scene {name!r}; have {', '.join(SCENE_NAMES)}")


# ---------------------------------------------------------------------------
# text scene descriptions


def _parse_texture(args: list[str]) -> Callable:
    kind = args[0]
    vals = [float(a) for a in args[1:]]
    if kind == "checker":
        return checker(vals[0], *vals[1:3])
    if kind == "uniform":
        return uniform(vals[0])
    if kind == "gradient":
        return gradient(vals[0], *vals[1:3])
    if kind == "noise":
        return block_noise(vals[0], vals[1], vals[2], int(vals[3]))
    raise ValueError(f"unknown texture kind {kind!r}")


def parse_scene_text(text: str, name: str = "custom") -> SceneSpec:
    """Build a SceneSpec from a line-oriented description.

    Directives (whitespace-separated, ``#`` starts a comment)::

        size W H
        camera fx fy cx cy  r00 .. r22  px py pz  d_min d_max
        camera-lookat fx fy cx cy  px py pz  tx ty tz  d_min d_max
        facet ox oy oz  ux uy uz  vx vy vz  ulo uhi  vlo vhi  KIND ARGS..

    Texture kinds: ``checker CELL [LO HI]``, ``uniform VALUE``,
    ``gradient SCALE [LO HI]``, ``noise BLOCK LO HI SALT``.
    """
    size = None
    cams: list[CameraModel] = []
    facets: list[Facet] = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind, args = tok[0], tok[1:]
        try:
            if kind == "size":
                size = (int(args[0]), int(args[1]))
            elif kind == "camera":
                v = [float(a) for a in args]
                if len(v) != 18:
                    raise ValueError("camera needs 18 numbers")
                cams.append(CameraModel(v[0], v[1], v[2], v[3],
                                        np.array(v[4:13]).reshape(3, 3),
                                        np.array(v[13:16]), v[16], v[17]))
            elif kind == "camera-lookat":
                v = [float(a) for a in args]
                if len(v) != 12:
                    raise ValueError("camera-lookat needs 12 numbers")
                C = np.array(v[4:7])
                cams.append(CameraModel(v[0], v[1], v[2], v[3],
                                        look_at(C, v[7:10]), C, v[10], v[11]))
            elif kind == "facet":
                v = [float(a) for a in args[:13]]
                if len(v) != 13:
                    raise ValueError("facet needs 13 numbers + texture")
                facets.append(Facet(
                    origin=v[0:3], u_vec=v[3:6], v_vec=v[6:9],
                    u_range=(v[9], v[10]), v_range=(v[11], v[12]),
                    texture=_parse_texture(args[13:]),
                    name=f"facet{len(facets)}"))
            else:
                raise ValueError(f"unknown directive {kind!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"scene text line {ln}: {exc}") from None
    if size is None or not cams or not facets:
        raise ValueError("scene text needs size, a camera, and a facet")
    return SceneSpec(name, size[0], size[1], facets, cams)
