"""Readers and writers for PFM, PGM, PLY and camera description files."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .geometry import CameraModel


# ---------------------------------------------------------------------------
# PFM (float maps; little-endian, bottom-up scanlines)


def write_pfm(path, data: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float array as a little-endian PFM file."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM data must be (H, W) or (H, W, 3), got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale marks little-endian
        f.write(data[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file, returning (H, W) or (H, W, 3) float32 with row 0 on top."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file: header {header!r}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(f.read(w * h * channels * 4), dtype=dtype)
    if channels == 1:
        data = raw.reshape(h, w)
    else:
        data = raw.reshape(h, w, 3)
    return data[::-1].astype(np.float32)


# ---------------------------------------------------------------------------
# PGM (P5: 8-bit masks, 16-bit label maps)


def write_pgm(path, data: np.ndarray) -> None:
    """Write a (H, W) uint8 or uint16 array as binary PGM (P5)."""
    data = np.asarray(data)
    if data.dtype == np.uint8:
        maxval = 255
        payload = data.tobytes()
    elif data.dtype == np.uint16:
        maxval = 65535
        payload = data.astype(">u2").tobytes()  # 16-bit PGM is big-endian
    else:
        raise ValueError(f"PGM data must be uint8 or uint16, got {data.dtype}")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(payload)


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) file as uint8 or uint16."""
    with open(path, "rb") as f:
        content = f.read()
    m = re.match(rb"P5\s+(?:#.*\s+)*(\d+)\s+(\d+)\s+(\d+)\s", content)
    if m is None:
        raise ValueError(f"not a binary PGM file: {path}")
    w, h, maxval = int(m.group(1)), int(m.group(2)), int(m.group(3))
    payload = content[m.end():]
    if maxval < 256:
        data = np.frombuffer(payload[: w * h], dtype=np.uint8).reshape(h, w)
    else:
        data = np.frombuffer(payload[: w * h * 2], dtype=">u2").astype(np.uint16)
        data = data.reshape(h, w)
    return data.copy()


def write_mask_pgm(path, mask: np.ndarray) -> None:
    """Write a boolean mask as 0/255 PGM."""
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask_pgm(path) -> np.ndarray:
    """Read a 0/255 PGM mask as boolean."""
    return read_pgm(path) > 0


# ---------------------------------------------------------------------------
# PLY point clouds (binary little-endian; x y z nx ny nz gray)

_PLY_PROPS = ("x", "y", "z", "nx", "ny", "nz", "gray")


def write_ply(path, points: np.ndarray, normals: np.ndarray | None = None,
              gray: np.ndarray | None = None) -> None:
    """Write a point cloud as binary little-endian PLY.

    Args:
        points: (N, 3) positions.
        normals: optional (N, 3) unit normals; zeros if omitted.
        gray: optional (N,) grayscale intensities; zeros if omitted.
    """
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    n = points.shape[0]
    if normals is None:
        normals = np.zeros((n, 3), dtype=np.float32)
    if gray is None:
        gray = np.zeros(n, dtype=np.float32)
    rec = np.empty(n, dtype=[(p, "<f4") for p in _PLY_PROPS])
    rec["x"], rec["y"], rec["z"] = points.T
    rec["nx"], rec["ny"], rec["nz"] = np.asarray(normals, dtype=np.float32).reshape(-1, 3).T
    rec["gray"] = np.asarray(gray, dtype=np.float32).reshape(-1)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        + "".join(f"property float {p}\n" for p in _PLY_PROPS)
        + "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rec.tobytes())


def read_ply(path) -> dict[str, np.ndarray]:
    """Read a binary little-endian PLY with float vertex properties.

    Returns a dict with "points" (N, 3) and, when present, "normals" (N, 3)
    and "gray" (N,).
    """
    with open(path, "rb") as f:
        line = f.readline().strip()
        if line != b"ply":
            raise ValueError(f"not a PLY file: {path}")
        fmt = f.readline().split()
        if fmt[1] != b"binary_little_endian":
            raise ValueError("only binary little-endian PLY is supported")
        n = 0
        props: list[str] = []
        while True:
            line = f.readline()
            if not line:
                raise ValueError("unterminated PLY header")
            parts = line.split()
            if parts[0] == b"element":
                if parts[1] != b"vertex":
                    raise ValueError("only vertex elements are supported")
                n = int(parts[2])
            elif parts[0] == b"property":
                if parts[1] != b"float":
                    raise ValueError("only float properties are supported")
                props.append(parts[2].decode("ascii"))
            elif parts[0] == b"end_header":
                break
        rec = np.frombuffer(f.read(n * 4 * len(props)),
                            dtype=[(p, "<f4") for p in props])
    out: dict[str, np.ndarray] = {}
    out["points"] = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    if all(k in props for k in ("nx", "ny", "nz")):
        out["normals"] = np.stack([rec["nx"], rec["ny"], rec["nz"]], axis=1).astype(np.float64)
    if "gray" in props:
        out["gray"] = rec["gray"].astype(np.float64)
    return out


# ---------------------------------------------------------------------------
# Camera description files
#
# One block of 7 content lines per camera:
#   image filename
#   fx fy cx cy
#   three rotation matrix rows (world -> camera)
#   camera center in world coordinates
#   d_min d_max
# Blank lines and '#' comments are ignored.


def write_cameras(path, cameras: list[CameraModel], image_names: list[str]) -> None:
    """Write camera blocks alongside their image filenames."""
    if len(cameras) != len(image_names):
        raise ValueError("one image name per camera is required")
    lines = []
    for cam, name in zip(cameras, image_names):
        lines.append(name)
        lines.append(f"{cam.fx:.10g} {cam.fy:.10g} {cam.cx:.10g} {cam.cy:.10g}")
        for row in cam.R:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        lines.append(" ".join(f"{v:.17g}" for v in cam.C))
        lines.append(f"{cam.d_min:.10g} {cam.d_max:.10g}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def read_cameras(path) -> tuple[list[CameraModel], list[str]]:
    """Read camera blocks; returns (cameras, image filenames)."""
    content = [
        ln.strip() for ln in Path(path).read_text().splitlines()
        if ln.strip() and not ln.strip().startswith("#")
    ]
    if len(content) % 7 != 0:
        raise ValueError(f"camera file {path}: expected blocks of 7 lines, "
                         f"got {len(content)} content lines")
    cameras: list[CameraModel] = []
    names: list[str] = []
    for i in range(0, len(content), 7):
        names.append(content[i])
        fx, fy, cx, cy = (float(v) for v in content[i + 1].split())
        R = np.array([[float(v) for v in content[i + 2 + r].split()] for r in range(3)])
        C = np.array([float(v) for v in content[i + 5].split()])
        d_min, d_max = (float(v) for v in content[i + 6].split())
        cameras.append(CameraModel(fx=fx, fy=fy, cx=cx, cy=cy, R=R, C=C,
                                   d_min=d_min, d_max=d_max))
    return cameras, names
