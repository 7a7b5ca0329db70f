"""Camera models, plane parameterizations and the projective operations
linking them.

Conventions used throughout the package:

* World frame: right-handed; by convention the first camera of a rig is
  placed at the world origin with identity rotation.
* Camera frame: x right, y down, z forward (optical axis). A camera is
  ``x_cam = R @ (X_world - C)`` with ``R`` world-to-camera rotation and
  ``C`` the camera center in world coordinates.
* Pixels: ``u`` is the column coordinate, ``v`` the row coordinate, both
  measured at pixel centers. ``u = fx * x/z + cx``, ``v = fy * y/z + cy``.
* Depth: the camera-frame ``z`` coordinate (not the ray length).
* Per-pixel plane hypotheses store the plane normal in the camera frame,
  oriented toward the camera (``n . ray < 0``), plus the depth at the
  pixel itself.
* Free-standing planes store world-frame coefficients ``(m, b)`` with
  ``|m| = 1`` and ``m . X + b = 0`` on the plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Base class for degenerate geometric configurations."""


class BehindCameraError(GeometryError):
    """A point projected with non-positive depth."""


class DegeneratePlaneError(GeometryError):
    """Plane construction or use is numerically degenerate."""


class RayParallelError(GeometryError):
    """A viewing ray is (nearly) parallel to a plane."""


@dataclass
class CameraModel:
    """Pinhole camera: intrinsics, world-to-camera rotation, center, depth range."""

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    C: np.ndarray
    d_min: float
    d_max: float

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.C = np.asarray(self.C, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-8):
            raise ValueError("rotation matrix is not orthonormal")
        if np.linalg.det(self.R) < 0:
            raise ValueError("rotation matrix must have determinant +1")
        if not (0 < self.d_min < self.d_max):
            raise ValueError("depth range must satisfy 0 < d_min < d_max")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])


@dataclass
class PlaneHypothesis:
    """Per-pixel hypothesis: camera-frame unit normal + depth at the pixel."""

    normal: np.ndarray
    depth: float

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(self.normal)
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-6:
            raise ValueError("hypothesis normal must be a unit vector")
        if self.depth <= 0:
            raise ValueError("hypothesis depth must be positive")


@dataclass
class PlaneModel:
    """Free-standing plane in world coordinates: m . X + b = 0, |m| = 1."""

    m: np.ndarray
    b: float

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(self.m)
        if norm < 1e-12:
            raise DegeneratePlaneError("plane coefficient vector is null")
        self.b = float(self.b) / norm
        self.m = self.m / norm


def pixel_ray(pixel, cam: CameraModel) -> np.ndarray:
    """Camera-frame ray direction of a pixel, scaled so that z = 1."""
    u, v = float(pixel[0]), float(pixel[1])
    return np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])


def project(point, cam: CameraModel) -> tuple[np.ndarray, float]:
    """Project a world point; returns (pixel, depth).

    Raises:
        BehindCameraError: if the point has non-positive camera depth.
    """
    x = cam.R @ (np.asarray(point, dtype=np.float64) - cam.C)
    if x[2] <= 0:
        raise BehindCameraError(f"point has depth {x[2]:.6g}")
    u = cam.fx * x[0] / x[2] + cam.cx
    v = cam.fy * x[1] / x[2] + cam.cy
    return np.array([u, v]), float(x[2])


def unproject(pixel, depth: float, cam: CameraModel) -> np.ndarray:
    """World point of a pixel at a given camera depth."""
    if depth <= 0:
        raise BehindCameraError(f"depth must be positive, got {depth:.6g}")
    return cam.R.T @ (depth * pixel_ray(pixel, cam)) + cam.C


def orient_camera_facing(normal, ray) -> np.ndarray:
    """Flip a normal if needed so that it faces the camera (n . ray < 0)."""
    n = np.asarray(normal, dtype=np.float64)
    if float(n @ ray) > 0:
        return -n
    return n


def plane_induced_homography(cam_ref: CameraModel, cam_src: CameraModel,
                             hyp: PlaneHypothesis, pixel) -> np.ndarray:
    """Homography mapping reference pixels to source pixels through a plane.

    The plane is the one of hypothesis ``hyp`` anchored at ``pixel``:
    it passes through the 3D point of ``pixel`` at depth ``hyp.depth``
    with camera-frame normal ``hyp.normal``.

    Raises:
        DegeneratePlaneError: if the plane passes through the reference
            camera center (homography undefined).
    """
    n = hyp.normal
    x_p = hyp.depth * pixel_ray(pixel, cam_ref)
    rho = float(n @ x_p)  # signed plane offset in the reference frame
    if abs(rho) < 1e-12 * hyp.depth:
        raise DegeneratePlaneError("plane passes through the camera center")
    R_rel = cam_src.R @ cam_ref.R.T
    t_rel = cam_src.R @ (cam_ref.C - cam_src.C)
    H = cam_src.K @ (R_rel + np.outer(t_rel, n) / rho) @ cam_ref.K_inv
    return H


def warp_pixel(H: np.ndarray, pixel) -> np.ndarray:
    """Apply a homography to a pixel; raises if it maps to infinity."""
    q = H @ np.array([float(pixel[0]), float(pixel[1]), 1.0])
    if abs(q[2]) < 1e-12:
        raise DegeneratePlaneError("homography maps pixel to infinity")
    return q[:2] / q[2]


def plane_to_camera(plane: PlaneModel, cam: CameraModel) -> tuple[np.ndarray, float]:
    """Express a world plane in a camera frame: returns (m_cam, b_cam)."""
    m_cam = cam.R @ plane.m
    b_cam = float(plane.m @ cam.C + plane.b)
    return m_cam, b_cam


def depth_from_plane(plane: PlaneModel, pixel, cam: CameraModel) -> float:
    """Depth at which a pixel's viewing ray meets a plane.

    Uses the closed form in camera coordinates: with plane ``m . X + b = 0``
    expressed in the camera frame,

        d = -b * fx * fy / (m1 * fy * (u - cx) + m2 * fx * (v - cy) + m3 * fx * fy)

    Raises:
        RayParallelError: if the ray is (nearly) parallel to the plane.
        BehindCameraError: if the intersection lies behind the camera.
    """
    m, b = plane_to_camera(plane, cam)
    u, v = float(pixel[0]), float(pixel[1])
    den = m[0] * cam.fy * (u - cam.cx) + m[1] * cam.fx * (v - cam.cy) \
        + m[2] * cam.fx * cam.fy
    num = -b * cam.fx * cam.fy
    if abs(den) < 1e-12 * cam.fx * cam.fy:
        raise RayParallelError("viewing ray is parallel to the plane")
    d = num / den
    if d <= 0:
        raise BehindCameraError("plane intersection lies behind the camera")
    return float(d)


def plane_from_three_points(p1, p2, p3) -> PlaneModel:
    """Fit the world plane through three points.

    Raises:
        DegeneratePlaneError: if the points are (nearly) collinear.
    """
    a = np.asarray(p1, dtype=np.float64)
    e1 = np.asarray(p2, dtype=np.float64) - a
    e2 = np.asarray(p3, dtype=np.float64) - a
    m = np.cross(e1, e2)
    scale = np.linalg.norm(e1) * np.linalg.norm(e2)
    if scale < 1e-12 or np.linalg.norm(m) <= 1e-10 * scale:
        raise DegeneratePlaneError("three points are collinear")
    return PlaneModel(m=m, b=-float(m @ a))


def hypothesis_from_plane(plane: PlaneModel, pixel, cam: CameraModel) -> PlaneHypothesis:
    """Per-pixel hypothesis induced by a world plane at a pixel."""
    d = depth_from_plane(plane, pixel, cam)
    n = orient_camera_facing(cam.R @ plane.m, pixel_ray(pixel, cam))
    return PlaneHypothesis(normal=n, depth=d)
