"""Pinhole camera model shared by the dataset tracer and the renderer.

Convention: right-handed, camera looks along -z, +x right, +y up,
cam_to_world row-major. Pixel (row, col) rays pass through the pixel center
(col + 0.5, row + 0.5).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    cam_to_world: np.ndarray  # (4, 4)
    near: float
    far: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(f"fx, fy must be > 0 (got {self.fx}, {self.fy})")
        if not (0 < self.near < self.far):
            raise ConfigurationError(
                f"need 0 < near < far (got near={self.near}, far={self.far})"
            )
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError("camera resolution must be positive")
        m = np.asarray(self.cam_to_world, dtype=np.float64)
        if m.shape != (4, 4):
            raise ConfigurationError("cam_to_world must be 4x4")
        r = m[:3, :3]
        err = np.max(np.abs(r @ r.T - np.eye(3)))
        if err > 1e-5:
            raise ConfigurationError(f"rotation block not orthonormal (err {err:.3g})")
        object.__setattr__(self, "cam_to_world", m)

    @property
    def position(self):
        return self.cam_to_world[:3, 3]

    @property
    def rotation(self):
        return self.cam_to_world[:3, :3]

    def pixel_dirs(self, rows, cols):
        """World-space unit directions through the given pixel centers."""
        u = np.asarray(cols, dtype=np.float64) + 0.5
        v = np.asarray(rows, dtype=np.float64) + 0.5
        d_cam = np.stack(
            [(u - self.cx) / self.fx, -(v - self.cy) / self.fy, -np.ones_like(u)],
            axis=-1,
        )
        d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
        return d_cam @ self.rotation.T

    def project(self, points):
        """World points -> (rows, cols, in_front) in pixel-center coordinates."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        p_cam = (p - self.position) @ self.rotation
        z = -p_cam[:, 2]
        in_front = z > 1e-9
        zs = np.where(in_front, z, 1.0)
        cols = self.cx + self.fx * p_cam[:, 0] / zs - 0.5
        rows = self.cy - self.fy * p_cam[:, 1] / zs - 0.5
        return rows, cols, in_front

    def to_meta(self):
        return {
            "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "cam_to_world": [float(v) for v in self.cam_to_world.reshape(-1)],
            "near": self.near, "far": self.far,
        }

    @classmethod
    def from_meta(cls, rec):
        return cls(
            width=int(rec["width"]), height=int(rec["height"]),
            fx=float(rec["fx"]), fy=float(rec["fy"]),
            cx=float(rec["cx"]), cy=float(rec["cy"]),
            cam_to_world=np.asarray(rec["cam_to_world"], dtype=np.float64).reshape(4, 4),
            near=float(rec["near"]), far=float(rec["far"]),
        )


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """cam_to_world for a camera at `eye` looking at `target` (z-up world)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise ConfigurationError("look_at degenerate: view direction parallel to up")
    right /= n
    true_up = np.cross(right, fwd)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = true_up
    m[:3, 2] = -fwd
    m[:3, 3] = eye
    return m


def orbit_camera(azimuth_deg, elevation_deg, radius, resolution, fov_deg=50.0,
                 near=None, far=None, target=(0.0, 0.0, 0.0)):
    """Camera on an origin-centered orbit (z-up), looking at `target`."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    eye = np.array([
        radius * np.cos(el) * np.cos(az),
        radius * np.cos(el) * np.sin(az),
        radius * np.sin(el),
    ])
    w = h = int(resolution)
    focal = 0.5 * w / np.tan(0.5 * np.deg2rad(fov_deg))
    # default sampling bounds bracket the [-1, 1]^3 scene sphere
    if near is None:
        near = max(radius - 1.75, 0.05)
    if far is None:
        far = radius + 1.75
    return Camera(
        width=w, height=h, fx=focal, fy=focal, cx=w / 2.0, cy=h / 2.0,
        cam_to_world=look_at(eye, target), near=float(near), far=float(far),
    )
