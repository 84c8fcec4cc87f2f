"""Cameras, rays, and the world/camera coordinate transform.

Conventions, fixed once and asserted by round-trip tests:
  * world -> camera is x_cam = R @ x + t; the camera looks down -z in its
    own frame.
  * a ray is the curve x(tau) = origin - direction * tau with tau >= 0, so
    `direction` points opposite the viewing direction and marching forward
    along the ray means subtracting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError, DomainError

ORTHO_TOL = 1e-9


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise DomainError(f"expected a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform plus pinhole intrinsics for one frame."""

    rotation: np.ndarray  # (3, 3), world -> camera
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    frame_index: int = 0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = _as_vec3(self.translation)
        if r.shape != (3, 3):
            raise DomainError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
            raise DomainError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise DomainError("rotation determinant is not +1 within 1e-9")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (point mapping to the origin)."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Ray:
    """Parametric ray x(tau) = origin - direction * tau, tau in [t_near, t_far]."""

    origin: np.ndarray  # (3,)
    direction: np.ndarray  # (3,), unit norm
    t_near: float = 0.0
    t_far: float = np.inf
    pixel: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        o = _as_vec3(self.origin)
        d = _as_vec3(self.direction)
        if abs(np.linalg.norm(d) - 1.0) > ORTHO_TOL:
            raise DomainError("ray direction must be unit length within 1e-9")
        if not (0.0 <= self.t_near < self.t_far):
            raise DomainError("require 0 <= t_near < t_far")
        o.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def point_at(self, tau):
        """Point(s) on the ray; `tau` may be scalar or an array."""
        tau = np.asarray(tau, dtype=np.float64)
        return self.origin - tau[..., None] * self.direction


def world_to_camera(pose: CameraPose, x) -> np.ndarray:
    """Map world point(s) x (..., 3) into camera coordinates."""
    x = np.asarray(x, dtype=np.float64)
    return x @ pose.rotation.T + pose.translation


def camera_to_world(pose: CameraPose, x_cam) -> np.ndarray:
    """Inverse of :func:`world_to_camera`."""
    x_cam = np.asarray(x_cam, dtype=np.float64)
    return (x_cam - pose.translation) @ pose.rotation


def ray_through_pixel(
    pose: CameraPose,
    pixel: tuple[float, float],
    image_size: tuple[int, int] | None = None,
) -> Ray:
    """Back-project pixel (u_x, u_y) to a world-space ray through the camera center.

    `image_size` is (width, height); when given, the pixel must satisfy
    -0.5 <= u < size - 0.5 on both axes.
    """
    ux, uy = float(pixel[0]), float(pixel[1])
    if image_size is not None:
        w, h = image_size
        if not (-0.5 <= ux <= w - 0.5) or not (-0.5 <= uy <= h - 0.5):
            raise DomainError(f"pixel ({ux}, {uy}) outside image bounds {w}x{h}")
    d_cam = np.array([(ux - pose.cx) / pose.fx, (uy - pose.cy) / pose.fy, -1.0])
    d_world = pose.rotation.T @ d_cam
    d_world /= np.linalg.norm(d_world)
    # x(tau) = origin - direction*tau must march along the viewing direction.
    return Ray(origin=pose.center, direction=-d_world, pixel=(ux, uy))


def clip_ray_to_box(ray: Ray, lo, hi, eps: float = 1e-4) -> Ray:
    """Restrict [t_near, t_far] to the ray's overlap with an axis-aligned box.

    Constants match the batched per-frame ray setup so a clipped single ray
    renders identically to the corresponding frame pixel.
    """
    lo = _as_vec3(lo)
    hi = _as_vec3(hi)
    march = -ray.direction  # forward direction of travel
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(march != 0.0, 1.0 / march, np.inf)
    t0 = (lo - ray.origin) * inv
    t1 = (hi - ray.origin) * inv
    # Degenerate axes: the slab constraint is either void or unsatisfiable.
    on_axis = march == 0.0
    inside = (ray.origin >= lo) & (ray.origin <= hi)
    t_lo = np.where(on_axis, np.where(inside, -np.inf, np.inf), np.minimum(t0, t1))
    t_hi = np.where(on_axis, np.where(inside, np.inf, -np.inf), np.maximum(t0, t1))
    enter = float(np.max(t_lo))
    exit_ = float(np.min(t_hi))
    if exit_ <= max(enter, 0.0):
        raise DomainError("ray does not intersect the box")
    t_near = max(enter, eps)
    return Ray(
        origin=ray.origin,
        direction=ray.direction,
        t_near=t_near,
        t_far=max(exit_, t_near + 1e-3),
        pixel=ray.pixel,
    )


def look_at(position, target, up=(0.0, 0.0, 1.0), **intrinsics) -> CameraPose:
    """Pose at `position` viewing `target`, with the image up-axis near `up`."""
    position = _as_vec3(position)
    target = _as_vec3(target)
    up = _as_vec3(up)
    fwd = target - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise DomainError("look_at target coincides with camera position")
    fwd = fwd / n
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise DomainError("up vector is parallel to the viewing direction")
    right /= rn
    true_up = np.cross(right, fwd)
    # Rows of R are the camera axes expressed in world coordinates: x right,
    # y up, z backward (the camera views along -z).
    r = np.stack([right, true_up, -fwd])
    return CameraPose(rotation=r, translation=-r @ position, **intrinsics)


_CSV_HEADER = (
    ["t"]
    + [f"r{i}{j}" for i in range(3) for j in range(3)]
    + ["tx", "ty", "tz", "fx", "fy", "cx", "cy"]
)


def save_cameras(path, poses: Iterable[CameraPose]) -> None:
    """Write a camera trajectory CSV: t, row-major rotation, translation, intrinsics."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_HEADER)
        for p in poses:
            row = (
                [p.frame_index]
                + [f"{v:.17g}" for v in p.rotation.ravel()]
                + [f"{v:.17g}" for v in p.translation]
                + [f"{v:.17g}" for v in (p.fx, p.fy, p.cx, p.cy)]
            )
            w.writerow(row)


def load_cameras(path) -> list[CameraPose]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"camera file not found: {path}")
    poses = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise DataError(f"unexpected camera CSV header in {path}")
        for row in reader:
            if not row:
                continue
            vals = [float(v) for v in row]
            poses.append(
                CameraPose(
                    rotation=np.array(vals[1:10]).reshape(3, 3),
                    translation=np.array(vals[10:13]),
                    fx=vals[13],
                    fy=vals[14],
                    cx=vals[15],
                    cy=vals[16],
                    frame_index=int(vals[0]),
                )
            )
    return poses
