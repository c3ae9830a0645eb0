"""Frame-tagged SE(3) transforms and the pinhole/stereo projection model.

Conventions:
- A transform T with src frame {A} and dst frame {B} maps A-frame coordinates
  into B-frame coordinates: p_B = R * p_A + t.  Composition chains left to
  right: compose(a, b) applies `a` first, then `b`.
- Camera frames follow the OpenCV convention: x right, y down, z forward;
  points with z <= 0 are behind the camera and cannot be projected.
- Units are meters everywhere; pixel coordinates have their origin at the
  top-left corner of the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MIN_DEPTH = 1e-9


class FrameMismatch(ValueError):
    """Transform frame tags do not chain."""


class BehindCamera(ValueError):
    """Point is at or behind the camera plane (z <= MIN_DEPTH)."""


@dataclass(frozen=True)
class Frame:
    """Coordinate frame tag. Object frames carry a non-negative index."""

    kind: str
    index: int | None = None

    def __post_init__(self):
        if self.kind == "object":
            if self.index is None or self.index < 0:
                raise ValueError("object frame requires a non-negative index")
        elif self.index is not None:
            raise ValueError(f"{self.kind} frame does not take an index")

    @staticmethod
    def object_(index: int) -> "Frame":
        return Frame("object", index)

    def __str__(self) -> str:
        return f"{self.kind}[{self.index}]" if self.kind == "object" else self.kind


WORLD = Frame("world")
RCM = Frame("rcm")
TIP = Frame("tip")
CAMERA_LEFT = Frame("camera_left")
CAMERA_RIGHT = Frame("camera_right")

CAMERA_FRAMES = (CAMERA_LEFT, CAMERA_RIGHT)


def as_vec3(p) -> np.ndarray:
    """Coerce to a finite float64 (3,) vector."""
    v = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector: {v}")
    return v


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion (w, x, y, z), renormalized and sign-fixed (w >= 0)."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError("degenerate quaternion")
        q = q / n
        if q[0] < 0.0:
            q = -q
        object.__setattr__(self, "q", q)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Rotation":
        a = as_vec3(axis)
        n = np.linalg.norm(a)
        if n < 1e-12:
            if abs(angle) > 1e-12:
                raise ValueError("zero axis with nonzero angle")
            return Rotation.identity()
        a = a / n
        h = 0.5 * angle
        return Rotation(np.array([math.cos(h), *(math.sin(h) * a)]))

    @staticmethod
    def about_x(angle: float) -> "Rotation":
        return Rotation.from_axis_angle((1.0, 0.0, 0.0), angle)

    @staticmethod
    def about_y(angle: float) -> "Rotation":
        return Rotation.from_axis_angle((0.0, 1.0, 0.0), angle)

    @staticmethod
    def about_z(angle: float) -> "Rotation":
        return Rotation.from_axis_angle((0.0, 0.0, 1.0), angle)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Rotation":
        """Quaternion from a 3x3 rotation matrix (Shepperd's method)."""
        m = np.asarray(m, dtype=np.float64).reshape(3, 3)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = 0.5 / math.sqrt(tr + 1.0)
            w = 0.25 / s
            x = (m[2, 1] - m[1, 2]) * s
            y = (m[0, 2] - m[2, 0]) * s
            z = (m[1, 0] - m[0, 1]) * s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return Rotation(np.array([w, x, y, z]))

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def apply(self, p) -> np.ndarray:
        """Rotate a (3,) point or (N, 3) batch without building the matrix."""
        pts = np.asarray(p, dtype=np.float64)
        w = self.q[0]
        u = self.q[1:]
        # v' = v + 2 w (u x v) + 2 u x (u x v)
        uv = np.cross(u, pts)
        return pts + 2.0 * w * uv + 2.0 * np.cross(u, uv)

    def __mul__(self, other: "Rotation") -> "Rotation":
        """Composition: (self * other) applies `other` first, then `self`."""
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle in radians between two rotations."""
        d = abs(float(np.dot(self.q, other.q)))
        return 2.0 * math.acos(min(1.0, d))


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform mapping src-frame coordinates into dst-frame coordinates."""

    rotation: Rotation
    translation: np.ndarray
    src: Frame
    dst: Frame

    def __post_init__(self):
        object.__setattr__(self, "translation", as_vec3(self.translation))

    @staticmethod
    def identity(src: Frame, dst: Frame | None = None) -> "RigidTransform":
        return RigidTransform(Rotation.identity(), np.zeros(3), src, dst if dst is not None else src)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def __str__(self) -> str:
        return f"T[{self.src}->{self.dst}]"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Chain a (src->mid) with b (mid->dst) into src->dst; applies `a` first."""
    if a.dst != b.src:
        raise FrameMismatch(f"cannot chain {a} with {b}: {a.dst} != {b.src}")
    return RigidTransform(
        rotation=b.rotation * a.rotation,
        translation=b.rotation.apply(a.translation) + b.translation,
        src=a.src,
        dst=b.dst,
    )


def invert(t: RigidTransform) -> RigidTransform:
    """Inverse transform; frame tags swap."""
    rinv = t.rotation.inverse()
    return RigidTransform(rinv, -rinv.apply(t.translation), src=t.dst, dst=t.src)


def transform_point(t: RigidTransform, p) -> np.ndarray:
    """Map a (3,) point or (N, 3) batch from t.src coordinates to t.dst."""
    return t.rotation.apply(p) + t.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def k_matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])


class Pixel(NamedTuple):
    u: float
    v: float


def project(k: CameraIntrinsics, p_cam) -> Pixel:
    """Pinhole projection of a camera-frame point; raises BehindCamera for z <= MIN_DEPTH."""
    x, y, z = as_vec3(p_cam)
    if z <= MIN_DEPTH:
        raise BehindCamera(f"point depth {z:.3g} m is not in front of the camera")
    return Pixel(k.fx * x / z + k.cx, k.fy * y / z + k.cy)


def project_world(k: CameraIntrinsics, t_w_c: RigidTransform, p_world) -> Pixel:
    """Project a world point through a World->Camera transform."""
    if t_w_c.src != WORLD or t_w_c.dst not in CAMERA_FRAMES:
        raise FrameMismatch(f"expected a world->camera transform, got {t_w_c}")
    return project(k, transform_point(t_w_c, p_world))


def project_points(k: CameraIntrinsics, t_w_c: RigidTransform, pts: np.ndarray):
    """Batch projection: returns (uv (N,2), z (N,)). No depth check; callers
    mask on z themselves (overlay treats behind-camera points as invisible)."""
    pc = transform_point(t_w_c, np.asarray(pts, dtype=np.float64).reshape(-1, 3))
    z = pc[:, 2]
    safe = np.where(np.abs(z) < MIN_DEPTH, np.copysign(MIN_DEPTH, z + (z == 0)), z)
    uv = np.empty((pc.shape[0], 2))
    uv[:, 0] = k.fx * pc[:, 0] / safe + k.cx
    uv[:, 1] = k.fy * pc[:, 1] / safe + k.cy
    return uv, z


@dataclass(frozen=True)
class StereoRig:
    """Rectified stereo pair: shared intrinsics, right camera displaced along
    the left camera's +x axis by `baseline` meters. A zero baseline is the
    degenerate single-camera rig used in tests."""

    intrinsics: CameraIntrinsics
    left_pose: RigidTransform
    baseline: float

    def __post_init__(self):
        if self.baseline < 0:
            raise ValueError("baseline must be non-negative")
        if self.left_pose.src != WORLD or self.left_pose.dst != CAMERA_LEFT:
            raise FrameMismatch(f"left_pose must be world->camera_left, got {self.left_pose}")

    def right_pose(self) -> RigidTransform:
        shift = RigidTransform(Rotation.identity(), np.array([-self.baseline, 0.0, 0.0]),
                               src=CAMERA_LEFT, dst=CAMERA_RIGHT)
        return compose(self.left_pose, shift)


def project_stereo(rig: StereoRig, p_world) -> tuple[Pixel, Pixel]:
    """Project a world point into both eyes; disparity = fx * baseline / depth."""
    left = project_world(rig.intrinsics, rig.left_pose, p_world)
    right = project_world(rig.intrinsics, rig.right_pose(), p_world)
    return left, right


def look_at_pose(eye, target, dst: Frame = CAMERA_LEFT) -> RigidTransform:
    """World->camera pose for a camera at `eye` looking at `target`.

    Camera x is kept as horizontal as possible (world z is up); falls back to
    world +y as the reference direction when looking straight down/up.
    """
    eye = as_vec3(eye)
    fwd = as_vec3(target) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    fwd = fwd / n
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(fwd, up)) > 1.0 - 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    x_cam = np.cross(fwd, up)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(fwd, x_cam)
    r = np.stack([x_cam, y_cam, fwd])  # rows: camera axes in world coords
    rot = Rotation.from_matrix(r)
    return RigidTransform(rot, -rot.apply(eye), src=WORLD, dst=dst)
