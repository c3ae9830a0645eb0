"""Camera pose recovery from clicked 2D/3D correspondences.

Solves for the world->camera transform by Levenberg-Marquardt minimization of
pixel reprojection error, seeded by a direct linear estimate. Landmark sets
clicked on the peg board are coplanar, so the linear stage switches between a
full 3x4 DLT (non-planar points) and a plane-homography decomposition.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo

COLLINEAR_RTOL = 1e-6   # singular-value ratio below which points are collinear
PLANAR_RTOL = 1e-6      # ... below which points are treated as coplanar


class TooFewPoints(ValueError):
    """Fewer correspondences than the solver can use (absolute minimum 3)."""


class DegenerateGeometry(ValueError):
    """World points are coincident or collinear; pose is unobservable."""


class MultiSolutionWarning(UserWarning):
    """Exactly 3 points admit up to four poses; result depends on the initial guess."""


@dataclass(frozen=True)
class Correspondence:
    """A known world point paired with its clicked pixel location."""

    world: np.ndarray
    pixel: geo.Pixel

    def __post_init__(self):
        object.__setattr__(self, "world", geo.as_vec3(self.world))
        object.__setattr__(self, "pixel", geo.Pixel(float(self.pixel[0]), float(self.pixel[1])))


@dataclass(frozen=True)
class PnpConfig:
    max_iterations: int = 100
    cost_tolerance: float = 1e-10   # relative cost decrease on an accepted step
    param_tolerance: float = 1e-10  # update step norm
    initial_damping: float = 1e-3
    min_points: int = 4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.cost_tolerance <= 0 or self.param_tolerance <= 0 or self.initial_damping <= 0:
            raise ValueError("tolerances and damping must be positive")
        if self.min_points < 3:
            raise ValueError("min_points must be >= 3")


@dataclass
class PnpResult:
    pose: geo.RigidTransform          # world -> camera_left
    rms_error_px: float
    per_point_error_px: list[float]
    iterations: int
    converged: bool
    cost_trace: list[float] = field(default_factory=list)  # accepted costs only
    warning: str | None = None


def reprojection_error(k: geo.CameraIntrinsics, pose: geo.RigidTransform,
                       corrs: list[Correspondence]) -> tuple[float, list[float]]:
    """RMS and per-point pixel distances between clicks and reprojections."""
    world = np.array([c.world for c in corrs])
    clicked = np.array([c.pixel for c in corrs])
    uv, z = geo.project_points(k, pose, world)
    if np.any(z <= geo.MIN_DEPTH):
        raise geo.BehindCamera("some correspondence points lie behind the camera")
    d = np.linalg.norm(uv - clicked, axis=1)
    return float(np.sqrt(np.mean(d ** 2))), [float(x) for x in d]


def _rank_classify(world: np.ndarray) -> str:
    """Classify centered world points: 'degenerate', 'planar', or 'full'."""
    centered = world - world.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] < 1e-12 or s[1] / s[0] < COLLINEAR_RTOL:
        return "degenerate"
    if s[2] / s[0] < PLANAR_RTOL:
        return "planar"
    return "full"


def _normalized_coords(k: geo.CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    xn = np.empty_like(pixels)
    xn[:, 0] = (pixels[:, 0] - k.cx) / k.fx
    xn[:, 1] = (pixels[:, 1] - k.cy) / k.fy
    return xn


def _orthonormalize(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


def _dlt_full(world: np.ndarray, xn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x4 DLT on normalized image coordinates for non-planar point sets."""
    n = world.shape[0]
    a = np.zeros((2 * n, 12))
    for i in range(n):
        x, y, z = world[i]
        u, v = xn[i]
        a[2 * i, 0:3] = world[i]
        a[2 * i, 3] = 1.0
        a[2 * i, 8:11] = -u * world[i]
        a[2 * i, 11] = -u
        a[2 * i + 1, 4:7] = world[i]
        a[2 * i + 1, 7] = 1.0
        a[2 * i + 1, 8:11] = -v * world[i]
        a[2 * i + 1, 11] = -v
    _, _, vt = np.linalg.svd(a)
    p = vt[-1].reshape(3, 4)
    if np.linalg.det(p[:, :3]) < 0:
        p = -p
    m = p[:, :3]
    scale = np.linalg.svd(m, compute_uv=False).mean()
    return _orthonormalize(m), p[:, 3] / scale


def _homography_pose(world: np.ndarray, xn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pose from a plane-to-image homography for coplanar point sets."""
    centroid = world.mean(axis=0)
    centered = world - centroid
    _, _, vt = np.linalg.svd(centered)
    e1, e2 = vt[0], vt[1]
    e3 = np.cross(e1, e2)
    ab = np.stack([centered @ e1, centered @ e2], axis=1)

    n = world.shape[0]
    a = np.zeros((2 * n, 9))
    for i in range(n):
        u, v = xn[i]
        row = np.array([ab[i, 0], ab[i, 1], 1.0])
        a[2 * i, 0:3] = row
        a[2 * i, 6:9] = -u * row
        a[2 * i + 1, 3:6] = row
        a[2 * i + 1, 6:9] = -v * row
    _, _, vt9 = np.linalg.svd(a)
    h = vt9[-1].reshape(3, 3)

    lam = 2.0 / (np.linalg.norm(h[:, 0]) + np.linalg.norm(h[:, 1]))
    if lam * h[2, 2] < 0:  # plane centroid must sit in front of the camera
        lam = -lam
    r1 = lam * h[:, 0]
    r2 = lam * h[:, 1]
    rb = _orthonormalize(np.stack([r1, r2, np.cross(r1, r2)], axis=1))
    r = rb @ np.stack([e1, e2, e3])  # rows form E^T; R maps plane basis onto rb
    t = lam * h[:, 2] - r @ centroid
    return r, t


def fallback_overhead_pose(corrs: list[Correspondence],
                           height: float = 0.3) -> geo.RigidTransform:
    """Canonical straight-down view over the world-point centroid."""
    center = np.array([c.world for c in corrs]).mean(axis=0)
    eye = center + np.array([0.0, 1e-4, height])  # nudge avoids the look-down singularity
    return geo.look_at_pose(eye, center)


def initial_pose_guess(k: geo.CameraIntrinsics,
                       corrs: list[Correspondence]) -> geo.RigidTransform:
    """Linear pose estimate (>= 6 points), else the documented overhead fallback."""
    world = np.array([c.world for c in corrs])
    kind = _rank_classify(world)
    if kind == "degenerate":
        raise DegenerateGeometry("world points are coincident or collinear")
    if len(corrs) < 6:
        return fallback_overhead_pose(corrs)
    xn = _normalized_coords(k, np.array([c.pixel for c in corrs]))
    if kind == "planar":
        r, t = _homography_pose(world, xn)
    else:
        r, t = _dlt_full(world, xn)
    return geo.RigidTransform(geo.Rotation.from_matrix(r), t, geo.WORLD, geo.CAMERA_LEFT)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _rodrigues(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + _skew(w)
    k = _skew(w / theta)
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def _residual_cost(k, r, t, world, clicked):
    """Sum of squared pixel residuals, or inf when a point falls behind the camera."""
    pc = world @ r.T + t
    z = pc[:, 2]
    if np.any(z <= geo.MIN_DEPTH):
        return math.inf, None, None
    uv = np.stack([k.fx * pc[:, 0] / z + k.cx, k.fy * pc[:, 1] / z + k.cy], axis=1)
    res = (uv - clicked).reshape(-1)
    return float(res @ res), res, pc


def _jacobian(k, pc: np.ndarray) -> np.ndarray:
    """d(residual)/d(w, dt) for the left-multiplicative increment
    p_cam' = exp([w]) p_cam + dt, evaluated at zero increment."""
    n = pc.shape[0]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    j = np.zeros((2 * n, 6))
    ju = np.zeros((n, 3))
    jv = np.zeros((n, 3))
    ju[:, 0] = k.fx / z
    ju[:, 2] = -k.fx * x / z ** 2
    jv[:, 1] = k.fy / z
    jv[:, 2] = -k.fy * y / z ** 2
    for i in range(n):
        dp = np.hstack([-_skew(pc[i]), np.eye(3)])  # (3,6)
        j[2 * i] = ju[i] @ dp
        j[2 * i + 1] = jv[i] @ dp
    return j


def solve_pnp(k: geo.CameraIntrinsics, corrs: list[Correspondence],
              cfg: PnpConfig | None = None,
              initial: geo.RigidTransform | None = None) -> PnpResult:
    """Recover the world->camera pose minimizing squared reprojection error.

    Runs damped Gauss-Newton (Levenberg-Marquardt) with an analytic Jacobian;
    damping shrinks x0.1 on accepted steps and grows x10 on rejected ones.
    With exactly 3 points the problem admits multiple solutions, so the result
    is returned unconverged with a MultiSolutionWarning.
    """
    cfg = cfg or PnpConfig()
    if len(corrs) < 3:
        raise TooFewPoints(f"need at least 3 correspondences, got {len(corrs)}")
    warning = None
    if len(corrs) < cfg.min_points:
        warning = ("3-point solve is ambiguous (up to four poses); "
                   "result follows the initial guess")
        warnings.warn(warning, MultiSolutionWarning)

    world = np.array([c.world for c in corrs])
    clicked = np.array([c.pixel for c in corrs])
    if _rank_classify(world) == "degenerate":
        raise DegenerateGeometry("world points are coincident or collinear")

    pose = initial if initial is not None else initial_pose_guess(k, corrs)
    r = pose.rotation.as_matrix()
    t = pose.translation.copy()

    cost, _, _ = _residual_cost(k, r, t, world, clicked)
    if not math.isfinite(cost):
        # linear estimate placed points behind the camera; restart overhead
        pose = fallback_overhead_pose(corrs)
        r, t = pose.rotation.as_matrix(), pose.translation.copy()
        cost, _, _ = _residual_cost(k, r, t, world, clicked)

    trace = [cost]
    lam = cfg.initial_damping
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        _, res, pc = _residual_cost(k, r, t, world, clicked)
        j = _jacobian(k, pc)
        h = j.T @ j
        g = j.T @ res
        d = np.clip(np.diag(h), 1e-12, None)
        try:
            delta = np.linalg.solve(h + lam * np.diag(d), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        r_new = _rodrigues(delta[:3]) @ r
        t_new = _rodrigues(delta[:3]) @ t + delta[3:]
        cost_new, _, _ = _residual_cost(k, r_new, t_new, world, clicked)
        step = float(np.linalg.norm(delta))
        if cost_new < cost:
            rel = (cost - cost_new) / max(cost, 1e-300)
            r, t, cost = r_new, t_new, cost_new
            trace.append(cost)
            lam = max(lam / 10.0, 1e-12)
            if rel < cfg.cost_tolerance or step < cfg.param_tolerance:
                converged = True
                break
        else:
            lam = min(lam * 10.0, 1e12)
            if step < cfg.param_tolerance:
                converged = True  # no improving direction within tolerance
                break

    pose = geo.RigidTransform(geo.Rotation.from_matrix(r), t, geo.WORLD, geo.CAMERA_LEFT)
    rms, per_point = reprojection_error(k, pose, corrs)
    if warning is not None:
        converged = False
    return PnpResult(pose=pose, rms_error_px=rms, per_point_error_px=per_point,
                     iterations=iterations, converged=converged,
                     cost_trace=trace, warning=warning)
