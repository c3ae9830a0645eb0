"""Trajectory projection, guidance overlay rasterization, and the synthetic
stereo scene renderer.

Everything draws into plain RGBA byte buffers with integer rasterization:
filled discs for waypoints, midpoint lines (clipped to the frame) for the
path, a 5x7 bitmap font for the hint text, and scanline-filled polygons for
the scene. Hot paths are vectorized so a multi-thousand-point overlay stays
comfortably inside a 30 Hz frame budget.
"""

from __future__ import annotations

import base64
import time
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import sim
from .font5x7 import FONT, FALLBACK, GLYPH_WIDTH, GLYPH_HEIGHT

RGBA = tuple[int, int, int, int]

WHITE = (255, 255, 255, 255)
GREEN = (40, 220, 70, 255)

BG_COLOR = (24, 22, 30, 255)
BOARD_COLOR = (92, 88, 96, 255)
PEG_SIDE_COLOR = (96, 116, 168, 255)
PEG_TOP_COLOR = (140, 160, 212, 255)
BLOCK_COLOR = (204, 70, 58, 255)
TIP_OPEN_COLOR = (250, 240, 120, 255)
TIP_CLOSED_COLOR = (250, 150, 60, 255)


@dataclass
class TrajectoryPlan:
    """World-frame waypoints with per-waypoint jaw state and a text label."""

    waypoints: np.ndarray   # (N, 3)
    jaw_hints: np.ndarray   # (N,) bool, True = jaw open
    label: str = ""

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 3)
        if w.shape[0] < 1:
            raise ValueError("a trajectory plan needs at least one waypoint")
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite waypoint coordinates")
        object.__setattr__(self, "waypoints", w)
        object.__setattr__(self, "jaw_hints",
                           np.asarray(self.jaw_hints, dtype=bool).reshape(w.shape[0]))


@dataclass
class FrameBuffer:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 4) uint8

    @staticmethod
    def create(width: int = 640, height: int = 480, color: RGBA = BG_COLOR) -> "FrameBuffer":
        px = np.empty((height, width, 4), dtype=np.uint8)
        px[:] = color
        return FrameBuffer(width, height, px)

    def copy(self) -> "FrameBuffer":
        return FrameBuffer(self.width, self.height, self.pixels.copy())

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class OverlayStyle:
    dot_radius_px: int = 2
    dot_color: RGBA = WHITE
    line_color: RGBA = GREEN
    text_color: RGBA = WHITE
    line_thickness_px: int = 1

    def __post_init__(self):
        if self.dot_radius_px < 1 or self.line_thickness_px < 1:
            raise ValueError("dot radius and line thickness must be >= 1")


@dataclass
class LatencyReport:
    rows: list[dict] = field(default_factory=list)  # {n_points, mean_ms, std_ms, repeats}

    def to_csv(self) -> str:
        lines = ["n_points,mean_ms,std_ms,repeats"]
        for r in self.rows:
            lines.append(f"{r['n_points']},{r['mean_ms']:.6f},{r['std_ms']:.6f},{r['repeats']}")
        return "\n".join(lines) + "\n"


# --- projection --------------------------------------------------------------

def project_trajectory(plan: TrajectoryPlan, rig: geo.StereoRig):
    """Stereo-project every waypoint. Waypoints behind either camera come back
    with visible=False and a None pixel instead of raising."""
    uv_l, z_l = geo.project_points(rig.intrinsics, rig.left_pose, plan.waypoints)
    uv_r, z_r = geo.project_points(rig.intrinsics, rig.right_pose(), plan.waypoints)
    visible = (z_l > geo.MIN_DEPTH) & (z_r > geo.MIN_DEPTH)
    if visible.all():
        left = list(map(geo.Pixel._make, uv_l.tolist()))
        right = list(map(geo.Pixel._make, uv_r.tolist()))
    else:
        left = [geo.Pixel(*uv_l[i]) if visible[i] else None for i in range(len(visible))]
        right = [geo.Pixel(*uv_r[i]) if visible[i] else None for i in range(len(visible))]
    return left, right, visible.tolist()


def densify_plan(plan: TrajectoryPlan, factor: int = 2) -> TrajectoryPlan:
    """Insert linearly interpolated points between waypoints for display
    (factor 2 turns a 51-point rollout into the ~100-point operating range)."""
    if factor <= 1 or plan.waypoints.shape[0] < 2:
        return plan
    w = plan.waypoints
    out = [w[0]]
    hints = [plan.jaw_hints[0]]
    for i in range(1, w.shape[0]):
        for k in range(1, factor + 1):
            out.append(w[i - 1] + (w[i] - w[i - 1]) * (k / factor))
            hints.append(plan.jaw_hints[i] if k == factor else plan.jaw_hints[i - 1])
    return TrajectoryPlan(np.array(out), np.array(hints), plan.label)


# --- low-level rasterization -------------------------------------------------

def _color_array(color: RGBA) -> np.ndarray:
    return np.array(color, dtype=np.uint8)


def _flat_view(px: np.ndarray) -> np.ndarray:
    """(H*W,) uint32 view of a contiguous (H, W, 4) uint8 buffer."""
    return px.reshape(-1, 4).view(np.uint32).reshape(-1)


def _packed(color: RGBA) -> np.uint32:
    return np.array([color], dtype=np.uint8).view(np.uint32)[0]


def _paint_discs(px: np.ndarray, centers: np.ndarray, radius: int, color: RGBA) -> None:
    """Filled discs at integer centers, clipped to the frame."""
    if centers.size == 0:
        return
    h, w = px.shape[:2]
    dy, dx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    inside = dy ** 2 + dx ** 2 <= radius ** 2
    offsets = np.stack([dx[inside], dy[inside]], axis=1).astype(np.int32)  # (K, 2)
    pts = (centers[:, None, :].astype(np.int32) + offsets[None, :, :]).reshape(-1, 2)
    ok = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
    pts = pts[ok]
    _flat_view(px)[pts[:, 1] * w + pts[:, 0]] = _packed(color)


_INSIDE, _LEFT, _RIGHT, _BOTTOM, _TOP = 0, 1, 2, 4, 8


def _outcode(x: float, y: float, xmax: float, ymax: float) -> int:
    code = _INSIDE
    if x < 0:
        code |= _LEFT
    elif x > xmax:
        code |= _RIGHT
    if y < 0:
        code |= _BOTTOM
    elif y > ymax:
        code |= _TOP
    return code


def _clip_segment(x0, y0, x1, y1, xmax, ymax):
    """Cohen-Sutherland clip against [0, xmax] x [0, ymax]; None when fully out."""
    c0 = _outcode(x0, y0, xmax, ymax)
    c1 = _outcode(x1, y1, xmax, ymax)
    while True:
        if not (c0 | c1):
            return x0, y0, x1, y1
        if c0 & c1:
            return None
        c = c0 or c1
        if c & _TOP:
            x = x0 + (x1 - x0) * (ymax - y0) / (y1 - y0)
            y = ymax
        elif c & _BOTTOM:
            x = x0 + (x1 - x0) * (0 - y0) / (y1 - y0)
            y = 0.0
        elif c & _RIGHT:
            y = y0 + (y1 - y0) * (xmax - x0) / (x1 - x0)
            x = xmax
        else:
            y = y0 + (y1 - y0) * (0 - x0) / (x1 - x0)
            x = 0.0
        if c == c0:
            x0, y0 = x, y
            c0 = _outcode(x0, y0, xmax, ymax)
        else:
            x1, y1 = x, y
            c1 = _outcode(x1, y1, xmax, ymax)


def _paint_segments(px: np.ndarray, p0: np.ndarray, p1: np.ndarray,
                    color: RGBA, thickness: int = 1) -> None:
    """Rasterize many segments at once (float endpoints, clipped)."""
    if p0.size == 0:
        return
    h, w = px.shape[:2]
    xmax, ymax = w - 1, h - 1

    # clip: fast vectorized trivial accept, scalar loop for border crossers
    c0 = ((p0[:, 0] < 0) * _LEFT) | ((p0[:, 0] > xmax) * _RIGHT) \
        | ((p0[:, 1] < 0) * _BOTTOM) | ((p0[:, 1] > ymax) * _TOP)
    c1 = ((p1[:, 0] < 0) * _LEFT) | ((p1[:, 0] > xmax) * _RIGHT) \
        | ((p1[:, 1] < 0) * _BOTTOM) | ((p1[:, 1] > ymax) * _TOP)
    accept = (c0 | c1) == 0
    reject = (c0 & c1) != 0
    cross = ~accept & ~reject

    segs = [np.column_stack([p0[accept], p1[accept]])] if accept.any() else []
    for i in np.nonzero(cross)[0]:
        clipped = _clip_segment(p0[i, 0], p0[i, 1], p1[i, 0], p1[i, 1], xmax, ymax)
        if clipped is not None:
            segs.append(np.array([clipped]))
    if not segs:
        return
    seg = np.concatenate(segs)
    x0 = np.floor(seg[:, 0] + 0.5).astype(np.int32)
    y0 = np.floor(seg[:, 1] + 0.5).astype(np.int32)
    x1 = np.floor(seg[:, 2] + 0.5).astype(np.int32)
    y1 = np.floor(seg[:, 3] + 0.5).astype(np.int32)

    steps = np.maximum(np.abs(x1 - x0), np.abs(y1 - y0))
    counts = steps + 1
    offsets = np.concatenate([[0.0], np.cumsum(counts[:-1], dtype=np.int64)]).astype(np.float32)
    total = int(counts.sum())
    # per-slot step index; per-segment values are broadcast with np.repeat,
    # which benchmarks far faster than fancy-index gathers here
    t = np.arange(total, dtype=np.float32) - np.repeat(offsets, counts)
    # rounded linear interpolation in single precision (bit-identical to the
    # scalar definition: floor(c0 + t * d/steps + 0.5), float32 throughout);
    # endpoints are clipped, so interpolated pixels are in-bounds already
    inv = np.float32(1.0) / np.maximum(steps, 1).astype(np.float32)
    half = np.float32(0.5)
    xs = (np.repeat(x0.astype(np.float32), counts)
          + t * np.repeat((x1 - x0).astype(np.float32) * inv, counts) + half).astype(np.int32)
    ys = (np.repeat(y0.astype(np.float32), counts)
          + t * np.repeat((y1 - y0).astype(np.float32) * inv, counts) + half).astype(np.int32)

    if thickness > 1:
        r = thickness // 2
        dy, dx = np.mgrid[-r:thickness - r, -r:thickness - r]
        xs = (xs[:, None] + dx.ravel().astype(np.int32)[None, :]).ravel()
        ys = (ys[:, None] + dy.ravel().astype(np.int32)[None, :]).ravel()
        ok = (xs >= 0) & (xs <= xmax) & (ys >= 0) & (ys <= ymax)
        xs, ys = xs[ok], ys[ok]
    _flat_view(px)[ys * np.int32(px.shape[1]) + xs] = _packed(color)


def _paint_text(px: np.ndarray, x: int, y: int, text: str, color: RGBA) -> None:
    h, w = px.shape[:2]
    col = _color_array(color)
    cx = x
    for ch in text.upper():
        glyph = FONT.get(ch, FALLBACK)
        for gx, bits in enumerate(glyph):
            for gy in range(GLYPH_HEIGHT):
                if bits & (1 << gy):
                    xx, yy = cx + gx, y + gy
                    if 0 <= xx < w and 0 <= yy < h:
                        px[yy, xx] = col
        cx += GLYPH_WIDTH + 1


def _paint_polygon(px: np.ndarray, pts: np.ndarray, color: RGBA) -> None:
    """Scanline fill of a simple polygon given float vertices."""
    h, w = px.shape[:2]
    ys = pts[:, 1]
    y_lo = max(0, int(np.ceil(ys.min())))
    y_hi = min(h - 1, int(np.floor(ys.max())))
    if y_hi < y_lo:
        return
    col = _color_array(color)
    n = pts.shape[0]
    for y in range(y_lo, y_hi + 1):
        xs = []
        for i in range(n):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % n]
            if (y0 <= y < y1) or (y1 <= y < y0):
                xs.append(x0 + (y - y0) * (x1 - x0) / (y1 - y0))
        xs.sort()
        for i in range(0, len(xs) - 1, 2):
            a = max(0, int(np.ceil(xs[i])))
            b = min(w - 1, int(np.floor(xs[i + 1])))
            if b >= a:
                px[y, a:b + 1] = col


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; input (N, 2) floats, output hull vertices CCW."""
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if pts.shape[0] <= 2:
        return pts

    def half(points):
        out = []
        for p in points:
            while len(out) >= 2:
                a = out[-1] - out[-2]
                b = p - out[-2]
                if a[0] * b[1] - a[1] * b[0] > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


# --- overlay and scene -------------------------------------------------------

def render_overlay(frame: FrameBuffer, pixels, visible, style: OverlayStyle,
                   hint: str = "") -> FrameBuffer:
    """Paint waypoint discs, the connecting polyline, and the hint text onto a
    copy of `frame` (the input buffer is never modified)."""
    out = frame.copy()
    px = out.pixels
    if all(visible):
        vis_pts = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    else:
        vis_pts = np.array([[p.u, p.v] for p, v in zip(pixels, visible)
                            if v and p is not None], dtype=np.float64).reshape(-1, 2)
    if vis_pts.shape[0] >= 2:
        _paint_segments(px, vis_pts[:-1], vis_pts[1:], style.line_color,
                        style.line_thickness_px)
    if vis_pts.shape[0] >= 1:
        centers = np.floor(vis_pts + 0.5).astype(np.int64)
        _paint_discs(px, centers, style.dot_radius_px, style.dot_color)
    if hint:
        _paint_text(px, 4, 4, hint, style.text_color)
    return out


def _circle_points(center: np.ndarray, radius: float, z: float, n: int = 16) -> np.ndarray:
    ang = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return np.stack([center[0] + radius * np.cos(ang),
                     center[1] + radius * np.sin(ang),
                     np.full(n, z)], axis=1)


def render_scene(state: sim.SimState, board: sim.PegBoard,
                 rig: geo.StereoRig) -> tuple[FrameBuffer, FrameBuffer]:
    """Painter's-algorithm raster of the board, pegs, block, and tool tip for
    each eye. Pure function of its inputs."""
    k = rig.intrinsics
    frames = []
    for pose in (rig.left_pose, rig.right_pose()):
        fb = FrameBuffer.create(k.width, k.height)
        px = fb.pixels

        ext = np.abs(board.peg_positions[:, :2]).max(axis=0) + 0.015
        corners = np.array([[-ext[0], -ext[1], board.board_z],
                            [ext[0], -ext[1], board.board_z],
                            [ext[0], ext[1], board.board_z],
                            [-ext[0], ext[1], board.board_z]])
        uv, z = geo.project_points(k, pose, corners)
        if np.all(z > 0):
            _paint_polygon(px, uv, BOARD_COLOR)

        # pegs and block sorted far to near by camera depth
        items = []
        for i, p in enumerate(board.peg_positions):
            depth = geo.transform_point(pose, p)[2]
            items.append((depth, "peg", p))
        items.append((geo.transform_point(pose, state.block_pos)[2], "block", state.block_pos))
        items.sort(key=lambda it: -it[0])

        for _, kind, p in items:
            if kind == "peg":
                bottom = _circle_points(p, board.peg_radius, board.board_z)
                top = _circle_points(p, board.peg_radius, p[2])
                uv, z = geo.project_points(k, pose, np.concatenate([bottom, top]))
                if np.any(z <= 0):
                    continue
                _paint_polygon(px, _convex_hull(uv), PEG_SIDE_COLOR)
                _paint_polygon(px, uv[len(bottom):], PEG_TOP_COLOR)
            else:
                s = sim.BLOCK_HALF
                corners = p + np.array([[sx, sy, sz] for sx in (-s, s)
                                        for sy in (-s, s) for sz in (-s, s)])
                uv, z = geo.project_points(k, pose, corners)
                if np.any(z <= 0):
                    continue
                _paint_polygon(px, _convex_hull(uv), BLOCK_COLOR)

        tip_uv, tip_z = geo.project_points(k, pose, state.tool_tip.reshape(1, 3))
        if tip_z[0] > 0:
            color = TIP_OPEN_COLOR if state.jaw_open else TIP_CLOSED_COLOR
            u, v = tip_uv[0]
            _paint_segments(px, np.array([[u - 8, v], [u, v - 8]]),
                            np.array([[u + 8, v], [u, v + 8]]), color)
            _paint_discs(px, np.floor(tip_uv + 0.5).astype(np.int64), 2, color)
        frames.append(fb)
    return frames[0], frames[1]


def compose_guidance(state: sim.SimState, goal: sim.Goal, policy,
                     rig: geo.StereoRig, style: OverlayStyle,
                     board: sim.PegBoard, ep_cfg: sim.EpisodeConfig,
                     guidance_on: bool = True) -> tuple[FrameBuffer, FrameBuffer]:
    """Scene + (optionally) the projected guidance plan for both eyes."""
    from .agent import rollout_trajectory  # local import breaks the module cycle

    left, right = render_scene(state, board, rig)
    if not guidance_on:
        return left, right
    plan = densify_plan(rollout_trajectory(policy, state, goal, ep_cfg))
    pl, pr, vis = project_trajectory(plan, rig)
    hint = plan.label
    return (render_overlay(left, pl, vis, style, hint),
            render_overlay(right, pr, vis, style, hint))


# --- export ------------------------------------------------------------------

def write_ppm(frame: FrameBuffer) -> bytes:
    """Binary PPM (P6): RGB without the alpha channel."""
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode()
    return header + frame.pixels[:, :, :3].tobytes()


def frame_to_base64_ppm(frame: FrameBuffer) -> str:
    return base64.b64encode(write_ppm(frame)).decode("ascii")


# --- latency benchmark -------------------------------------------------------

def bench_overlay_latency(point_counts: list[int], repeats: int, seed: int,
                          rig: geo.StereoRig | None = None,
                          style: OverlayStyle | None = None,
                          warmup: int = 5) -> LatencyReport:
    """Time the full stereo project+render path on seeded random world points.

    The first min(warmup, repeats - 1) iterations of each batch are discarded
    as warm-up; the monotonic clock times each remaining iteration.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rig = rig or default_rig()
    style = style or OverlayStyle()
    rng = np.random.default_rng(seed)
    base = render_scene(sim.SimState(sim.HOME_TIP.copy(), 0.0, True,
                                     np.array([0.0, 0.0, 0.02]), False, 0, 0, 1),
                        sim.PegBoard.default(), rig)[0]
    report = LatencyReport()
    for n in point_counts:
        pts = rng.uniform([-0.05, -0.05, 0.0], [0.05, 0.05, 0.05], (n, 3))
        plan = TrajectoryPlan(pts, np.ones(n, dtype=bool), "BENCH")
        skip = min(warmup, repeats - 1)
        samples = []
        for it in range(repeats + skip):
            t0 = time.perf_counter()
            pl, pr, vis = project_trajectory(plan, rig)
            render_overlay(base, pl, vis, style, plan.label)
            render_overlay(base, pr, vis, style, plan.label)
            dt = (time.perf_counter() - t0) * 1e3
            if it >= skip:
                samples.append(dt)
        report.rows.append({"n_points": n,
                            "mean_ms": float(np.mean(samples)),
                            "std_ms": float(np.std(samples)),
                            "repeats": repeats})
    return report


def default_rig() -> geo.StereoRig:
    """Endoscope stand-in: 25 deg tilt, 0.28 m from the board, 5 mm baseline."""
    pose = geo.look_at_pose([0.0, -0.12, 0.26], [0.0, 0.0, 0.01])
    return geo.StereoRig(geo.CameraIntrinsics(800.0, 800.0, 320.0, 240.0), pose, 0.005)
