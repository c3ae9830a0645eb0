"""Session orchestration: owns the simulator, calibration state, and policy,
and turns validated protocol messages into state changes and outbound frames.

One session per client. The scene is rendered through the session's true
camera rig (the synthetic endoscope), while guidance overlays project through
the pose recovered from the user's calibration clicks, exactly as the live
system would. Clicks pair with the 12 peg-top landmarks in row-major board
order (the written order of PegBoard.peg_positions).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import agent, checkpoint, config as config_mod, geometry as geo
from . import overlay, pnp, sim
from .errors import MalformedFile

CALIBRATING = "calibrating"
TRAINING = "training"
REPLAY = "replay"
MODES = (CALIBRATING, TRAINING, REPLAY)


class WrongMode(RuntimeError):
    """Operation not available in the session's current mode."""


class TooManyClicks(RuntimeError):
    """All landmarks already have clicks."""


@dataclass
class StepResult:
    reward: float
    done: bool
    is_success: bool
    deviation_m: float | None


@dataclass
class CalibrationProgress:
    n_clicks: int
    solved: bool
    rms_error_px: float | None = None
    warning: str | None = None


@dataclass
class Session:
    id: str
    cfg: config_mod.AppConfig
    mode: str = CALIBRATING
    state: sim.SimState = None
    goal: sim.Goal = None
    pending_clicks: list[pnp.Correspondence] = field(default_factory=list)
    calibration: pnp.PnpResult | None = None
    policy: object | None = None       # ActorCritic or (state, goal) -> Action
    guidance_on: bool = False
    plan: overlay.TrajectoryPlan | None = None
    episode_log: list[sim.Transition] = field(default_factory=list)
    episode_seed: int = 0
    tick_count: int = 0
    done: bool = False

    def __post_init__(self):
        if self.state is None:
            self.reset_episode(seed=0)

    # -- episode control ------------------------------------------------------

    def reset_episode(self, seed: int, range_mode: str | None = None) -> None:
        ep_cfg = self.cfg.episode
        if range_mode is not None:
            ep_cfg = dataclasses.replace(ep_cfg, range_mode=range_mode)
            self.cfg.episode = ep_cfg
        self.state, self.goal = sim.reset(ep_cfg, seed)
        self.episode_seed = seed
        self.episode_log = []
        self.done = False
        self._refresh_plan()

    def _refresh_plan(self) -> None:
        if self.policy is not None:
            self.plan = agent.rollout_trajectory(self.policy, self.state, self.goal,
                                                 self.cfg.episode)
        else:
            self.plan = None

    # -- operations ------------------------------------------------------------

    def landmarks(self) -> np.ndarray:
        return self.cfg.board.peg_positions

    def handle_click(self, pixel: geo.Pixel) -> CalibrationProgress:
        if self.mode != CALIBRATING:
            raise WrongMode(f"clicks only register in calibrating mode, not {self.mode}")
        marks = self.landmarks()
        if len(self.pending_clicks) >= len(marks):
            raise TooManyClicks(f"all {len(marks)} landmarks clicked")
        world = marks[len(self.pending_clicks)]
        self.pending_clicks.append(pnp.Correspondence(world, pixel))
        if len(self.pending_clicks) == len(marks):
            return self.solve_calibration()
        return CalibrationProgress(n_clicks=len(self.pending_clicks), solved=False)

    def solve_calibration(self) -> CalibrationProgress:
        n = len(self.pending_clicks)
        result = pnp.solve_pnp(self.cfg.rig.intrinsics, self.pending_clicks)
        self.calibration = result
        return CalibrationProgress(n_clicks=n, solved=True,
                                   rms_error_px=result.rms_error_px,
                                   warning=result.warning)

    def calibrated_rig(self) -> geo.StereoRig | None:
        if self.calibration is None:
            return None
        return geo.StereoRig(self.cfg.rig.intrinsics, self.calibration.pose,
                             self.cfg.rig.baseline)

    def deviation_m(self) -> float | None:
        if self.plan is None:
            return None
        return point_to_polyline(self.state.tool_tip, self.plan.waypoints)

    def handle_teleop(self, action: sim.Action) -> StepResult:
        if self.mode != TRAINING:
            raise WrongMode(f"teleop only works in training mode, not {self.mode}")
        if self.done:
            raise sim.EpisodeFinished("episode is over; reset to continue")
        self.state, tr = sim.step(self.state, action, self.cfg.episode)
        self.episode_log.append(tr)
        self.done = tr.done
        return StepResult(reward=tr.reward, done=tr.done, is_success=tr.is_success,
                          deviation_m=self.deviation_m())

    def guidance_active(self) -> bool:
        return (self.guidance_on and self.calibration is not None
                and self.policy is not None and self.plan is not None)

    def tick(self) -> list[dict]:
        """Render the current stereo view and return the frame messages."""
        if self.mode == REPLAY and self.policy is not None and not self.done:
            fn = agent.policy_fn(self.policy, self.cfg.episode)
            try:
                self.state, tr = sim.step(self.state, fn(self.state, self.goal),
                                          self.cfg.episode)
                self.episode_log.append(tr)
                self.done = tr.done
            except sim.EpisodeFinished:
                self.done = True

        left, right = overlay.render_scene(self.state, self.cfg.board, self.cfg.rig)
        if self.mode == CALIBRATING and self.pending_clicks:
            style = overlay.OverlayStyle(dot_color=(230, 40, 40, 255))
            pixels = [c.pixel for c in self.pending_clicks]
            left = overlay.render_overlay(left, pixels, [True] * len(pixels), style,
                                          f"{len(pixels)}/{len(self.landmarks())} CLICKS")
            for i, p in enumerate(pixels):
                overlay._paint_text(left.pixels, int(p.u) + 4, int(p.v) - 8,
                                    str(i), (255, 255, 255, 255))
        elif self.guidance_active():
            rig = self.calibrated_rig()
            dense = overlay.densify_plan(self.plan)
            pl, pr, vis = overlay.project_trajectory(dense, rig)
            style = overlay.OverlayStyle()
            left = overlay.render_overlay(left, pl, vis, style, dense.label)
            right = overlay.render_overlay(right, pr, vis, style, dense.label)

        self.tick_count += 1
        return [
            {"type": "frame", "eye": "left", "tick": self.tick_count,
             "encoding": "ppm-base64", "data": overlay.frame_to_base64_ppm(left)},
            {"type": "frame", "eye": "right", "tick": self.tick_count,
             "encoding": "ppm-base64", "data": overlay.frame_to_base64_ppm(right)},
        ]

    def state_message(self) -> dict:
        return {
            "type": "state",
            "mode": self.mode,
            "guidance_on": self.guidance_on,
            "n_clicks": len(self.pending_clicks),
            "calibrated": self.calibration is not None,
            "policy_loaded": self.policy is not None,
            "width": self.cfg.rig.intrinsics.width,
            "height": self.cfg.rig.intrinsics.height,
            "timestep": self.state.timestep,
            "done": self.done,
            "range_mode": self.cfg.episode.range_mode,
            "episode_seed": self.episode_seed,
        }


def point_to_polyline(p: np.ndarray, waypoints: np.ndarray) -> float:
    """Minimum distance from a point to the polyline through the waypoints."""
    if waypoints.shape[0] == 1:
        return float(np.linalg.norm(p - waypoints[0]))
    a = waypoints[:-1]
    b = waypoints[1:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-30)
    t = np.clip(((p - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.linalg.norm(closest - p, axis=1).min())


# --- protocol validation -------------------------------------------------------

_SCHEMAS = {
    "click": {"u": (int, float), "v": (int, float)},
    "solve_calibration": {},
    "teleop": {"dx": (int, float), "dy": (int, float), "dz": (int, float),
               "dyaw": (int, float), "j": (int, float)},
    "set_mode": {"mode": (str,)},
    "toggle_guidance": {"on": (bool,)},
    "reset": {},  # optional: range_mode, seed
}

_OPTIONAL = {
    "reset": {"range_mode": (str,), "seed": (int,)},
    "teleop": {"dpitch": (int, float)},
}


def validate_message(msg) -> tuple[str | None, str | None]:
    """Returns (error_code, detail); (None, None) when the message is valid."""
    if not isinstance(msg, dict):
        return "bad_message", "message must be a JSON object"
    mtype = msg.get("type")
    if mtype not in _SCHEMAS:
        return "unknown_type", f"unknown message type {mtype!r}"
    for name, types in _SCHEMAS[mtype].items():
        if name not in msg:
            return "missing_field", f"{mtype!r} message requires field {name!r}"
        wrong_type = not isinstance(msg[name], types)
        bool_as_number = isinstance(msg[name], bool) and bool not in types
        if wrong_type or bool_as_number:
            return "bad_field", f"field {name!r} has the wrong type"
    allowed = set(_SCHEMAS[mtype]) | set(_OPTIONAL.get(mtype, {})) | {"type"}
    extra = set(msg) - allowed
    if extra:
        return "bad_field", f"unexpected fields {sorted(extra)}"
    return None, None


def _error(code: str, detail: str) -> dict:
    return {"type": "error", "code": code, "detail": detail}


class MentorService:
    """Multiplexes sessions and maps protocol messages onto session operations."""

    def __init__(self, cfg: config_mod.AppConfig | None = None, policy=None):
        self.cfg = cfg or config_mod.AppConfig()
        self.default_policy = policy
        self.sessions: dict[str, Session] = {}
        self._next_id = 0

    def create_session(self) -> Session:
        sid = f"s{self._next_id}"
        self._next_id += 1
        session_cfg = dataclasses.replace(self.cfg)
        s = Session(id=sid, cfg=session_cfg, policy=self.default_policy)
        self.sessions[sid] = s
        return s

    def close_session(self, session: Session) -> None:
        self.sessions.pop(session.id, None)

    def handle_message(self, session: Session, msg) -> list[dict]:
        code, detail = validate_message(msg)
        if code:
            return [_error(code, detail)]
        mtype = msg["type"]
        try:
            if mtype == "click":
                progress = session.handle_click(geo.Pixel(float(msg["u"]), float(msg["v"])))
                return [_calibration_msg(progress)]
            if mtype == "solve_calibration":
                return [_calibration_msg(session.solve_calibration())]
            if mtype == "teleop":
                action = sim.Action(dx=msg["dx"], dy=msg["dy"], dz=msg["dz"],
                                    d_yaw=msg["dyaw"], d_pitch=msg.get("dpitch", 0.0),
                                    j=msg["j"])
                r = session.handle_teleop(action)
                return [{"type": "step", "reward": r.reward, "done": r.done,
                         "is_success": r.is_success, "deviation_m": r.deviation_m}]
            if mtype == "set_mode":
                if msg["mode"] not in MODES:
                    return [_error("bad_field", f"unknown mode {msg['mode']!r}")]
                session.mode = msg["mode"]
                if session.mode in (TRAINING, REPLAY) and session.plan is None:
                    session._refresh_plan()
                return [session.state_message()]
            if mtype == "toggle_guidance":
                if msg["on"] and (session.calibration is None or session.policy is None):
                    return [_error("guidance_unavailable",
                                   "guidance needs a calibration and a loaded policy")]
                session.guidance_on = msg["on"]
                return [session.state_message()]
            if mtype == "reset":
                seed = msg.get("seed", session.episode_seed + 1)
                session.reset_episode(int(seed), msg.get("range_mode"))
                return [session.state_message()]
        except WrongMode as e:
            return [_error("wrong_mode", str(e))]
        except TooManyClicks as e:
            return [_error("too_many_clicks", str(e))]
        except sim.EpisodeFinished as e:
            return [_error("episode_finished", str(e))]
        except pnp.TooFewPoints as e:
            return [_error("too_few_points", str(e))]
        except pnp.DegenerateGeometry as e:
            return [_error("degenerate_geometry", str(e))]
        raise AssertionError(f"unhandled message type {mtype}")  # pragma: no cover


def _calibration_msg(p: CalibrationProgress) -> dict:
    out = {"type": "calibration", "n_clicks": p.n_clicks, "solved": p.solved}
    if p.solved:
        out["rms_error_px"] = p.rms_error_px
    if p.warning:
        out["warning"] = p.warning
    return out


# --- persistence ----------------------------------------------------------------

def save_calibration(path, result: pnp.PnpResult, intrinsics: geo.CameraIntrinsics,
                     corrs: list[pnp.Correspondence]) -> None:
    data = {
        "intrinsics": {"fx": intrinsics.fx, "fy": intrinsics.fy,
                       "cx": intrinsics.cx, "cy": intrinsics.cy,
                       "width": intrinsics.width, "height": intrinsics.height},
        "pose": {"quaternion_wxyz": list(result.pose.rotation.q),
                 "translation": list(result.pose.translation)},
        "rms_error_px": result.rms_error_px,
        "per_point_error_px": result.per_point_error_px,
        "converged": result.converged,
        "correspondences": [{"world": list(c.world), "pixel": [c.pixel.u, c.pixel.v]}
                            for c in corrs],
    }
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def load_calibration(path):
    try:
        with open(path) as f:
            d = json.load(f)
        intr = d["intrinsics"]
        intrinsics = geo.CameraIntrinsics(fx=intr["fx"], fy=intr["fy"], cx=intr["cx"],
                                          cy=intr["cy"], width=int(intr["width"]),
                                          height=int(intr["height"]))
        pose = geo.RigidTransform(geo.Rotation(np.array(d["pose"]["quaternion_wxyz"])),
                                  np.array(d["pose"]["translation"]),
                                  geo.WORLD, geo.CAMERA_LEFT)
        corrs = [pnp.Correspondence(np.array(c["world"]),
                                    geo.Pixel(c["pixel"][0], c["pixel"][1]))
                 for c in d["correspondences"]]
        result = pnp.PnpResult(pose=pose, rms_error_px=float(d["rms_error_px"]),
                               per_point_error_px=[float(x) for x in d["per_point_error_px"]],
                               iterations=0, converged=bool(d["converged"]))
        return result, intrinsics, corrs
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        field_name = e.args[0] if isinstance(e, KeyError) else str(e)
        raise MalformedFile(f"{path}: bad calibration field: {field_name}") from e


def save_state(session: Session, directory) -> None:
    """Persist calibration, the episode log so far, and the policy checkpoint."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if session.calibration is not None:
        save_calibration(directory / "calibration.json", session.calibration,
                         session.cfg.rig.intrinsics, session.pending_clicks)
    ep = sim.Episode(seed=session.episode_seed, transitions=session.episode_log)
    sim.save_episodes(directory / "episode.jsonl", [ep], session.cfg.episode,
                      session.episode_seed)
    if isinstance(session.policy, agent.ActorCritic):
        checkpoint.save_checkpoint(directory / "policy.pgm1", session.policy)


def load_state(directory) -> dict:
    """Load whatever session fragments exist in the directory."""
    directory = Path(directory)
    out: dict = {}
    cal = directory / "calibration.json"
    if cal.exists():
        out["calibration"], out["intrinsics"], out["correspondences"] = load_calibration(cal)
    ep = directory / "episode.jsonl"
    if ep.exists():
        episodes, ep_cfg, seed = sim.load_episodes(ep)
        out["episodes"] = episodes
        out["episode_config"] = ep_cfg
        out["episode_seed"] = seed
    ckpt = directory / "policy.pgm1"
    if ckpt.exists():
        out["policy"] = checkpoint.load_checkpoint(ckpt)
    return out
