"""Deterministic kinematic peg-transfer simulation.

A single tool tip moves by clamped per-step deltas inside a 10 cm workspace
cube over a 12-peg board. Closing the jaw within grasp range picks the block
up (the block then tracks the tip exactly); opening drops it vertically, onto
a peg top when horizontally within the goal tolerance, else onto the board.
Carrying the block through a non-source/non-goal peg below peg-top height
knocks it loose. Reward is sparse: 0 on success (block placed within 0.5 cm
of the goal peg top), -1 otherwise. Episodes run at most 50 steps.

All randomness comes from the reset seed; stepping is a pure function, so a
(seed, action sequence) pair reproduces a trajectory bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import MalformedFile

BLOCK_HALF = 0.008      # half-extent of the carried block, meters
GRASP_RADIUS = 0.005    # tip-to-block distance that allows a grasp
MAX_POS_DELTA = 0.005   # per-axis position clamp, meters/step
MAX_YAW_DELTA = np.deg2rad(15.0)
HOME_TIP = np.array([0.0, 0.0, 0.05])
OBS_SIZE = 11

_SAFE_CLEAR = 0.012     # extra clearance above peg tops for the scripted carry


class EpisodeFinished(RuntimeError):
    """step() called on a state that already terminated."""


@dataclass(frozen=True)
class PegBoard:
    """12 peg top-center points (world frame) plus cylinder dimensions."""

    peg_positions: np.ndarray
    peg_radius: float = 0.0025
    peg_height: float = 0.02
    board_z: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.peg_positions, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] != 12:
            raise ValueError(f"peg board needs exactly 12 pegs, got {pts.shape[0]}")
        object.__setattr__(self, "peg_positions", pts)

    @staticmethod
    def default() -> "PegBoard":
        """4x3 grid, 2 cm spacing, centered on the origin, tops at z = 2 cm."""
        pts = np.array([[x, y, 0.02]
                        for y in (-0.02, 0.0, 0.02)
                        for x in (-0.03, -0.01, 0.01, 0.03)])
        return PegBoard(pts)


@dataclass(frozen=True)
class Action:
    """Per-step command: position deltas (m), yaw/pitch deltas (rad), jaw j.

    j >= 0 commands the jaw open, j < 0 closed. d_pitch exists for the full
    6-DOF interface but stays 0 in the top-down peg-transfer configuration.
    """

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    d_yaw: float = 0.0
    d_pitch: float = 0.0
    j: float = 1.0

    def clamped(self) -> "Action":
        c = lambda v, m: float(np.clip(v, -m, m))
        return Action(c(self.dx, MAX_POS_DELTA), c(self.dy, MAX_POS_DELTA),
                      c(self.dz, MAX_POS_DELTA), c(self.d_yaw, MAX_YAW_DELTA),
                      0.0, float(np.clip(self.j, -1.0, 1.0)))

    def as_vector(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.d_yaw, self.d_pitch, self.j])

    @staticmethod
    def from_vector(v) -> "Action":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return Action(*v)


@dataclass
class SimState:
    tool_tip: np.ndarray
    tool_yaw: float
    jaw_open: bool
    block_pos: np.ndarray
    carried: bool
    timestep: int
    source_peg: int
    goal_peg: int

    def copy(self) -> "SimState":
        return SimState(self.tool_tip.copy(), self.tool_yaw, self.jaw_open,
                        self.block_pos.copy(), self.carried, self.timestep,
                        self.source_peg, self.goal_peg)


@dataclass(frozen=True)
class Goal:
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 50
    goal_tolerance: float = 0.005
    workspace_min: np.ndarray = field(default_factory=lambda: np.array([-0.05, -0.05, 0.0]))
    workspace_max: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.05, 0.10]))
    range_mode: str = "any"  # "short" | "long" | "any"
    board: PegBoard = field(default_factory=PegBoard.default)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.goal_tolerance <= 0:
            raise ValueError("goal_tolerance must be positive")
        if self.range_mode not in ("short", "long", "any"):
            raise ValueError(f"unknown range_mode {self.range_mode!r}")
        object.__setattr__(self, "workspace_min", np.asarray(self.workspace_min, dtype=np.float64))
        object.__setattr__(self, "workspace_max", np.asarray(self.workspace_max, dtype=np.float64))


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: Action
    reward: float
    next_obs: np.ndarray
    achieved_goal: np.ndarray
    desired_goal: np.ndarray
    done: bool
    is_success: bool


@dataclass
class Episode:
    seed: int
    transitions: list[Transition]

    @property
    def success(self) -> bool:
        return bool(self.transitions) and self.transitions[-1].is_success


def observe(state: SimState) -> np.ndarray:
    """11-vector: tip (3), jaw open flag (1), block (3), block - tip (3), carried (1)."""
    return np.concatenate([
        state.tool_tip,
        [1.0 if state.jaw_open else 0.0],
        state.block_pos,
        state.block_pos - state.tool_tip,
        [1.0 if state.carried else 0.0],
    ])


def is_success(achieved, goal: Goal, cfg: EpisodeConfig, carried: bool = False) -> bool:
    """Placed within tolerance of the goal peg top. A block still held at the
    goal does not count: placing is a distinct phase from carrying."""
    if carried:
        return False
    d = np.linalg.norm(np.asarray(achieved, dtype=np.float64) - goal.position)
    return bool(d <= cfg.goal_tolerance)


def compute_reward(achieved, goal_position, carried: bool, cfg: EpisodeConfig) -> float:
    """Sparse reward used both live and for hindsight relabeling."""
    return 0.0 if is_success(achieved, Goal(goal_position), cfg, carried) else -1.0


def classify_range(board: PegBoard, source: int, goal: int) -> str:
    """'long' when the straight board-plane path passes within one block
    clearance of any other peg axis, else 'short'."""
    if source == goal:
        raise ValueError("source and goal pegs must differ")
    clearance = board.peg_radius + BLOCK_HALF
    a = board.peg_positions[source, :2]
    b = board.peg_positions[goal, :2]
    ab = b - a
    denom = float(ab @ ab)
    for i, p in enumerate(board.peg_positions[:, :2]):
        if i in (source, goal):
            continue
        t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        if np.linalg.norm(a + t * ab - p) < clearance:
            return "long"
    return "short"


def goal_of(state: SimState, cfg: EpisodeConfig) -> Goal:
    return Goal(cfg.board.peg_positions[state.goal_peg])


def reset(cfg: EpisodeConfig, seed: int) -> tuple[SimState, Goal]:
    """Sample a (source, goal) peg pair matching cfg.range_mode; the block
    starts placed on the source peg and the tip at the home pose."""
    rng = np.random.default_rng(seed)
    while True:
        source, goal = (int(x) for x in rng.choice(len(cfg.board.peg_positions), 2, replace=False))
        if cfg.range_mode == "any" or classify_range(cfg.board, source, goal) == cfg.range_mode:
            break
    state = SimState(
        tool_tip=HOME_TIP.copy(),
        tool_yaw=0.0,
        jaw_open=True,
        block_pos=cfg.board.peg_positions[source].copy(),
        carried=False,
        timestep=0,
        source_peg=source,
        goal_peg=goal,
    )
    return state, goal_of(state, cfg)


def _tip_in_workspace(tip: np.ndarray, cfg: EpisodeConfig) -> bool:
    return bool(np.all(tip >= cfg.workspace_min) and np.all(tip <= cfg.workspace_max))


def episode_over(state: SimState, cfg: EpisodeConfig) -> bool:
    if state.timestep >= cfg.horizon:
        return True
    if not _tip_in_workspace(state.tool_tip, cfg):
        return True
    return is_success(state.block_pos, goal_of(state, cfg), cfg, state.carried)


def _drop_block(block: np.ndarray, board: PegBoard, tol: float) -> np.ndarray:
    """Vertical drop: x, y keep their values; z lands on a peg top when the
    block is horizontally within tol of one, else on the board surface."""
    dropped = block.copy()
    d = np.linalg.norm(board.peg_positions[:, :2] - block[:2], axis=1)
    nearest = int(np.argmin(d))
    if d[nearest] <= tol:
        dropped[2] = board.peg_positions[nearest, 2]
    else:
        dropped[2] = board.board_z + BLOCK_HALF
    return dropped


def step(state: SimState, action: Action, cfg: EpisodeConfig) -> tuple[SimState, Transition]:
    """Advance one timestep. Raises EpisodeFinished past a terminal state."""
    if episode_over(state, cfg):
        raise EpisodeFinished(f"episode already terminal at t={state.timestep}")
    board = cfg.board
    goal = goal_of(state, cfg)
    obs = observe(state)
    a = action.clamped()

    tip = np.clip(state.tool_tip + [a.dx, a.dy, a.dz], cfg.workspace_min, cfg.workspace_max)
    yaw = float((state.tool_yaw + a.d_yaw + np.pi) % (2 * np.pi) - np.pi)
    carried = state.carried
    block = tip.copy() if carried else state.block_pos.copy()
    jaw_open = state.jaw_open

    want_open = a.j >= 0
    if want_open and not jaw_open:
        jaw_open = True
        if carried:
            carried = False
            block = _drop_block(block, board, cfg.goal_tolerance)
    elif not want_open and jaw_open:
        jaw_open = False
        if not carried and np.linalg.norm(tip - block) <= GRASP_RADIUS:
            carried = True
            block = tip.copy()

    if carried:
        clearance = board.peg_radius + BLOCK_HALF
        block_bottom = block[2] - BLOCK_HALF
        for i, p in enumerate(board.peg_positions):
            if i in (state.source_peg, state.goal_peg):
                continue
            if block_bottom < p[2] and np.linalg.norm(block[:2] - p[:2]) < clearance:
                carried = False
                block = _drop_block(block, board, cfg.goal_tolerance)
                break

    nxt = SimState(tool_tip=tip, tool_yaw=yaw, jaw_open=jaw_open, block_pos=block,
                   carried=carried, timestep=state.timestep + 1,
                   source_peg=state.source_peg, goal_peg=state.goal_peg)
    success = is_success(block, goal, cfg, carried)
    done = success or nxt.timestep >= cfg.horizon or not _tip_in_workspace(tip, cfg)
    tr = Transition(obs=obs, action=a, reward=0.0 if success else -1.0,
                    next_obs=observe(nxt), achieved_goal=block.copy(),
                    desired_goal=goal.position.copy(), done=done, is_success=success)
    return nxt, tr


# --- scripted demonstration policy -----------------------------------------

def _move_toward(tip: np.ndarray, target: np.ndarray, j: float) -> Action:
    d = np.clip(target - tip, -MAX_POS_DELTA, MAX_POS_DELTA)
    return Action(float(d[0]), float(d[1]), float(d[2]), 0.0, 0.0, j)


def scripted_policy(state: SimState, goal: Goal, cfg: EpisodeConfig) -> Action:
    """Finite-state demonstration controller.

    Approach above the block, descend, close the jaw, lift to a height that
    clears every peg by a block half-extent plus margin, translate over the
    goal peg, descend, and release. Stateless: the phase is derived from the
    simulation state each call.
    """
    board = cfg.board
    tip = state.tool_tip
    block = state.block_pos
    safe_tip_z = float(board.peg_positions[:, 2].max()) + BLOCK_HALF + _SAFE_CLEAR

    if is_success(block, goal, cfg, state.carried):
        return Action(0, 0, 0, 0, 0, 1.0 if state.jaw_open else -1.0)

    if not state.carried:
        horiz = np.linalg.norm(tip[:2] - block[:2])
        if horiz > 0.002:
            # travel at safe height until above the block
            return _move_toward(tip, np.array([block[0], block[1], max(safe_tip_z, tip[2])]), 1.0)
        if np.linalg.norm(tip - block) > 0.003:
            return _move_toward(tip, block, 1.0)  # descend onto the block center
        return Action(0, 0, 0, 0, 0, -1.0)        # close jaw: grasp

    # carrying: lift, translate, descend, release
    gp = goal.position
    horiz = np.linalg.norm(tip[:2] - gp[:2])
    if horiz > 0.001:
        if tip[2] < safe_tip_z - 1e-9:
            return _move_toward(tip, np.array([tip[0], tip[1], safe_tip_z]), -1.0)
        return _move_toward(tip, np.array([gp[0], gp[1], safe_tip_z]), -1.0)
    if abs(tip[2] - gp[2]) > 0.002:
        return _move_toward(tip, np.array([gp[0], gp[1], gp[2]]), -1.0)
    return Action(0, 0, 0, 0, 0, 1.0)             # open jaw: place


PolicyFn = Callable[[SimState, Goal], Action]


def rollout(policy: PolicyFn, state: SimState, goal: Goal,
            cfg: EpisodeConfig, seed: int = 0) -> Episode:
    """Run a policy to termination from `state`, recording transitions."""
    transitions = []
    state = state.copy()
    while not episode_over(state, cfg):
        state, tr = step(state, policy(state, goal), cfg)
        transitions.append(tr)
    return Episode(seed=seed, transitions=transitions)


def generate_demonstrations(n: int, cfg: EpisodeConfig, seed: int) -> list[Episode]:
    """n successful scripted episodes; failed rollouts are resampled and excluded."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    episodes = []
    while len(episodes) < n:
        ep_seed = int(rng.integers(0, 2 ** 31))
        state, goal = reset(cfg, ep_seed)
        ep = rollout(lambda s, g: scripted_policy(s, g, cfg), state, goal, cfg, seed=ep_seed)
        if ep.success:
            episodes.append(ep)
    return episodes


# --- episode log format ------------------------------------------------------
# Line-delimited JSON. The first line is a header carrying the config and the
# master seed; every following line is one transition tagged with its episode
# index. Numeric fields use repr round-trip floats, so identical inputs give
# byte-identical files.

def _config_json(cfg: EpisodeConfig) -> dict:
    return {
        "horizon": cfg.horizon,
        "goal_tolerance": cfg.goal_tolerance,
        "workspace_min": list(cfg.workspace_min),
        "workspace_max": list(cfg.workspace_max),
        "range_mode": cfg.range_mode,
        "board": {
            "peg_positions": [list(p) for p in cfg.board.peg_positions],
            "peg_radius": cfg.board.peg_radius,
            "peg_height": cfg.board.peg_height,
            "board_z": cfg.board.board_z,
        },
    }


def config_from_json(d: dict) -> EpisodeConfig:
    board = d.get("board", {})
    return EpisodeConfig(
        horizon=d.get("horizon", 50),
        goal_tolerance=d.get("goal_tolerance", 0.005),
        workspace_min=np.array(d.get("workspace_min", [-0.05, -0.05, 0.0])),
        workspace_max=np.array(d.get("workspace_max", [0.05, 0.05, 0.10])),
        range_mode=d.get("range_mode", "any"),
        board=PegBoard(np.array(board["peg_positions"]),
                       peg_radius=board.get("peg_radius", 0.0025),
                       peg_height=board.get("peg_height", 0.02),
                       board_z=board.get("board_z", 0.0))
        if board else PegBoard.default(),
    )


def save_episodes(path, episodes: list[Episode], cfg: EpisodeConfig, seed: int) -> None:
    with open(path, "w") as f:
        header = {"format": "pegmentor-episodes", "version": 1, "seed": seed,
                  "n_episodes": len(episodes), "config": _config_json(cfg)}
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for i, ep in enumerate(episodes):
            for tr in ep.transitions:
                rec = {
                    "episode": i,
                    "obs": list(tr.obs),
                    "action": list(tr.action.as_vector()),
                    "reward": tr.reward,
                    "next_obs": list(tr.next_obs),
                    "achieved_goal": list(tr.achieved_goal),
                    "desired_goal": list(tr.desired_goal),
                    "done": tr.done,
                    "is_success": tr.is_success,
                }
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_episodes(path) -> tuple[list[Episode], EpisodeConfig, int]:
    episodes: list[Episode] = []
    with open(path) as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line)
            if header.get("format") != "pegmentor-episodes":
                raise ValueError("missing format marker")
            cfg = config_from_json(header["config"])
            seed = int(header["seed"])
        except (ValueError, KeyError, TypeError) as e:
            raise MalformedFile(f"{path}: bad header line: {e}") from e
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                idx = int(rec["episode"])
                tr = Transition(
                    obs=np.array(rec["obs"], dtype=np.float64),
                    action=Action.from_vector(rec["action"]),
                    reward=float(rec["reward"]),
                    next_obs=np.array(rec["next_obs"], dtype=np.float64),
                    achieved_goal=np.array(rec["achieved_goal"], dtype=np.float64),
                    desired_goal=np.array(rec["desired_goal"], dtype=np.float64),
                    done=bool(rec["done"]),
                    is_success=bool(rec["is_success"]),
                )
                if tr.obs.shape != (OBS_SIZE,) or tr.next_obs.shape != (OBS_SIZE,):
                    raise ValueError("bad observation size")
            except (ValueError, KeyError, TypeError) as e:
                raise MalformedFile(f"{path}: line {lineno}: {e}") from e
            while len(episodes) <= idx:
                episodes.append(Episode(seed=seed, transitions=[]))
            episodes[idx].transitions.append(tr)
    return episodes, cfg, seed
