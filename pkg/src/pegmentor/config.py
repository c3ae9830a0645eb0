"""Application configuration: board, stereo rig, episode, and training
sections in one JSON file, with dotted-path overrides for every field.

All linear dimensions are meters; the defaults already encode the task
constants (0.5 cm goal tolerance, 10 cm workspace cube, 640x480 frames).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import sim
from .agent import TrainConfig
from .errors import MalformedFile


@dataclass
class AppConfig:
    board: sim.PegBoard = field(default_factory=sim.PegBoard.default)
    episode: sim.EpisodeConfig = field(default_factory=sim.EpisodeConfig)
    rig: geo.StereoRig = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.rig is None:
            from .overlay import default_rig
            self.rig = default_rig()
        if self.episode.board is not self.board:
            self.episode = dataclasses.replace(self.episode, board=self.board)


def _rig_to_json(rig: geo.StereoRig) -> dict:
    k = rig.intrinsics
    return {
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                       "width": k.width, "height": k.height},
        "left_pose": {
            "quaternion_wxyz": list(rig.left_pose.rotation.q),
            "translation": list(rig.left_pose.translation),
        },
        "baseline": rig.baseline,
    }


def rig_from_json(d: dict) -> geo.StereoRig:
    k = d["intrinsics"]
    intrinsics = geo.CameraIntrinsics(fx=k["fx"], fy=k["fy"], cx=k["cx"], cy=k["cy"],
                                      width=int(k.get("width", 640)),
                                      height=int(k.get("height", 480)))
    p = d["left_pose"]
    pose = geo.RigidTransform(geo.Rotation(np.array(p["quaternion_wxyz"])),
                              np.array(p["translation"]), geo.WORLD, geo.CAMERA_LEFT)
    return geo.StereoRig(intrinsics, pose, float(d["baseline"]))


def to_json(cfg: AppConfig) -> dict:
    ep = cfg.episode
    return {
        "board": {
            "peg_positions": [list(p) for p in cfg.board.peg_positions],
            "peg_radius": cfg.board.peg_radius,
            "peg_height": cfg.board.peg_height,
            "board_z": cfg.board.board_z,
        },
        "episode": {
            "horizon": ep.horizon,
            "goal_tolerance": ep.goal_tolerance,
            "workspace_min": list(ep.workspace_min),
            "workspace_max": list(ep.workspace_max),
            "range_mode": ep.range_mode,
        },
        "rig": _rig_to_json(cfg.rig),
        "train": dataclasses.asdict(cfg.train),
    }


def from_json(d: dict) -> AppConfig:
    try:
        board = sim.PegBoard(np.array(d["board"]["peg_positions"]),
                             peg_radius=d["board"].get("peg_radius", 0.0025),
                             peg_height=d["board"].get("peg_height", 0.02),
                             board_z=d["board"].get("board_z", 0.0)) \
            if "board" in d else sim.PegBoard.default()
        ep_d = dict(d.get("episode", {}))
        episode = sim.EpisodeConfig(
            horizon=int(ep_d.get("horizon", 50)),
            goal_tolerance=float(ep_d.get("goal_tolerance", 0.005)),
            workspace_min=np.array(ep_d.get("workspace_min", [-0.05, -0.05, 0.0])),
            workspace_max=np.array(ep_d.get("workspace_max", [0.05, 0.05, 0.10])),
            range_mode=ep_d.get("range_mode", "any"),
            board=board,
        )
        rig = rig_from_json(d["rig"]) if "rig" in d else None
        train = TrainConfig(**d.get("train", {}))
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFile(f"config: {e}") from e
    return AppConfig(board=board, episode=episode, rig=rig, train=train)


def load(path) -> AppConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedFile(f"{path}: {e}") from e
    return from_json(data)


def save(path, cfg: AppConfig) -> None:
    with open(path, "w") as f:
        json.dump(to_json(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def apply_overrides(cfg: AppConfig, overrides: list[str]) -> AppConfig:
    """Apply `section.field=value` strings (values parsed as JSON, falling
    back to raw strings) on top of a config."""
    data = to_json(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        keys = path.split(".")
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ValueError(f"unknown config section {path!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ValueError(f"unknown config field {path!r}")
        node[keys[-1]] = value
    return from_json(data)
