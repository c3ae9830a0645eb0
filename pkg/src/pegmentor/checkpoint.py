"""Policy checkpoint file format.

Layout: magic bytes "PGM1", a little-endian uint32 format version, then one
record per tensor: name length (uint32), UTF-8 name, rank (uint32), dims
(uint32 each), and the row-major float32 little-endian payload. Network
weights, target networks, and normalizer statistics all travel as tensors;
the fixed architecture (rectified hidden layers, saturating actor head,
linear critic head) is implied by the tensor names.
"""

from __future__ import annotations

import struct

import numpy as np

from . import agent, nets
from .errors import MalformedFile

MAGIC = b"PGM1"
VERSION = 1

_NET_NAMES = ("actor", "critic", "target_actor", "target_critic")
_NORM_NAMES = ("obs", "goal")


def _net_tensors(name: str, p: nets.MlpParams) -> dict[str, np.ndarray]:
    out = {}
    for i, layer in enumerate(p.layers):
        out[f"{name}/{i}/weights"] = layer.weights
        out[f"{name}/{i}/bias"] = layer.bias
    return out


def _norm_tensors(name: str, n: nets.RunningNorm) -> dict[str, np.ndarray]:
    return {
        f"norm/{name}/count": np.array([n.count]),
        f"norm/{name}/total": n.total,
        f"norm/{name}/total_sq": n.total_sq,
    }


def save_checkpoint(path, ac: agent.ActorCritic) -> None:
    tensors: dict[str, np.ndarray] = {}
    for net_name, net in zip(_NET_NAMES, (ac.actor, ac.critic, ac.target_actor, ac.target_critic)):
        tensors.update(_net_tensors(net_name, net))
    tensors.update(_norm_tensors("obs", ac.obs_norm))
    tensors.update(_norm_tensors("goal", ac.goal_norm))

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise MalformedFile(f"truncated checkpoint while reading {what}")
    return data


def load_tensors(path) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise MalformedFile(f"{path}: bad magic, not a policy checkpoint")
        version = struct.unpack("<I", _read_exact(f, 4, "version"))[0]
        if version != VERSION:
            raise MalformedFile(f"{path}: unsupported version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise MalformedFile("truncated checkpoint while reading name length")
            name_len = struct.unpack("<I", head)[0]
            if name_len > 4096:
                raise MalformedFile(f"implausible tensor name length {name_len}")
            name = _read_exact(f, name_len, "tensor name").decode("utf-8")
            rank = struct.unpack("<I", _read_exact(f, 4, f"{name} rank"))[0]
            if rank > 8:
                raise MalformedFile(f"{name}: implausible rank {rank}")
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"{name} dims"))
            count = int(np.prod(dims)) if dims else 1
            raw = _read_exact(f, 4 * count, f"{name} data")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)
    return tensors


def _net_from(tensors: dict[str, np.ndarray], name: str,
              activations: list[str]) -> nets.MlpParams:
    layers = []
    i = 0
    while f"{name}/{i}/weights" in tensors:
        layers.append(nets.Layer(tensors[f"{name}/{i}/weights"], tensors[f"{name}/{i}/bias"]))
        i += 1
    if not layers:
        raise MalformedFile(f"missing tensors for network {name!r}")
    if len(activations) != len(layers):
        raise MalformedFile(f"{name}: expected {len(activations)} layers, found {len(layers)}")
    return nets.MlpParams(layers, activations)


def _norm_from(tensors: dict[str, np.ndarray], name: str) -> nets.RunningNorm:
    try:
        count = tensors[f"norm/{name}/count"]
        total = tensors[f"norm/{name}/total"]
        total_sq = tensors[f"norm/{name}/total_sq"]
    except KeyError as e:
        raise MalformedFile(f"missing normalizer tensor {e.args[0]!r}") from e
    return nets.RunningNorm(size=total.shape[0], count=float(count[0]),
                            total=total, total_sq=total_sq)


def load_checkpoint(path) -> agent.ActorCritic:
    tensors = load_tensors(path)
    hidden_acts = ["relu", "relu"]
    try:
        actor = _net_from(tensors, "actor", hidden_acts + ["tanh"])
        critic = _net_from(tensors, "critic", hidden_acts + ["linear"])
        target_actor = _net_from(tensors, "target_actor", hidden_acts + ["tanh"])
        target_critic = _net_from(tensors, "target_critic", hidden_acts + ["linear"])
    except nets.ShapeMismatch as e:
        raise MalformedFile(f"{path}: inconsistent tensor shapes: {e}") from e
    return agent.ActorCritic(actor=actor, critic=critic,
                             target_actor=target_actor, target_critic=target_critic,
                             obs_norm=_norm_from(tensors, "obs"),
                             goal_norm=_norm_from(tensors, "goal"))
