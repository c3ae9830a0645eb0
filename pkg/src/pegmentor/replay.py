"""Episode-major replay storage with hindsight goal relabeling.

Episodes are stored whole because the "future" relabeling strategy samples a
replacement goal from the achieved states later in the same episode. Scripted
demonstrations live in a separate partition: they are never evicted and are
sampled without relabeling so the cloning targets keep their original goals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sim

ACTION_DIMS = 5  # dx, dy, dz, d_yaw, j (d_pitch frozen in top-down config)
ACTION_SCALE = np.array([sim.MAX_POS_DELTA, sim.MAX_POS_DELTA, sim.MAX_POS_DELTA,
                         sim.MAX_YAW_DELTA, 1.0])


class EmptyBuffer(RuntimeError):
    """Sampling from a buffer with no stored transitions."""


def action_to_vector(a: sim.Action) -> np.ndarray:
    """Physical action -> normalized [-1, 1]^5 training vector."""
    v = a.as_vector()
    return np.concatenate([v[:4], v[5:]]) / ACTION_SCALE


def vector_to_action(v: np.ndarray) -> sim.Action:
    v = np.clip(np.asarray(v, dtype=np.float64).reshape(ACTION_DIMS), -1.0, 1.0) * ACTION_SCALE
    return sim.Action(v[0], v[1], v[2], v[3], 0.0, v[4])


@dataclass
class StoredEpisode:
    """Column layout of one episode; row t holds transition t."""

    obs: np.ndarray        # (T, 11)
    actions: np.ndarray    # (T, 5) normalized
    rewards: np.ndarray    # (T,)
    next_obs: np.ndarray   # (T, 11)
    achieved: np.ndarray   # (T, 3) block position after the step
    desired: np.ndarray    # (T, 3)
    done: np.ndarray       # (T,)
    carried_next: np.ndarray  # (T,) carried flag after the step

    def __len__(self) -> int:
        return self.obs.shape[0]

    @staticmethod
    def from_episode(ep: sim.Episode) -> "StoredEpisode":
        return StoredEpisode(
            obs=np.array([t.obs for t in ep.transitions]),
            actions=np.array([action_to_vector(t.action) for t in ep.transitions]),
            rewards=np.array([t.reward for t in ep.transitions]),
            next_obs=np.array([t.next_obs for t in ep.transitions]),
            achieved=np.array([t.achieved_goal for t in ep.transitions]),
            desired=np.array([t.desired_goal for t in ep.transitions]),
            done=np.array([t.done for t in ep.transitions], dtype=np.float64),
            carried_next=np.array([t.next_obs[10] for t in ep.transitions]),
        )


class ReplayBuffer:
    """FIFO over rollout episodes (capacity counted in transitions) plus a
    permanent demonstration partition."""

    def __init__(self, capacity: int = 200_000):
        self.capacity = capacity
        self.episodes: list[StoredEpisode] = []
        self.demo_episodes: list[StoredEpisode] = []
        self._rollout_size = 0

    def add(self, ep: sim.Episode | StoredEpisode, demo: bool = False) -> None:
        stored = ep if isinstance(ep, StoredEpisode) else StoredEpisode.from_episode(ep)
        if len(stored) == 0:
            return
        if demo:
            self.demo_episodes.append(stored)
            return
        self.episodes.append(stored)
        self._rollout_size += len(stored)
        while self._rollout_size > self.capacity and len(self.episodes) > 1:
            evicted = self.episodes.pop(0)
            self._rollout_size -= len(evicted)

    @property
    def n_transitions(self) -> int:
        return self._rollout_size

    @property
    def n_demo_transitions(self) -> int:
        return sum(len(e) for e in self.demo_episodes)

    def _gather(self, episodes: list[StoredEpisode], rng: np.random.Generator, n: int):
        lengths = np.array([len(e) for e in episodes])
        cumulative = np.cumsum(lengths)
        flat = rng.integers(0, cumulative[-1], size=n)
        ep_idx = np.searchsorted(cumulative, flat, side="right")
        t_idx = flat - (cumulative[ep_idx] - lengths[ep_idx])
        return ep_idx, t_idx

    def sample_demos(self, n: int, rng: np.random.Generator, cfg: sim.EpisodeConfig) -> dict:
        """Uniform demo transitions, goals untouched."""
        if not self.demo_episodes:
            raise EmptyBuffer("no demonstration episodes loaded")
        ep_idx, t_idx = self._gather(self.demo_episodes, rng, n)
        return _batch_from(self.demo_episodes, ep_idx, t_idx)


def _batch_from(episodes, ep_idx, t_idx) -> dict:
    rows = [(episodes[e], t) for e, t in zip(ep_idx, t_idx)]
    return {
        "obs": np.array([e.obs[t] for e, t in rows]),
        "action": np.array([e.actions[t] for e, t in rows]),
        "reward": np.array([e.rewards[t] for e, t in rows]),
        "next_obs": np.array([e.next_obs[t] for e, t in rows]),
        "goal": np.array([e.desired[t] for e, t in rows]),
        "done": np.array([e.done[t] for e, t in rows]),
    }


def sample_her_batch(buf: ReplayBuffer, cfg, rng: np.random.Generator,
                     n: int | None = None, ep_cfg: sim.EpisodeConfig | None = None) -> dict:
    """Uniform transitions from the rollout partition; with probability
    k/(k+1) the desired goal is replaced by the achieved goal of a uniformly
    chosen future step of the same episode and the reward is recomputed.

    `cfg` needs attributes her_k and batch_size; ep_cfg supplies the success
    tolerance for reward recomputation (defaults to the standard config).
    """
    if not buf.episodes:
        raise EmptyBuffer("no rollout episodes stored")
    ep_cfg = ep_cfg or sim.EpisodeConfig()
    n = n or cfg.batch_size
    ep_idx, t_idx = buf._gather(buf.episodes, rng, n)
    batch = _batch_from(buf.episodes, ep_idx, t_idx)

    future_p = cfg.her_k / (cfg.her_k + 1.0)
    relabel = rng.random(n) < future_p
    batch["relabeled"] = relabel
    for i in np.nonzero(relabel)[0]:
        ep = buf.episodes[ep_idx[i]]
        t = t_idx[i]
        f = int(rng.integers(t, len(ep)))
        new_goal = ep.achieved[f]
        batch["goal"][i] = new_goal
        batch["reward"][i] = sim.compute_reward(ep.achieved[t], new_goal,
                                                bool(ep.carried_next[t]), ep_cfg)
    return batch
