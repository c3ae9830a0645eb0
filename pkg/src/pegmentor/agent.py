"""Goal-conditioned actor-critic learning on the peg-transfer task.

Deterministic-policy actor-critic with hindsight goal relabeling and
behavior cloning from scripted demonstrations. The cloning term is
Q-filtered: a demonstration action contributes only while the critic still
rates it above the policy's own action. Training is fully driven by one
seeded generator, so a (seed, config, demos) triple reproduces the same
networks and statistics.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import nets, replay, sim
from .overlay import TrajectoryPlan

OBS_SIZE = sim.OBS_SIZE
GOAL_SIZE = 3
ACT_SIZE = replay.ACTION_DIMS


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.98
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    polyak: float = 0.95
    batch_size: int = 128
    her_k: int = 4
    epochs: int = 100
    cycles_per_epoch: int = 10
    rollouts_per_cycle: int = 2
    updates_per_cycle: int = 40
    bc_weight: float = 1.0
    q_filter: bool = True
    action_noise_sigma: float = 0.1
    random_action_eps: float = 0.2
    eval_episodes: int = 20
    seed: int = 0
    buffer_capacity: int = 200_000
    hidden: int = 64
    demo_fraction: float = 0.125  # share of each update batch drawn from demos

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.polyak < 1.0:
            raise ValueError("polyak must lie in (0, 1)")


@dataclass
class ActorCritic:
    actor: nets.MlpParams
    critic: nets.MlpParams
    target_actor: nets.MlpParams
    target_critic: nets.MlpParams
    obs_norm: nets.RunningNorm
    goal_norm: nets.RunningNorm

    def copy(self) -> "ActorCritic":
        def norm_copy(n: nets.RunningNorm) -> nets.RunningNorm:
            return nets.RunningNorm(size=n.size, clip=n.clip, std_floor=n.std_floor,
                                    count=n.count, total=n.total.copy(),
                                    total_sq=n.total_sq.copy())
        return ActorCritic(self.actor.copy(), self.critic.copy(),
                           self.target_actor.copy(), self.target_critic.copy(),
                           norm_copy(self.obs_norm), norm_copy(self.goal_norm))

    @staticmethod
    def create(rng: np.random.Generator, hidden: int = 64) -> "ActorCritic":
        actor = nets.mlp_create([OBS_SIZE + GOAL_SIZE, hidden, hidden, ACT_SIZE],
                                ["relu", "relu", "tanh"], rng)
        critic = nets.mlp_create([OBS_SIZE + GOAL_SIZE + ACT_SIZE, hidden, hidden, 1],
                                 ["relu", "relu", "linear"], rng)
        return ActorCritic(actor=actor, critic=critic,
                           target_actor=actor.copy(), target_critic=critic.copy(),
                           obs_norm=nets.RunningNorm(OBS_SIZE),
                           goal_norm=nets.RunningNorm(GOAL_SIZE))

    def _inputs(self, obs: np.ndarray, goal: np.ndarray) -> np.ndarray:
        return np.concatenate([self.obs_norm.normalize(obs),
                               self.goal_norm.normalize(goal)], axis=-1)

    def act(self, obs: np.ndarray, goal: np.ndarray) -> np.ndarray:
        """Deterministic normalized action(s) in [-1, 1]^5."""
        return nets.mlp_forward(self.actor, self._inputs(obs, goal))

    def q_value(self, obs: np.ndarray, goal: np.ndarray, action: np.ndarray) -> np.ndarray:
        x = np.concatenate([self._inputs(obs, goal), action], axis=-1)
        return nets.mlp_forward(self.critic, x)


def policy_fn(policy, ep_cfg: sim.EpisodeConfig) -> sim.PolicyFn:
    """Adapt an ActorCritic (or any (state, goal) -> Action callable)."""
    if isinstance(policy, ActorCritic):
        def fn(state: sim.SimState, goal: sim.Goal) -> sim.Action:
            vec = policy.act(sim.observe(state), goal.position)
            return replay.vector_to_action(vec)
        return fn
    return policy


@dataclass
class TrainerState:
    actor_opt: nets.Adam
    critic_opt: nets.Adam

    @staticmethod
    def create(cfg: TrainConfig) -> "TrainerState":
        return TrainerState(nets.Adam(cfg.actor_lr), nets.Adam(cfg.critic_lr))


def _polyak_update(target: nets.MlpParams, live: nets.MlpParams, polyak: float) -> None:
    for t, l in zip(target.flat(), live.flat()):
        t *= polyak
        t += (1.0 - polyak) * l


def train_step(ac: ActorCritic, batch: dict, demo_batch: dict | None,
               cfg: TrainConfig, state: TrainerState | None = None) -> dict:
    """One critic + actor update on the given batches; targets then track the
    live networks with coefficient cfg.polyak. Returns the loss breakdown."""
    state = state or TrainerState.create(cfg)

    if demo_batch is not None:
        joint = {k: np.concatenate([batch[k], demo_batch[k]])
                 for k in ("obs", "goal", "action", "reward", "next_obs", "done")}
    else:
        joint = batch
    n = joint["obs"].shape[0]

    # critic: squared TD error against the clipped target value
    in_next = ac._inputs(joint["next_obs"], joint["goal"])
    a_next = nets.mlp_forward(ac.target_actor, in_next)
    q_next = nets.mlp_forward(ac.target_critic, np.concatenate([in_next, a_next], axis=1))[:, 0]
    y = joint["reward"] + cfg.gamma * (1.0 - joint["done"]) * q_next
    y = np.clip(y, -1.0 / (1.0 - cfg.gamma), 0.0)

    in_now = ac._inputs(joint["obs"], joint["goal"])
    critic_in = np.concatenate([in_now, joint["action"]], axis=1)
    q, q_cache = nets.mlp_forward_cached(ac.critic, critic_in)
    td = q[:, 0] - y
    critic_loss = float(np.mean(td ** 2))
    upstream = (2.0 * td / n).reshape(-1, 1)
    critic_grads, _ = nets.mlp_backward(ac.critic, q_cache, upstream)
    state.critic_opt.step(ac.critic.flat(), [g for l in critic_grads for g in (l.weights, l.bias)])

    # actor: maximize Q(s, pi(s)) plus the Q-filtered cloning term
    a_pi, actor_cache = nets.mlp_forward_cached(ac.actor, in_now)
    pi_in = np.concatenate([in_now, a_pi], axis=1)
    q_pi, pi_cache = nets.mlp_forward_cached(ac.critic, pi_in)
    actor_loss = float(-np.mean(q_pi))
    _, dq_din = nets.mlp_backward(ac.critic, pi_cache, np.full((n, 1), -1.0 / n))
    upstream_actor = dq_din[:, -ACT_SIZE:]

    bc_loss = 0.0
    if demo_batch is not None and cfg.bc_weight > 0.0:
        nd = demo_batch["obs"].shape[0]
        in_demo = ac._inputs(demo_batch["obs"], demo_batch["goal"])
        a_pi_demo, demo_cache = nets.mlp_forward_cached(ac.actor, in_demo)
        if cfg.q_filter:
            q_demo_a = nets.mlp_forward(
                ac.critic, np.concatenate([in_demo, demo_batch["action"]], axis=1))[:, 0]
            q_demo_pi = nets.mlp_forward(
                ac.critic, np.concatenate([in_demo, a_pi_demo], axis=1))[:, 0]
            mask = (q_demo_a > q_demo_pi).astype(np.float64)
        else:
            mask = np.ones(nd)
        diff = (a_pi_demo - demo_batch["action"]) * mask[:, None]
        bc_loss = float(np.sum(diff ** 2) / nd)
        demo_upstream = cfg.bc_weight * 2.0 * diff / nd
        grads_a, _ = nets.mlp_backward(ac.actor, actor_cache, upstream_actor)
        grads_d, _ = nets.mlp_backward(ac.actor, demo_cache, demo_upstream)
        actor_grads = [nets.Layer(ga.weights + gd.weights, ga.bias + gd.bias)
                       for ga, gd in zip(grads_a, grads_d)]
    else:
        actor_grads, _ = nets.mlp_backward(ac.actor, actor_cache, upstream_actor)
    state.actor_opt.step(ac.actor.flat(), [g for l in actor_grads for g in (l.weights, l.bias)])

    _polyak_update(ac.target_actor, ac.actor, cfg.polyak)
    _polyak_update(ac.target_critic, ac.critic, cfg.polyak)
    return {"actor_loss": actor_loss, "critic_loss": critic_loss, "bc_loss": bc_loss}


def _exploration_episode(ac: ActorCritic, ep_cfg: sim.EpisodeConfig,
                         ep_seed: int, cfg: TrainConfig,
                         rng: np.random.Generator) -> sim.Episode:
    state, goal = sim.reset(ep_cfg, ep_seed)
    transitions = []
    while not sim.episode_over(state, ep_cfg):
        if rng.random() < cfg.random_action_eps:
            vec = rng.uniform(-1.0, 1.0, ACT_SIZE)
        else:
            vec = ac.act(sim.observe(state), goal.position)
            vec = np.clip(vec + rng.normal(0.0, cfg.action_noise_sigma, ACT_SIZE), -1.0, 1.0)
        state, tr = sim.step(state, replay.vector_to_action(vec), ep_cfg)
        transitions.append(tr)
    return sim.Episode(seed=ep_seed, transitions=transitions)


@dataclass
class TrainStats:
    rows: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)


def train(ep_cfg: sim.EpisodeConfig, demos: list[sim.Episode],
          cfg: TrainConfig) -> tuple[ActorCritic, TrainStats]:
    """Full training loop: demos preloaded, then epochs of rollout cycles and
    updates with a per-epoch noise-free evaluation."""
    if not demos:
        raise ValueError("at least one demonstration episode required")
    rng = np.random.default_rng(cfg.seed)
    ac = ActorCritic.create(rng, cfg.hidden)
    buf = replay.ReplayBuffer(cfg.buffer_capacity)
    for ep in demos:
        stored = replay.StoredEpisode.from_episode(ep)
        buf.add(stored, demo=True)
        buf.add(stored, demo=False)  # demos also seed the HER partition
        ac.obs_norm.update(stored.obs)
        ac.goal_norm.update(stored.desired)

    demo_n = max(1, int(round(cfg.batch_size * cfg.demo_fraction)))
    trainer = TrainerState.create(cfg)
    stats = TrainStats()
    best: ActorCritic | None = None
    best_rate = -1.0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        losses = {"actor_loss": 0.0, "critic_loss": 0.0, "bc_loss": 0.0}
        n_updates = 0
        for _ in range(cfg.cycles_per_epoch):
            for _ in range(cfg.rollouts_per_cycle):
                ep_seed = int(rng.integers(0, 2 ** 31))
                episode = _exploration_episode(ac, ep_cfg, ep_seed, cfg, rng)
                stored = replay.StoredEpisode.from_episode(episode)
                buf.add(stored)
                ac.obs_norm.update(stored.obs)
                ac.goal_norm.update(stored.desired)
            for _ in range(cfg.updates_per_cycle):
                batch = replay.sample_her_batch(buf, cfg, rng,
                                                n=cfg.batch_size - demo_n, ep_cfg=ep_cfg)
                demo_batch = buf.sample_demos(demo_n, rng, ep_cfg)
                out = train_step(ac, batch, demo_batch, cfg, trainer)
                for k in losses:
                    losses[k] += out[k]
                n_updates += 1
        rate = evaluate(ac, ep_cfg, cfg.eval_episodes, seed=cfg.seed + 7_000_000 + epoch)
        row = {"epoch": epoch,
               "actor_loss": losses["actor_loss"] / max(1, n_updates),
               "critic_loss": losses["critic_loss"] / max(1, n_updates),
               "bc_loss": losses["bc_loss"] / max(1, n_updates),
               "eval_success_rate": rate,
               "wall_time": time.perf_counter() - t0}
        stats.rows.append(row)
        # keep the strongest evaluated policy: late training can regress (the
        # sparse return rewards shortcuts that collide on long-range goals)
        if best is None or rate >= best_rate:
            best, best_rate = ac.copy(), rate
    return (best if best is not None else ac), stats


def evaluate(policy, ep_cfg: sim.EpisodeConfig, n: int, seed: int) -> float:
    """Success rate over n deterministic noise-free rollouts."""
    if n < 1:
        raise ValueError("n must be >= 1")
    fn = policy_fn(policy, ep_cfg)
    rng = np.random.default_rng(seed)
    successes = 0
    for _ in range(n):
        ep_seed = int(rng.integers(0, 2 ** 31))
        state, goal = sim.reset(ep_cfg, ep_seed)
        episode = sim.rollout(fn, state, goal, ep_cfg, ep_seed)
        successes += episode.success
    return successes / n


def rollout_trajectory(policy, state: sim.SimState, goal: sim.Goal,
                       ep_cfg: sim.EpisodeConfig) -> TrajectoryPlan:
    """Noise-free rollout from `state`; returns the tool-tip waypoints (start
    included, so at most horizon + 1 points) with per-waypoint jaw flags."""
    fn = policy_fn(policy, ep_cfg)
    waypoints = [state.tool_tip.copy()]
    jaw = [state.jaw_open]
    cur = state.copy()
    while not sim.episode_over(cur, ep_cfg):
        cur, _ = sim.step(cur, fn(cur, goal), ep_cfg)
        waypoints.append(cur.tool_tip.copy())
        jaw.append(cur.jaw_open)
    return TrajectoryPlan(waypoints=np.array(waypoints), jaw_hints=np.array(jaw),
                          label=f"PEG {state.source_peg} TO {state.goal_peg}")
