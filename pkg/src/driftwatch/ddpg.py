"""DDPG training loop, replay buffer, and agent checkpointing.

The actor emits a tanh output mapped affinely onto the action bounds; the
critic scores the normalized observation concatenated with the normalized
action.  The critic's scalar output is the value stream the detectors
monitor, so everything here must be deterministic given (seed, config).
"""

from __future__ import annotations

import dataclasses
import zipfile

import numpy as np

from .config import EnvConfig, GnssConfig, TrainConfig
from .env import (
    ACTION_HIGH,
    ACTION_LOW,
    TERM_COLLISION,
    TERM_GOAL,
    ActionVec,
    env_reset,
    env_step,
)
from .errors import (
    ConfigurationError,
    CorruptCheckpointError,
    DimensionMismatchError,
)
from .gnss import Constellation, make_constellation
from .nets import Adam, Mlp, soft_update

CHECKPOINT_SCHEMA = "driftwatch-checkpoint-v1"

ACTION_CENTER = (ACTION_HIGH + ACTION_LOW) / 2.0
ACTION_HALF = (ACTION_HIGH - ACTION_LOW) / 2.0

OBS_DIM = 9
ACT_DIM = 3

# rng stream tags so the seed layout is explicit and stable
_TAG_INIT, _TAG_EPISODE, _TAG_NOISE, _TAG_SAMPLE, _TAG_MEAS = 1, 2, 3, 4, 5


def normalize_action(raw: np.ndarray) -> np.ndarray:
    return (np.asarray(raw, dtype=float) - ACTION_CENTER) / ACTION_HALF


def denormalize_action(norm: np.ndarray) -> np.ndarray:
    return ACTION_CENTER + ACTION_HALF * np.asarray(norm, dtype=float)


class Agent:
    """Actor/critic pair plus frozen target copies and observation scaling."""

    def __init__(
        self,
        rng: np.random.Generator,
        hidden: tuple[int, int] = (64, 64),
        obs_scales: tuple[float, ...] = (1000.0,) * 6 + (10.0,) * 3,
    ):
        if len(obs_scales) != OBS_DIM:
            raise ConfigurationError(f"obs_scales must have {OBS_DIM} entries")
        self.obs_scales = np.asarray(obs_scales, dtype=float)
        actor_sizes = [OBS_DIM, *hidden, ACT_DIM]
        critic_sizes = [OBS_DIM + ACT_DIM, *hidden, 1]
        # small final layer start: the policy begins near the action center
        self.actor = Mlp(actor_sizes, ["relu"] * len(hidden) + ["tanh"], rng,
                         final_init_scale=0.01)
        self.critic = Mlp(critic_sizes, ["relu"] * len(hidden) + ["linear"], rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()

    def normalize_obs(self, phi: np.ndarray) -> np.ndarray:
        return np.asarray(phi, dtype=float) / self.obs_scales

    def policy_norm(self, phi: np.ndarray) -> np.ndarray:
        """Deterministic policy in normalized action space ([-1, 1]^3)."""
        return self.actor.forward(self.normalize_obs(phi))

    def act(
        self,
        phi: np.ndarray,
        noise_scale: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> ActionVec:
        """Policy action with optional raw-unit Gaussian exploration noise."""
        raw = denormalize_action(self.policy_norm(phi))
        if noise_scale > 0.0:
            if rng is None:
                raise ConfigurationError("noise_scale > 0 requires an rng")
            raw = raw + rng.normal(0.0, noise_scale, size=ACT_DIM)
        return ActionVec.from_array(np.clip(raw, ACTION_LOW, ACTION_HIGH))

    def q_value(self, phi: np.ndarray, action: ActionVec) -> float:
        a_norm = normalize_action(action.as_array())
        x = np.concatenate([self.normalize_obs(phi), a_norm])
        return float(self.critic.forward(x)[0])


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform batch sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.phi = np.zeros((capacity, OBS_DIM))
        self.action_norm = np.zeros((capacity, ACT_DIM))
        self.reward = np.zeros(capacity)
        self.phi_next = np.zeros((capacity, OBS_DIM))
        self.done = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def add(self, phi, action_norm, reward, phi_next, done: bool) -> None:
        i = self._head
        self.phi[i] = phi
        self.action_norm[i] = action_norm
        self.reward[i] = reward
        self.phi_next[i] = phi_next
        self.done[i] = 1.0 if done else 0.0
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Uniform without replacement within the batch."""
        if batch_size > self.size:
            raise ConfigurationError(
                f"cannot sample {batch_size} from buffer of size {self.size}"
            )
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return (self.phi[idx], self.action_norm[idx], self.reward[idx],
                self.phi_next[idx], self.done[idx])


def train_step(
    agent: Agent,
    critic_opt: Adam,
    actor_opt: Adam,
    batch,
    gamma: float,
    tau: float,
) -> tuple[float, float]:
    """One gradient update of critic and actor plus target soft updates.

    Returns (critic TD loss, actor objective mean Q) before the update.
    """
    phi, a_norm, r, phi_next, done = batch
    b = phi.shape[0]
    phi_n = phi / agent.obs_scales
    phi_next_n = phi_next / agent.obs_scales

    a_next = agent.target_actor.forward(phi_next_n)
    q_next = agent.target_critic.forward(
        np.hstack([phi_next_n, a_next]))[:, 0]
    y = r + gamma * (1.0 - done) * q_next

    q = agent.critic.forward(np.hstack([phi_n, a_norm]))[:, 0]
    diff = q - y
    critic_loss = float(np.mean(diff**2))
    _, critic_grads = agent.critic.backward((2.0 / b) * diff[:, None])
    critic_opt.step(critic_grads)

    a_pi = agent.actor.forward(phi_n)
    q_pi = agent.critic.forward(np.hstack([phi_n, a_pi]))
    actor_objective = float(np.mean(q_pi))
    dinput, _ = agent.critic.backward(np.full((b, 1), -1.0 / b))
    _, actor_grads = agent.actor.backward(dinput[:, OBS_DIM:])
    actor_opt.step(actor_grads)

    soft_update(agent.target_actor, agent.actor, tau)
    soft_update(agent.target_critic, agent.critic, tau)
    return critic_loss, actor_objective


def _episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, _TAG_EPISODE, episode])
               .generate_state(1)[0])


def _curriculum_env(
    env_cfg: EnvConfig, train_cfg: TrainConfig, rng: np.random.Generator
) -> EnvConfig:
    """Pick the short obstacle-heavy or long cruise episode variant."""
    if rng.uniform() < train_cfg.curriculum_short_frac:
        return dataclasses.replace(
            env_cfg,
            goal_distance_range=train_cfg.short_goal_distance_range,
            obstacle_path_frac_range=train_cfg.short_path_frac_range,
            obstacle_offset_range=train_cfg.short_offset_range,
        )
    return dataclasses.replace(
        env_cfg,
        goal_distance_range=train_cfg.long_goal_distance_range,
        obstacle_offset_range=train_cfg.long_offset_range,
    )


def noise_schedule(train_cfg: TrainConfig, episode: int) -> float:
    """Exploration noise for an episode: linear decay after the warmup."""
    if episode < train_cfg.warmup_episodes:
        return train_cfg.noise_start
    remaining = train_cfg.episodes - 1 - train_cfg.warmup_episodes
    if remaining <= 0:
        return train_cfg.noise_end
    frac = (episode - train_cfg.warmup_episodes) / remaining
    return train_cfg.noise_start + frac * (train_cfg.noise_end
                                           - train_cfg.noise_start)


def train(
    env_cfg: EnvConfig,
    train_cfg: TrainConfig,
    seed: int,
    gnss_cfg: GnssConfig | None = None,
    constellation: Constellation | None = None,
) -> tuple[Agent, list[float]]:
    """Full training run: warmup exploration, then noisy policy + updates.

    Deterministic given (configs, seed): every rng stream is derived from
    the seed with a fixed tag layout.
    """
    gnss_cfg = gnss_cfg if gnss_cfg is not None else GnssConfig()
    if constellation is None:
        constellation = make_constellation(
            gnss_cfg.n_sats, gnss_cfg.radius, gnss_cfg.constellation_seed,
            gnss_cfg.min_separation_deg,
        )
    agent = Agent(np.random.default_rng([seed, _TAG_INIT]),
                  hidden=train_cfg.hidden, obs_scales=train_cfg.obs_scales)
    critic_opt = Adam(agent.critic.parameters(), train_cfg.critic_lr)
    actor_opt = Adam(agent.actor.parameters(), train_cfg.actor_lr)
    buffer = ReplayBuffer(train_cfg.buffer_capacity)
    sample_rng = np.random.default_rng([seed, _TAG_SAMPLE])

    reward_history: list[float] = []
    for episode in range(train_cfg.episodes):
        ep_rng = np.random.default_rng([seed, _TAG_NOISE, episode])
        meas_rng = np.random.default_rng([seed, _TAG_MEAS, episode])
        cfg_ep = _curriculum_env(env_cfg, train_cfg, ep_rng)
        world, obs = env_reset(cfg_ep, _episode_seed(seed, episode),
                               constellation, gnss_cfg.noise_sigma)
        warmup = episode < train_cfg.warmup_episodes
        sigma = noise_schedule(train_cfg, episode)

        # the controller's belief: goal offset block recovers the estimate
        nav_pos = world.goal - obs.phi[3:6]
        total = 0.0
        done = False
        while not done:
            if warmup:
                a_norm = ep_rng.uniform(-1.0, 1.0, size=ACT_DIM)
                action = ActionVec.from_array(denormalize_action(a_norm))
            else:
                action = agent.act(obs.phi, noise_scale=sigma, rng=ep_rng)
                a_norm = normalize_action(action.as_array())
            world, obs_next, rb, done, info = env_step(
                world, action, constellation, gnss_cfg.noise_sigma,
                None, cfg=cfg_ep, rng=meas_rng, nav_pos=nav_pos,
            )
            terminal = rb.terminal_event in (TERM_COLLISION, TERM_GOAL)
            buffer.add(obs.phi, a_norm, rb.total, obs_next.phi, terminal)
            total += rb.total
            obs = obs_next
            nav_pos = info.pvt.estimate.position

            if not warmup and buffer.size >= train_cfg.batch_size:
                batch = buffer.sample(train_cfg.batch_size, sample_rng)
                train_step(agent, critic_opt, actor_opt, batch,
                           train_cfg.gamma, train_cfg.tau)
        reward_history.append(total)
    return agent, reward_history


def save_checkpoint(agent: Agent, path) -> None:
    """Persist all four networks and the observation scaling as one npz."""
    arrays: dict[str, np.ndarray] = {
        "schema": np.array(CHECKPOINT_SCHEMA),
        "obs_scales": agent.obs_scales,
        "actor_sizes": np.array(agent.actor.layer_sizes),
        "actor_acts": np.array(agent.actor.activations),
        "critic_sizes": np.array(agent.critic.layer_sizes),
        "critic_acts": np.array(agent.critic.activations),
    }
    for tag, net in (("actor", agent.actor), ("critic", agent.critic),
                     ("target_actor", agent.target_actor),
                     ("target_critic", agent.target_critic)):
        for i, (w, bias) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{tag}_w{i}"] = w
            arrays[f"{tag}_b{i}"] = bias
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def _load_net(data, tag: str, sizes, acts) -> Mlp:
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        wk, bk = f"{tag}_w{i}", f"{tag}_b{i}"
        if wk not in data or bk not in data:
            raise CorruptCheckpointError(f"checkpoint is missing {wk}/{bk}")
        weights.append(data[wk])
        biases.append(data[bk])
    return Mlp.from_parameters(list(sizes), list(acts), weights, biases)


def load_checkpoint(path) -> Agent:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CorruptCheckpointError(f"cannot read checkpoint {path}: {exc}")
    try:
        required = ("schema", "obs_scales", "actor_sizes", "actor_acts",
                    "critic_sizes", "critic_acts")
        for key in required:
            if key not in data:
                raise CorruptCheckpointError(f"checkpoint is missing {key!r}")
        schema = str(data["schema"])
        if schema != CHECKPOINT_SCHEMA:
            raise CorruptCheckpointError(
                f"unsupported checkpoint schema {schema!r}"
            )
        actor_sizes = [int(s) for s in data["actor_sizes"]]
        critic_sizes = [int(s) for s in data["critic_sizes"]]
        actor_acts = [str(a) for a in data["actor_acts"]]
        critic_acts = [str(a) for a in data["critic_acts"]]
        if actor_sizes[0] != OBS_DIM or actor_sizes[-1] != ACT_DIM:
            raise CorruptCheckpointError(
                f"actor sizes {actor_sizes} do not match this package"
            )
        agent = object.__new__(Agent)
        agent.obs_scales = np.asarray(data["obs_scales"], dtype=float)
        if agent.obs_scales.shape != (OBS_DIM,):
            raise CorruptCheckpointError("obs_scales has the wrong shape")
        agent.actor = _load_net(data, "actor", actor_sizes, actor_acts)
        agent.critic = _load_net(data, "critic", critic_sizes, critic_acts)
        agent.target_actor = _load_net(data, "target_actor", actor_sizes,
                                       actor_acts)
        agent.target_critic = _load_net(data, "target_critic", critic_sizes,
                                        critic_acts)
        return agent
    except (KeyError, ValueError, ConfigurationError,
            DimensionMismatchError) as exc:
        raise CorruptCheckpointError(f"checkpoint {path} failed to load: {exc}")
    finally:
        data.close()
