"""Deep deterministic policy gradient on top of :mod:`beamtune.neural`."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import env as envmod
from ..neural import Adam, Mlp, load_checkpoint, save_checkpoint, soft_update
from ..tracking import make_rng

STATE_DIM = envmod.STATE_DIM
ACTION_DIM = envmod.ACTION_DIM


def observation_scale() -> np.ndarray:
    """Fixed per-component multipliers that bring the physical state to O(1):
    mm / mrad for percentiles, 1e5 for second moments, cm for apertures."""
    scale = np.ones(STATE_DIM)
    scale[envmod.STATS] = 1e3
    scale[envmod.COVARIANCE] = 1e5
    scale[envmod.APERTURES] = 1e2
    return scale


_SCALE = observation_scale()


@dataclass(frozen=True)
class DdpgConfig:
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    hidden: tuple[int, ...] = (256, 256)
    gamma: float = 0.99
    tau: float = 0.005
    noise_sigma: float = 0.1
    noise_final: float = 0.02
    buffer_capacity: int = 100_000
    batch_size: int = 64
    episodes: int = 1000
    eval_every: int = 10
    warmup_steps: int = 0
    actor_out_scale: float = 1e-3
    preact_penalty: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("actor_lr", "critic_lr", "tau", "buffer_capacity", "batch_size", "eval_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size must not exceed buffer_capacity")
        if self.noise_sigma < 0 or self.noise_final < 0:
            raise ValueError("noise levels must be >= 0")
        if self.preact_penalty < 0 or self.warmup_steps < 0:
            raise ValueError("preact_penalty and warmup_steps must be >= 0")


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.float64).reshape(STATE_DIM)
        self.action = np.asarray(self.action, dtype=np.float64).reshape(ACTION_DIM)
        self.next_state = np.asarray(self.next_state, dtype=np.float64).reshape(STATE_DIM)


class ReplayBuffer:
    """Fixed-capacity FIFO store with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, STATE_DIM))
        self.actions = np.zeros((capacity, ACTION_DIM))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, STATE_DIM))
        self.dones = np.zeros(capacity)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> None:
        i = self.head
        self.states[i] = tr.state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_states[i] = tr.next_state
        self.dones[i] = float(tr.done)
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator):
        idx = self.sample_indices(n, rng)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx]

    def clear(self) -> None:
        self.size = 0
        self.head = 0

    def save(self, path) -> None:
        n = self.size
        # unroll the ring so that row 0 is the oldest entry
        order = (np.arange(n) + (self.head - n)) % self.capacity
        np.savez(
            path,
            capacity=self.capacity,
            states=self.states[order],
            actions=self.actions[order],
            rewards=self.rewards[order],
            next_states=self.next_states[order],
            dones=self.dones[order],
        )

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with np.load(path) as data:
            buf = cls(int(data["capacity"]))
            n = data["rewards"].shape[0]
            buf.states[:n] = data["states"]
            buf.actions[:n] = data["actions"]
            buf.rewards[:n] = data["rewards"]
            buf.next_states[:n] = data["next_states"]
            buf.dones[:n] = data["dones"]
        buf.size = n
        buf.head = n % buf.capacity
        return buf


def select_action(actor: Mlp, state, noise_sigma: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Actor output (tanh head) plus Gaussian noise, clamped to [-1, 1]."""
    a = actor.forward(np.asarray(state, dtype=np.float64) * _SCALE)
    if noise_sigma > 0.0:
        a = a + rng.normal(0.0, noise_sigma, size=a.shape)
    return np.clip(a, -1.0, 1.0)


@dataclass
class UpdateStats:
    critic_loss: float
    actor_loss: float


class DdpgAgent:
    """Actor, critic, their target copies and optimisers."""

    def __init__(self, config: DdpgConfig = DdpgConfig(), seed: int | None = None):
        self.config = config
        self.seed = config.seed if seed is None else int(seed)
        init_rng = make_rng(self.seed)
        hidden = list(config.hidden)
        self.actor = Mlp(
            [STATE_DIM, *hidden, ACTION_DIM],
            ["relu"] * len(hidden) + ["tanh"],
            init_rng,
            out_scale=config.actor_out_scale,
        )
        self.critic = Mlp([STATE_DIM + ACTION_DIM, *hidden, 1], ["relu"] * len(hidden) + ["linear"], init_rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Adam(self.actor.params(), lr=config.actor_lr)
        self.critic_opt = Adam(self.critic.params(), lr=config.critic_lr)
        self.rng = make_rng(self.seed + 1)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.updates = 0

    def act(self, state, noise_sigma: float = 0.0) -> np.ndarray:
        return select_action(self.actor, state, noise_sigma, self.rng)

    def store(self, state, action, reward, next_state, done) -> None:
        self.buffer.add(Transition(state, action, reward, next_state, done))

    def update(self, batch=None) -> UpdateStats:
        """One gradient step on a uniformly sampled batch (or ``batch``)."""
        cfg = self.config
        if batch is None:
            batch = self.buffer.sample(cfg.batch_size, self.rng)
        stats = ddpg_update(
            batch,
            self.actor,
            self.critic,
            self.actor_target,
            self.critic_target,
            self.actor_opt,
            self.critic_opt,
            cfg.gamma,
            cfg.tau,
            cfg.preact_penalty,
        )
        self.updates += 1
        return stats

    def q_value(self, state, action) -> float:
        x = np.concatenate([np.asarray(state) * _SCALE, np.asarray(action)])
        return float(self.critic.forward(x)[0])

    def save(self, path, extra=None, buffer_path=None) -> None:
        save_checkpoint(
            path,
            {
                "actor": self.actor,
                "critic": self.critic,
                "actor_target": self.actor_target,
                "critic_target": self.critic_target,
            },
            {"actor": self.actor_opt, "critic": self.critic_opt},
            seed=self.seed,
            extra={"config": _config_dict(self.config), "updates": self.updates, **(extra or {})},
        )
        if buffer_path is not None:
            self.buffer.save(buffer_path)

    @classmethod
    def load(cls, path, buffer_path=None) -> "DdpgAgent":
        doc = load_checkpoint(path)
        cfg = dict(doc["extra"]["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        agent = cls(DdpgConfig(**cfg), seed=doc["seed"])
        nets = doc["networks"]
        for name in ("actor", "critic", "actor_target", "critic_target"):
            dst = getattr(agent, name)
            for d, s in zip(dst.params(), nets[name].params()):
                d[...] = s
        agent.actor_opt.load_dict(doc["optimizers"]["actor"])
        agent.critic_opt.load_dict(doc["optimizers"]["critic"])
        agent.updates = int(doc["extra"].get("updates", 0))
        if buffer_path is not None:
            agent.buffer = ReplayBuffer.load(buffer_path)
        return agent


def _config_dict(cfg: DdpgConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d


def critic_targets(rewards, next_states, dones, actor_target: Mlp, critic_target: Mlp, gamma: float):
    """r + gamma * (1 - done) * Q'(s', pi'(s')) for a batch (states unscaled)."""
    s2 = np.asarray(next_states) * _SCALE
    a2 = actor_target.forward(s2)
    q2 = critic_target.forward(np.concatenate([s2, a2], axis=1))[:, 0]
    return np.asarray(rewards) + gamma * (1.0 - np.asarray(dones)) * q2


def ddpg_update(
    batch, actor, critic, actor_target, critic_target, actor_opt, critic_opt, gamma, tau, preact_penalty=0.0
):
    """One critic regression step and one actor ascent step, then soft
    target updates.  ``preact_penalty`` adds ``lambda * mean(z**2)`` on the
    actor's pre-tanh output to the actor loss, which keeps the head out of
    the flat saturated region so later stages can still move it."""
    states, actions, rewards, next_states, dones = batch
    n = len(rewards)
    if n == 0:
        raise ValueError("empty batch")
    y = critic_targets(rewards, next_states, dones, actor_target, critic_target, gamma)

    s = np.asarray(states) * _SCALE
    q = critic.forward(np.concatenate([s, actions], axis=1))[:, 0]
    diff = q - y
    critic_loss = float(np.mean(diff * diff))
    grads, _ = critic.backward((2.0 / n) * diff[:, None])
    critic_opt.step(grads)

    pi = actor.forward(s)
    q_pi = critic.forward(np.concatenate([s, pi], axis=1))
    actor_loss = -float(np.mean(q_pi))
    _, g_in = critic.backward(np.full((n, 1), -1.0 / n))
    g_pre = None
    if preact_penalty > 0.0:
        z = actor.output_preactivation()
        actor_loss += preact_penalty * float(np.mean(np.sum(z * z, axis=1)))
        g_pre = (2.0 * preact_penalty / n) * z
    grads, _ = actor.backward(g_in[:, STATE_DIM:], g_pre)
    actor_opt.step(grads)

    soft_update(actor_target, actor, tau)
    soft_update(critic_target, critic, tau)
    return UpdateStats(critic_loss, actor_loss)
