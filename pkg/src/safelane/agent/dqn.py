"""Deep Q-learning on executed (feedback) actions with a shared network and replay."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..reference_planner import N_ACTIONS, Action
from .network import Adam, bellman_loss_and_grad, check_finite, init_params, q_forward
from .observation import OBS_DIM, SHARED_DIM
from .replay import ReplayBuffer

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DqnConfig:
    hidden: tuple[int, ...] = (64, 64)
    batch_size: int = 64
    buffer_capacity: int = 50_000
    gamma: float = 0.95
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal_fraction: float = 0.3
    target_sync_interval: int = 500
    train_steps_per_epoch: int = 1


def select_action(values, epsilon: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy; ``np.argmax`` keeps the first maximum, so ties go KL > CL > CR."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if rng.random() < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    return Action(int(np.argmax(values)))


def select_actions(values, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Row-wise :func:`select_action`; always consumes the same number of draws."""
    values = np.atleast_2d(values)
    explore = rng.random(len(values)) < epsilon
    random_a = rng.integers(N_ACTIONS, size=len(values))
    return np.where(explore, random_a, np.argmax(values, axis=1))


def td_target(r, gamma: float, target_params, o2, m2, done=False):
    """``y = r + gamma * max_a Q_target(o', m', a)``; ``y = r`` on terminal transitions."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    X2 = np.concatenate([np.atleast_2d(o2), np.atleast_2d(m2)], axis=1)
    best = q_forward(target_params, X2).max(axis=1)
    y = np.asarray(r, dtype=float) + gamma * np.where(done, 0.0, best)
    return float(y[0]) if np.ndim(r) == 0 else y


def train_step(buffer: ReplayBuffer, batch_size: int, params, target_params, optimizer,
               rng: np.random.Generator, gamma: float) -> float:
    """One optimiser step on a uniformly sampled minibatch; returns the loss before the step."""
    batch = buffer.sample(batch_size, rng)
    y = td_target(batch["r"], gamma, target_params, batch["o2"], batch["m2"], batch["done"])
    X = np.concatenate([batch["o"], batch["m"]], axis=1)
    loss, grads = bellman_loss_and_grad(params, X, batch["a"], y)
    optimizer.step(params, grads)
    return loss


def sync_target(params) -> list[np.ndarray]:
    return [p.copy() for p in params]


def episode_return(rewards, gamma: float) -> float:
    r = np.asarray(rewards, dtype=float)
    return float(np.sum(r * gamma ** np.arange(len(r)))) if len(r) else 0.0


def epsilon_schedule(progress: float, cfg: DqnConfig) -> float:
    """Linear anneal from ``eps_start`` to ``eps_end`` over the first ``eps_anneal_fraction`` of training."""
    if cfg.eps_anneal_fraction <= 0:
        return cfg.eps_end
    frac = min(max(progress / cfg.eps_anneal_fraction, 0.0), 1.0)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


@dataclass
class DqnAgent:
    cfg: DqnConfig
    params: list
    target: list
    optimizer: Adam
    buffer: ReplayBuffer
    obs_dim: int = OBS_DIM
    shared_dim: int = SHARED_DIM
    train_steps: int = 0
    since_sync: int = 0
    losses: list = field(default_factory=list)

    @classmethod
    def create(cls, cfg: DqnConfig, rng: np.random.Generator, obs_dim: int = OBS_DIM,
               shared_dim: int = SHARED_DIM) -> "DqnAgent":
        params = init_params([obs_dim + shared_dim, *cfg.hidden, N_ACTIONS], rng)
        return cls(cfg=cfg, params=params, target=sync_target(params), optimizer=Adam(lr=cfg.lr),
                   buffer=ReplayBuffer(cfg.buffer_capacity, obs_dim, shared_dim),
                   obs_dim=obs_dim, shared_dim=shared_dim)

    @property
    def sizes(self) -> list[int]:
        return [self.params[0].shape[0]] + [w.shape[1] for w in self.params[0::2]]

    def values(self, o, m) -> np.ndarray:
        return q_forward(self.params, np.concatenate([np.atleast_2d(o), np.atleast_2d(m)], axis=1))

    def act(self, o, m, epsilon: float, rng: np.random.Generator):
        """Proposed actions and the value rows the supervisor ranks them by."""
        q = self.values(o, m)
        return select_actions(q, epsilon, rng), q

    def remember(self, o, m, a, r, o2, m2, done):
        self.buffer.add_batch(o, m, a, r, o2, m2, done)

    def learn(self, rng: np.random.Generator) -> float | None:
        loss = None
        for _ in range(self.cfg.train_steps_per_epoch):
            if len(self.buffer) < self.cfg.batch_size:
                break
            loss = train_step(self.buffer, self.cfg.batch_size, self.params, self.target, self.optimizer,
                              rng, self.cfg.gamma)
            self.train_steps += 1
            self.since_sync += 1
            if self.since_sync >= self.cfg.target_sync_interval:
                self.target = sync_target(self.params)
                self.since_sync = 0
            self.losses.append(loss)
        return loss

    # checkpoints -----------------------------------------------------------------

    def save(self, path, extra: dict | None = None):
        """Write an ``.npz`` with a JSON architecture header; ``extra`` must be JSON-serialisable."""
        check_finite(self.params)
        header = {"version": CHECKPOINT_VERSION, "sizes": self.sizes, "config": asdict(self.cfg),
                  "train_steps": self.train_steps, "since_sync": self.since_sync, "adam_t": self.optimizer.t,
                  "extra": extra or {}}
        arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
        for i, p in enumerate(self.params):
            arrays[f"param_{i}"] = p
            arrays[f"target_{i}"] = self.target[i]
        for i, (m, v) in enumerate(zip(self.optimizer.m, self.optimizer.v)):
            arrays[f"adam_m_{i}"] = m
            arrays[f"adam_v_{i}"] = v
        for k, v in self.buffer.state_dict().items():
            arrays[f"buffer_{k}"] = np.asarray(v)
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp.npz")
        np.savez(tmp, **arrays)
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> tuple["DqnAgent", dict]:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header['version']}")
            cfg_d = header["config"]
            cfg_d["hidden"] = tuple(cfg_d["hidden"])
            cfg = DqnConfig(**cfg_d)
            n = 2 * (len(header["sizes"]) - 1)
            params = [z[f"param_{i}"].copy() for i in range(n)]
            target = [z[f"target_{i}"].copy() for i in range(n)]
            opt = Adam(lr=cfg.lr, t=header["adam_t"])
            if "adam_m_0" in z:
                opt.m = [z[f"adam_m_{i}"].copy() for i in range(n)]
                opt.v = [z[f"adam_v_{i}"].copy() for i in range(n)]
            sizes = header["sizes"]
            obs_dim = z["buffer_o"].shape[1] if z["buffer_o"].ndim == 2 else sizes[0] - SHARED_DIM
            buf = ReplayBuffer(cfg.buffer_capacity, obs_dim, sizes[0] - obs_dim)
            buf.load_state_dict({k[len("buffer_"):]: z[k] for k in z.files if k.startswith("buffer_")})
        for p, s_in, s_out in zip(params[0::2], sizes[:-1], sizes[1:]):
            if p.shape != (s_in, s_out):
                raise ValueError("checkpoint parameters do not match the architecture header")
        agent = cls(cfg=cfg, params=params, target=target, optimizer=opt, buffer=buf, obs_dim=obs_dim,
                    shared_dim=sizes[0] - obs_dim, train_steps=header["train_steps"],
                    since_sync=header["since_sync"])
        return agent, header["extra"]
