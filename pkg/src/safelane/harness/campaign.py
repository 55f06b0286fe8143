"""Training and evaluation campaigns over a (density, seed) grid.

Every replicate owns independent random streams derived from
``(seed, density, stream, episode)``, so switching one subsystem (say, the
noise) leaves every other stream untouched and an interrupted run resumes
from a checkpoint with the same continuation.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..agent.dqn import DqnAgent, epsilon_schedule
from ..cbf_qp import QpTrace
from ..safety_supervisor import ES
from ..traffic_env.env import EnvConfig, TrafficEnv
from ..traffic_env.metrics import CSV_COLUMNS, EpochRecord
from ..traffic_env.road import RoadConfig
from .config import CampaignConfig, to_dict

STREAMS = {"scene": 0, "noise": 1, "explore": 2, "sample": 3, "init": 4}

SUMMARY_COLUMNS = ("density", "seed", "mode", "n_vehicles", "mean_F", "mean_C", "mean_reward", "total_overrides",
                   "total_es", "min_headway", "collisions", "train_epochs", "eval_epochs")

RECORD_FIELDS = tuple(f.name for f in fields(EpochRecord))


def density_key(density: float) -> int:
    return int(round(density * 1_000_000))


def stream(seed: int, density: float, name: str, episode: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), density_key(density), STREAMS[name], int(episode)])


def replicate_tag(mode: str, density: float, seed: int) -> str:
    return f"{mode}_rho{density:g}_seed{seed}"


def build_env_config(cfg: CampaignConfig, density: float) -> EnvConfig:
    rs = cfg.road
    road = RoadConfig(length=rs.length, lanes=rs.lanes, lane_width=rs.lane_width, vehicle_length=rs.vehicle_length,
                      density_unit=rs.density_unit,
                      closures=rs.closures if cfg.scenario == "road_closure" else ())
    e = cfg.env
    population = "all_idm" if cfg.mode == "idm" else e.population
    return EnvConfig(road=road, n_vehicles=max(road.vehicles_for_density(density), 1), population=population,
                     rl_fraction=e.rl_fraction, feedback=cfg.mode != "vanilla_rl",
                     ticks_per_epoch=e.ticks_per_epoch, reward_weight=e.reward_weight,
                     comfort_theta=e.comfort_theta, lane_change_window=e.lane_change_window, comm_range=e.comm_range,
                     noise_W=e.noise_W, init_speed_range=e.init_speed_range, init_max_closing=e.init_max_closing,
                     bicycle=cfg.bicycle, box=cfg.box, supervisor=cfg.supervisor, planner=cfg.planner, idm=cfg.idm,
                     gap=cfg.gap)


def config_digest(cfg: CampaignConfig) -> str:
    """Hash of everything that shapes a replicate's trajectory (not the output location or grid)."""
    d = to_dict(replace(cfg, out=None, workers=1, densities=(1.0,), seeds=(0,), trace_qp=False))
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ReplicateResult:
    density: float
    seed: int
    mode: str
    n_vehicles: int
    train: list[EpochRecord] = field(default_factory=list)
    eval: list[EpochRecord] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    transitions: int = 0

    def window(self, size: int) -> list[EpochRecord]:
        src = self.eval if self.eval else self.train
        return src[-size:]

    def summary(self, eval_window: int) -> dict:
        win = self.window(eval_window)
        allr = self.train + self.eval
        mean = lambda name: float(np.mean([getattr(r, name) for r in win])) if win else float("nan")  # noqa: E731
        return {"density": self.density, "seed": self.seed, "mode": self.mode, "n_vehicles": self.n_vehicles,
                "mean_F": mean("F"), "mean_C": mean("C"), "mean_reward": mean("reward"),
                "total_overrides": int(sum(r.overrides for r in allr)),
                "total_es": int(sum(r.es_count for r in allr)),
                "min_headway": float(min((r.min_headway for r in allr), default=float("nan"))),
                "collisions": int(sum(r.collision for r in allr)),
                "train_epochs": len(self.train), "eval_epochs": len(self.eval)}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c] if isinstance(r, dict) else getattr(r, c)) for c in columns])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- checkpoints ---------------------------------------------------------------------------------


def _records_to_array(recs: list[EpochRecord]) -> list[list[float]]:
    return [[float(getattr(r, k)) for k in RECORD_FIELDS] for r in recs]


def _records_from_array(rows) -> list[EpochRecord]:
    out = []
    for row in rows:
        d = dict(zip(RECORD_FIELDS, row))
        for k in ("episode", "epoch", "overrides", "es_count", "lane_changes"):
            d[k] = int(d[k])
        d["collision"] = bool(d["collision"])
        out.append(EpochRecord(**d))
    return out


def save_checkpoint(path, agent: DqnAgent, res: ReplicateResult, episodes_done: int, epochs_done: int,
                    digest: str) -> None:
    extra = {"episodes_done": episodes_done, "epochs_done": epochs_done, "digest": digest,
             "train": _records_to_array(res.train), "losses": res.losses, "transitions": res.transitions}
    agent.save(path, extra)


def load_checkpoint(path):
    return DqnAgent.load(path)


# --- replicate -----------------------------------------------------------------------------------


def _run_episode(env: TrafficEnv, cfg: CampaignConfig, agent: DqnAgent | None, seed: int, density: float,
                 episode: int, *, learn: bool, epsilon_at, res: ReplicateResult, epoch_counter: int,
                 n_epochs: int | None = None):
    """One episode; returns its records and the updated global epoch counter."""
    o, m = env.reset(stream(seed, density, "scene", episode), stream(seed, density, "noise", episode),
                     episode=episode)
    explore = stream(seed, density, "explore", episode)
    sample = stream(seed, density, "sample", episode)
    recs = []
    n_epochs = cfg.epochs if n_epochs is None else n_epochs
    for k in range(n_epochs):
        if agent is not None and len(o):
            eps = epsilon_at(epoch_counter)
            proposed, q = agent.act(o, m, eps, explore)
        else:
            proposed, q = np.zeros(len(o), dtype=int), None
        out = env.run_epoch(proposed, q)
        recs.append(out.record)
        epoch_counter += 1
        done = out.collision or k == n_epochs - 1
        if learn and agent is not None and len(o):
            # emergency stops have no action symbol; the transition keeps the proposal
            stored = np.where(out.executed == ES, out.proposed, out.executed)
            agent.remember(o, m, stored, np.full(len(o), out.reward), out.o2, out.m2, np.full(len(o), done))
            res.transitions += len(o)
            loss = agent.learn(sample)
            if loss is not None:
                res.losses.append(loss)
        o, m = out.o2, out.m2
        if out.collision:
            break
    return recs, epoch_counter


def run_replicate(cfg: CampaignConfig, density: float, seed: int, out_dir=None,
                  stop_after_episodes: int | None = None) -> ReplicateResult:
    """Train (learning modes) then evaluate greedily; IDM mode only evaluates.

    ``stop_after_episodes`` interrupts training after that many episodes
    (after checkpointing), which is how resumption is exercised.
    """
    env_cfg = build_env_config(cfg, density)
    out = Path(out_dir) if out_dir is not None else None
    tag = replicate_tag(cfg.mode, density, seed)
    trace = None
    trace_fh = None
    if out is not None and cfg.trace_qp:
        (out / "traces").mkdir(parents=True, exist_ok=True)
        trace_fh = open(out / "traces" / f"{tag}.jsonl", "w")
        trace = QpTrace(stream=trace_fh)
    env = TrafficEnv(env_cfg, trace=trace)
    res = ReplicateResult(density=density, seed=seed, mode=cfg.mode, n_vehicles=env_cfg.n_vehicles)
    digest = config_digest(cfg)
    learning = cfg.mode != "idm"
    agent = None
    start_episode, epoch_counter = 0, 0
    ckpt = out / "checkpoints" / f"{tag}.npz" if out is not None else None

    try:
        if learning:
            agent = DqnAgent.create(cfg.dqn, stream(seed, density, "init"))
            if ckpt is not None and ckpt.exists():
                loaded, extra = load_checkpoint(ckpt)
                if extra.get("digest") == digest:
                    agent = loaded
                    start_episode = extra["episodes_done"]
                    epoch_counter = extra["epochs_done"]
                    res.train = _records_from_array(extra["train"])
                    res.losses = list(extra["losses"])
                    res.transitions = extra["transitions"]
            total = cfg.episodes * cfg.epochs
            epsilon_at = lambda n: epsilon_schedule(n / total, cfg.dqn)  # noqa: E731
            for ep in range(start_episode, cfg.episodes):
                recs, epoch_counter = _run_episode(env, cfg, agent, seed, density, ep, learn=True,
                                                   epsilon_at=epsilon_at, res=res, epoch_counter=epoch_counter)
                res.train.extend(recs)
                last = ep == cfg.episodes - 1
                stopping = stop_after_episodes is not None and ep + 1 >= stop_after_episodes
                if ckpt is not None and (last or stopping or (ep + 1) % cfg.checkpoint_every == 0):
                    ckpt.parent.mkdir(parents=True, exist_ok=True)
                    save_checkpoint(ckpt, agent, res, ep + 1, epoch_counter, digest)
                if stopping and not last:
                    return res
        n_eval = cfg.eval_episodes if learning else max(cfg.eval_episodes, 1)
        res.eval = evaluate(env, cfg, agent, seed, density, n_eval, res)
    finally:
        if trace_fh is not None:
            trace_fh.close()

    if out is not None:
        (out / "epochs").mkdir(parents=True, exist_ok=True)
        write_csv(out / "epochs" / f"{tag}.csv", CSV_COLUMNS, res.train + res.eval)
    return res


def evaluate(env: TrafficEnv, cfg: CampaignConfig, agent: DqnAgent | None, seed: int, density: float,
             n_episodes: int, res: ReplicateResult | None = None) -> list[EpochRecord]:
    """Greedy rollouts without learning; episode numbers continue after training."""
    recs = []
    sink = res or ReplicateResult(density, seed, cfg.mode, env.cfg.n_vehicles)
    for j in range(n_episodes):
        ep = cfg.episodes + j
        r, _ = _run_episode(env, cfg, agent, seed, density, ep, learn=False, epsilon_at=lambda n: 0.0,
                            res=sink, epoch_counter=0, n_epochs=cfg.eval_length)
        recs.extend(r)
    return recs


# --- campaign ------------------------------------------------------------------------------------


@dataclass
class ResultTable:
    cfg: CampaignConfig
    replicates: dict = field(default_factory=dict)

    @property
    def rows(self) -> list[dict]:
        return [self.replicates[k].summary(self.cfg.eval_window) for k in sorted(self.replicates)]

    def column(self, name: str, density: float | None = None) -> np.ndarray:
        return np.array([r[name] for r in self.rows if density is None or r["density"] == density])

    def to_csv(self, path) -> None:
        write_csv(path, SUMMARY_COLUMNS, self.rows)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])
        return buf.getvalue()


def _replicate_job(args):
    cfg, density, seed, out = args
    return (density, seed), run_replicate(cfg, density, seed, out)


def run_campaign(cfg: CampaignConfig, out_dir=None) -> ResultTable:
    """Run every (density, seed) replicate and write the summary CSV when an output dir is given."""
    out = out_dir if out_dir is not None else cfg.out
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")
    jobs = [(cfg, d, s, out) for d in cfg.densities for s in cfg.seeds]
    table = ResultTable(cfg)
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for key, res in pool.map(_replicate_job, jobs):
                table.replicates[key] = res
    else:
        for job in jobs:
            key, res = _replicate_job(job)
            table.replicates[key] = res
    if out is not None:
        table.to_csv(out / f"summary_{cfg.mode}.csv")
    return table


def run_eval_only(cfg: CampaignConfig, out_dir) -> ResultTable:
    """Greedy evaluation of saved checkpoints (IDM mode needs none)."""
    out = Path(out_dir)
    table = ResultTable(cfg)
    for d in cfg.densities:
        for s in cfg.seeds:
            env_cfg = build_env_config(cfg, d)
            env = TrafficEnv(env_cfg)
            agent = None
            if cfg.mode != "idm":
                path = out / "checkpoints" / f"{replicate_tag(cfg.mode, d, s)}.npz"
                if not path.exists():
                    raise FileNotFoundError(f"no checkpoint for density {d:g} seed {s}: {path}")
                agent, _ = load_checkpoint(path)
            res = ReplicateResult(d, s, cfg.mode, env_cfg.n_vehicles)
            res.eval = evaluate(env, cfg, agent, s, d, max(cfg.eval_episodes, 1))
            table.replicates[(d, s)] = res
    table.to_csv(out / f"eval_{cfg.mode}.csv")
    return table


def records_as_dicts(recs) -> list[dict]:
    return [asdict(r) for r in recs]
