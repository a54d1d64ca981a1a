"""Experiment orchestration: training runs, evaluation, cloud dumps and plots.

Every file a run writes carries the config hash, and reruns with the same
config reproduce them byte for byte (wall-clock time lives in its own
``timing.json``).
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, config_hash, dump_toml, to_dict
from .env import SharedWorkspaceEnv
from .neural import load_checkpoint, save_checkpoint
from .ppo import Agent, EpisodeRecord, episode_seed, train_dual
from .scene import build_world, dump_cloud, synth_cloud

METRIC_COLUMNS = [
    "episode",
    "timestep",
    "cum_reward",
    "steps",
    "reached_goal",
    "min_obstacle_dist",
    "branch_goal_count",
]
SUCCESS_WINDOW = 200


class DataError(ValueError):
    """Input data (CSV, checkpoint) does not have the expected shape."""


def agent_name(index: int) -> str:
    return f"agent{index + 1}"


def make_env(cfg: RunConfig) -> SharedWorkspaceEnv:
    return SharedWorkspaceEnv(cfg.scene, cfg.reward, cfg.episode, cfg.dbscan)


def make_agents(cfg: RunConfig) -> list:
    return [
        Agent(cfg.network, cfg.ppo, seed=episode_seed(cfg.seed, 10_000 + i)) if i in cfg.agents else None
        for i in range(2)
    ]


def smooth(values, window: int = 50) -> np.ndarray:
    """Trailing moving average; the first entries average what exists so far."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return v
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


# --------------------------------------------------------------------------
# metrics files


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, float):
        return "inf" if math.isinf(x) else f"{x:.6f}"
    return str(x)


def write_metrics(path: Path, records: list[EpisodeRecord], chash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {chash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in METRIC_COLUMNS])


def metrics_hash(path: str | Path) -> str:
    """Config hash from a metrics file's comment header, or ``""``."""
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            if line[1:].strip().startswith("config_hash:"):
                return line.split(":", 1)[1].strip()
    return ""


def read_metrics(path: str | Path, required=("episode", "cum_reward")) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    cols = reader.fieldnames or []
    for name in required:
        if name not in cols:
            raise DataError(f"{path}: missing column '{name}'")
    rows = list(reader)
    out = {}
    for name in cols:
        try:
            out[name] = np.array([float(r[name]) for r in rows])
        except ValueError as exc:
            raise DataError(f"{path}: column '{name}': {exc}") from None
    return out


# --------------------------------------------------------------------------
# plots


def plot_learning_curves(csv_paths, out_dir: str | Path, window: int = 50, chash: str = "") -> list[Path]:
    """One SVG per metrics file; all share x and y limits."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = [read_metrics(p) for p in csv_paths]
    chash = chash or metrics_hash(csv_paths[0])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    xs_max = max((s["episode"].max() + 1 if len(s["episode"]) else 1) for s in series)
    ys = np.concatenate([s["cum_reward"] for s in series]) if series else np.zeros(1)
    ys = ys if len(ys) else np.zeros(1)
    pad = 0.05 * max(float(ys.max() - ys.min()), 1.0)
    ylim = (float(ys.min()) - pad, float(ys.max()) + pad)

    written = []
    with matplotlib.rc_context({"svg.hashsalt": chash or "mldsim", "svg.fonttype": "none"}):
        for p, s in zip(csv_paths, series):
            fig, ax = plt.subplots(figsize=(6.4, 3.6))
            ax.plot(s["episode"], s["cum_reward"], lw=0.6, alpha=0.45, label="per episode")
            ax.plot(s["episode"], smooth(s["cum_reward"], window), lw=1.6, label=f"moving average ({window})")
            ax.set_xlim(0, xs_max)
            ax.set_ylim(*ylim)
            ax.set_xlabel("episode")
            ax.set_ylabel("cumulative reward")
            ax.set_title(Path(p).stem)
            ax.legend(loc="lower right", fontsize=8)
            fig.tight_layout()
            target = out_dir / (Path(p).stem.replace("metrics_", "learning_curve_") + ".svg")
            fig.savefig(target, format="svg", metadata={"Date": None, "Description": f"config_hash: {chash}"})
            plt.close(fig)
            written.append(target)
    return written


# --------------------------------------------------------------------------
# runs


@dataclass
class RunSummary:
    config_hash: str
    curves: dict
    smoothed: dict
    success_rate_final: dict
    episodes: dict
    wall_clock_seconds: float = 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock_seconds")
        return d


def checkpoint_metadata(cfg: RunConfig, index: int, updates: int) -> dict:
    return {"agent": index, "config_hash": config_hash(cfg), "updates": updates,
            "network": to_dict(cfg.network)}


def run_training(cfg: RunConfig, out_dir: str | Path) -> RunSummary:
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    (out / "config.toml").write_text(f"# config_hash: {chash}\n" + dump_toml(cfg))

    env = make_env(cfg)
    agents = make_agents(cfg)
    every = max(1, cfg.ppo.checkpoint_every)

    def on_update(i, agent, _stats):
        if agent.updates % every == 0:
            path = out / "checkpoints" / f"{agent_name(i)}_update{agent.updates:04d}.json"
            save_checkpoint(path, {"policy": agent.policy, "value": agent.value},
                            checkpoint_metadata(cfg, i, agent.updates))

    t0 = time.perf_counter()
    result = train_dual(env, agents, cfg.ppo.total_timesteps, seed=cfg.seed, on_update=on_update)
    wall = time.perf_counter() - t0

    csvs = []
    for i, recs in result.records.items():
        agent = agents[i]
        save_checkpoint(out / "checkpoints" / f"{agent_name(i)}_final.json",
                        {"policy": agent.policy, "value": agent.value},
                        checkpoint_metadata(cfg, i, agent.updates))
        path = out / f"metrics_{agent_name(i)}.csv"
        write_metrics(path, recs, chash)
        csvs.append(path)
    plot_learning_curves(csvs, out, cfg.smoothing_window, chash)

    curves, smoothed, success, counts = {}, {}, {}, {}
    for i, recs in result.records.items():
        name = agent_name(i)
        c = [round(r.cum_reward, 6) for r in recs]
        curves[name] = c
        smoothed[name] = [round(x, 6) for x in smooth(c, cfg.smoothing_window)]
        tail = recs[-SUCCESS_WINDOW:]
        success[name] = float(np.mean([r.reached_goal for r in tail])) if tail else 0.0
        counts[name] = len(recs)
    summary = RunSummary(chash, curves, smoothed, success, counts, wall)
    (out / "summary.json").write_text(json.dumps(summary.to_json(), sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"config_hash": chash, "wall_clock_seconds": wall}) + "\n")
    return summary


@dataclass
class EvalSummary:
    agent: int
    episodes: int
    mean_cum_reward: float
    success_rate: float
    mean_min_obstacle_dist: float


def evaluate(cfg: RunConfig, checkpoint: str | Path | None, episodes: int, seed: int,
             agent_index: int | None = None) -> tuple[EvalSummary, list[EpisodeRecord]]:
    """Greedy (mean-action) rollouts of one agent; the other arm holds still.

    ``checkpoint=None`` evaluates a freshly initialised (untrained) policy.
    """
    meta = {}
    agent = Agent(cfg.network, cfg.ppo, seed=0)
    if checkpoint is not None:
        meta = load_checkpoint(checkpoint, {"policy": agent.policy, "value": agent.value})
    index = agent_index if agent_index is not None else int(meta.get("agent", 0))
    env = make_env(cfg)
    records = []
    for ep in range(episodes):
        obs = env.reset(episode_seed(seed, ep))
        cum, steps, goals, min_d, t = 0.0, 0, 0, float("inf"), 0
        while not env.agent_done(index):
            a, _, _ = agent.act(obs[index], greedy=True)
            acts = [None, None]
            acts[index] = a
            res = env.step(acts)
            r = res[index]
            cum += r.reward
            steps += 1
            goals += r.info["branch"] == "goal"
            min_d = min(min_d, r.info["min_obstacle_dist"])
            obs = tuple(x.observation for x in res)
            t += 1
        records.append(EpisodeRecord(ep, t, cum, steps, goals > 0, min_d, goals))
    finite = [r.min_obstacle_dist for r in records if math.isfinite(r.min_obstacle_dist)]
    summary = EvalSummary(
        agent=index,
        episodes=episodes,
        mean_cum_reward=float(np.mean([r.cum_reward for r in records])) if records else 0.0,
        success_rate=float(np.mean([r.reached_goal for r in records])) if records else 0.0,
        mean_min_obstacle_dist=float(np.mean(finite)) if finite else float("inf"),
    )
    return summary, records


def write_cloud(cfg: RunConfig, path: str | Path) -> int:
    """Synthesize one labeled cloud of the initial scene and write it as CSV."""
    world = build_world(cfg.scene)
    rng = np.random.default_rng(cfg.seed)
    cloud = synth_cloud(world, cfg.scene.density, cfg.scene.noise_sd, cfg.scene.label_flip_rate, rng)
    dump_cloud(path, cloud, header_lines=[f"config_hash: {config_hash(cfg)}"])
    return len(cloud)
