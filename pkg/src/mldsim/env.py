"""Per-arm decision process over one shared, lockstep-stepped workspace."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import end_effector_position
from .perception import (
    DEFAULT_WEIGHTS,
    ObstacleEntry,
    base_frame_of,
    cluster_humans,
    obstacles_from_clusters,
    partner_robot_obstacles,
    static_obstacles,
)
from .scene import SceneConfig, WorldState, advance_world, build_world, synth_cloud


class UsageError(RuntimeError):
    """An API was called in a state that does not allow it."""


class Branch(str, enum.Enum):
    goal = "goal"
    obstacle = "obstacle"
    free = "free"


@dataclass(frozen=True)
class RewardParams:
    l1: float = 0.05
    l2: float = 0.15
    sphere_radius: float = 0.40
    weights: tuple = DEFAULT_WEIGHTS
    gamma: float = 0.99

    def __post_init__(self):
        if not 0 < self.l1 < self.l2 < self.sphere_radius:
            raise ValueError("need 0 < l1 < l2 < sphere_radius")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (4,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must be 4 non-negative values summing to 1, got {self.weights}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


@dataclass(frozen=True)
class EpisodeConfig:
    T: int = 40
    dt: float = 0.1
    max_timesteps_total: int = 56_000
    # episodes always run T steps unless this is set
    terminate_on_goal: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class DbscanConfig:
    eps: float = 0.10
    min_pts: int = 10


def compute_reward(d_eg: float, entries, params: RewardParams) -> tuple[float, Branch]:
    """Piecewise reward: goal bonus, obstacle-penalised progress, or plain progress.

    The goal case wins over the obstacle case when both hold. ``D_min`` is
    the weighted distance of the single closest (by weighted distance) entry.
    """
    if d_eg <= params.l2:
        return 2.0, Branch.goal
    entries = list(entries)
    if any(np.any(e.distances < params.sphere_radius) for e in entries):
        d_min = min(float(np.dot(params.weights, e.distances)) for e in entries)
        return 2.0 * d_min - params.l1 - d_eg / 2.0, Branch.obstacle
    return -d_eg / 2.0, Branch.free


def discounted_return(rewards, gamma: float) -> float:
    """``sum_k gamma**k * r_k`` for ``k = 1..T``; the first reward is discounted once."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    r = np.asarray(rewards, dtype=float)
    return float(np.sum(gamma ** np.arange(1, len(r) + 1) * r))


@dataclass
class Observation:
    joint_angles: np.ndarray
    entries: tuple[ObstacleEntry, ...]
    goal: np.ndarray

    def sequence(self) -> np.ndarray:
        """``(L, 12)`` LSTM input, in stored entry order."""
        if not self.entries:
            return np.zeros((0, 12))
        return np.stack([e.features() for e in self.entries])


def order_entries(entries) -> tuple[ObstacleEntry, ...]:
    """Farthest first, so the closest obstacle is the last one the LSTM reads."""
    return tuple(sorted(entries, key=lambda e: (-e.weighted_distance, int(e.kind), e.id)))


def assemble_observation(world: WorldState, agent_index: int, *entry_groups) -> Observation:
    arm = world.arms[agent_index]
    to_base = base_frame_of(arm)
    entries = [e for group in entry_groups for e in group]
    return Observation(
        joint_angles=world.joints[agent_index].copy(),
        entries=order_entries(entries),
        goal=to_base.apply(world.boxes[agent_index].goal),
    )


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


@dataclass
class _AgentState:
    steps: int = 0
    done: bool = False


class SharedWorkspaceEnv:
    """Two arms, one world. ``step`` takes both agents' commands for one tick."""

    n_agents = 2

    def __init__(
        self,
        scene: SceneConfig = SceneConfig(),
        reward: RewardParams = RewardParams(),
        episode: EpisodeConfig = EpisodeConfig(),
        dbscan: DbscanConfig = DbscanConfig(),
    ):
        self.scene = scene
        self.reward = reward
        self.episode = episode
        self.dbscan = dbscan
        self.world: WorldState | None = None
        self._agents = [_AgentState(), _AgentState()]
        self._rng: np.random.Generator | None = None
        self.last_observations: tuple[Observation, Observation] | None = None

    def reset(self, seed: int) -> tuple[Observation, Observation]:
        ss = np.random.SeedSequence(int(seed))
        phase_rng, cloud_ss = ss.spawn(2)
        base = build_world(self.scene, rng_seed=int(seed))
        phase = 0.0
        if base.human is not None and self.scene.human.random_phase:
            phase = float(np.random.default_rng(phase_rng).uniform(0.0, base.human.period))
        self.world = replace(base, human_phase=phase)
        self._rng = np.random.default_rng(cloud_ss)
        self._agents = [_AgentState(), _AgentState()]
        obs, _ = self._observe()
        self.last_observations = obs
        return obs

    def agent_done(self, i: int) -> bool:
        return self._agents[i].done

    def step(self, actions) -> tuple[StepResult, StepResult]:
        """Advance one tick. A finished agent must pass ``None`` and holds still."""
        if self.world is None:
            raise UsageError("call reset() before step()")
        if len(actions) != 2:
            raise UsageError("need one action (or None) per agent")
        cmds = []
        for st, a in zip(self._agents, actions):
            if st.done:
                if a is not None:
                    raise UsageError("episode already terminated for this agent; reset first")
                cmds.append(np.zeros(6))
            else:
                if a is None:
                    a = np.zeros(6)
                a = np.asarray(a, dtype=float)
                if a.shape != (6,) or not np.all(np.isfinite(a)):
                    raise ValueError(f"action must be 6 finite joint velocities, got {a}")
                cmds.append(a)
        self.world = advance_world(self.world, cmds, self.episode.dt)
        obs, geo = self._observe()
        self.last_observations = obs
        results = []
        for i, st in enumerate(self._agents):
            d_eg, entries = geo[i]
            reward, branch = compute_reward(d_eg, entries, self.reward)
            if st.done:
                results.append(StepResult(obs[i], 0.0, True, {"idle": True}))
                continue
            st.steps += 1
            st.done = st.steps >= self.episode.T or (
                self.episode.terminate_on_goal and branch is Branch.goal
            )
            min_d = min((float(e.distances.min()) for e in entries), default=float("inf"))
            info = {
                "d_eg": d_eg,
                "min_obstacle_dist": min_d,
                "branch": branch,
                "n_dynamic": sum(1 for e in entries if e.kind == 0),
                "step": st.steps,
            }
            results.append(StepResult(obs[i], float(reward), st.done, info))
        return tuple(results)

    def _observe(self):
        w = self.world
        cloud = synth_cloud(
            w, self.scene.density, self.scene.noise_sd, self.scene.label_flip_rate, self._rng
        )
        clusters = cluster_humans(cloud, self.dbscan.eps, self.dbscan.min_pts)
        weights = self.reward.weights
        obs, geo = [], []
        for i in (0, 1):
            arm, q = w.arms[i], w.joints[i]
            j = 1 - i
            to_base = base_frame_of(arm)
            dyn = obstacles_from_clusters(clusters, arm, q, to_base, weights)
            stat = static_obstacles(w, arm, q, to_base, weights, self.scene.include_table_obstacle)
            rob = partner_robot_obstacles(w.arms[j], w.joints[j], arm, q, to_base, weights)
            o = assemble_observation(w, i, dyn, stat, rob)
            d_eg = float(np.linalg.norm(end_effector_position(arm, q) - w.boxes[i].goal))
            obs.append(o)
            geo.append((d_eg, o.entries))
        return tuple(obs), geo


class ArmEnv:
    """Single-agent view of the shared workspace; the other arm holds still."""

    def __init__(self, shared: SharedWorkspaceEnv, agent_index: int = 0):
        self.shared = shared
        self.agent_index = agent_index
        self._terminated = True

    def reset(self, seed: int) -> Observation:
        obs = self.shared.reset(seed)
        self._terminated = False
        return obs[self.agent_index]

    def step(self, action) -> StepResult:
        if self._terminated:
            raise UsageError("episode terminated; call reset()")
        acts = [None, None]
        acts[self.agent_index] = action
        other = 1 - self.agent_index
        if self.shared.agent_done(other):
            acts[other] = None
        res = self.shared.step(acts)[self.agent_index]
        self._terminated = res.done
        return res
