"""Clipped-surrogate policy optimisation for the arm agents."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import Observation, UsageError
from .neural import (
    NetworkConfig,
    ObsBatch,
    PolicyNet,
    ValueNet,
    gaussian_entropy,
    gaussian_logprob,
)


@dataclass(frozen=True)
class PpoConfig:
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    epochs_per_update: int = 10
    minibatch_size: int = 256
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    rollout_length: int = 2048
    max_grad_norm: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    total_timesteps: int = 56_000
    checkpoint_every: int = 10

    def __post_init__(self):
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.rollout_length < 1 or self.minibatch_size < 1 or self.epochs_per_update < 0:
            raise ValueError("rollout_length, minibatch_size must be >= 1; epochs >= 0")


def gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Advantages and value targets for one contiguous rollout.

    ``dones[t]`` marks that the episode ended at step ``t``; ``last_value``
    bootstraps a rollout cut mid-episode.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    if not len(r) == len(v) == len(d):
        raise UsageError(f"length mismatch: rewards {len(r)}, values {len(v)}, dones {len(d)}")
    adv = np.zeros_like(r)
    next_value, running = float(last_value), 0.0
    for t in reversed(range(len(r))):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_value * live - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = v[t]
    return adv, adv + v


def clipped_surrogate(logprob_new, logprob_old, advantage, clip_epsilon: float) -> np.ndarray:
    ratio = np.exp(np.asarray(logprob_new) - np.asarray(logprob_old))
    adv = np.asarray(advantage, dtype=float)
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return -np.minimum(ratio * adv, clipped * adv)


def clip_binds(ratio, advantage, clip_epsilon: float) -> np.ndarray:
    """Samples whose surrogate takes the clipped branch (zero policy gradient)."""
    return ((advantage > 0) & (ratio > 1 + clip_epsilon)) | ((advantage < 0) & (ratio < 1 - clip_epsilon))


class Adam:
    def __init__(self, n: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, values: np.ndarray, grads: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads * grads
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Transition:
    joints: np.ndarray
    goal: np.ndarray
    seq: np.ndarray
    action: np.ndarray
    logprob_old: float
    reward: float
    value_old: float
    done: bool


@dataclass
class RolloutBuffer:
    capacity: int
    transitions: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def full(self) -> bool:
        return len(self.transitions) >= self.capacity

    def add(self, obs: Observation, action, logprob: float, reward: float, value: float, done: bool) -> None:
        if self.full:
            raise UsageError("rollout buffer is full")
        self.transitions.append(
            Transition(obs.joint_angles, obs.goal, obs.sequence(), np.asarray(action, dtype=float),
                       float(logprob), float(reward), float(value), bool(done))
        )

    def clear(self) -> None:
        self.transitions = []

    def episodes(self) -> list[list[Transition]]:
        out, cur = [], []
        for tr in self.transitions:
            cur.append(tr)
            if tr.done:
                out.append(cur)
                cur = []
        if cur:
            out.append(cur)
        return out

    def batch(self, idx) -> tuple[ObsBatch, np.ndarray]:
        trs = [self.transitions[i] for i in idx]
        obs = ObsBatch.from_parts([t.joints for t in trs], [t.goal for t in trs], [t.seq for t in trs])
        return obs, np.stack([t.action for t in trs])

    def arrays(self):
        trs = self.transitions
        return (
            np.array([t.reward for t in trs]),
            np.array([t.value_old for t in trs]),
            np.array([t.done for t in trs], dtype=float),
            np.array([t.logprob_old for t in trs]),
        )


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float


class Agent:
    """Actor and critic networks plus their optimiser state and a private RNG."""

    def __init__(self, net_cfg: NetworkConfig = NetworkConfig(), ppo_cfg: PpoConfig = PpoConfig(), seed: int = 0):
        ss = np.random.SeedSequence(int(seed))
        pol_ss, val_ss, act_ss = ss.spawn(3)
        self.net_cfg = net_cfg
        self.config = ppo_cfg
        self.policy = PolicyNet(net_cfg, np.random.default_rng(pol_ss))
        self.value = ValueNet(net_cfg, np.random.default_rng(val_ss))
        self.rng = np.random.default_rng(act_ss)
        c = ppo_cfg
        self.policy_opt = Adam(len(self.policy.params), c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps)
        self.value_opt = Adam(len(self.value.params), c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps)
        self.updates = 0

    def act(self, obs: Observation, greedy: bool = False) -> tuple[np.ndarray, float, float]:
        batch = ObsBatch.from_observations([obs])
        mean, std = self.policy.forward(batch)
        value = float(self.value.forward(batch)[0])
        mean = mean[0]
        action = mean.copy() if greedy else mean + std * self.rng.standard_normal(mean.shape)
        return action, float(gaussian_logprob(mean, std, action)), value

    def state_value(self, obs: Observation) -> float:
        return float(self.value.forward(ObsBatch.from_observations([obs]))[0])


def ppo_loss(
    agent: Agent,
    batch: ObsBatch,
    actions: np.ndarray,
    logprob_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    config: PpoConfig,
    backward: bool = True,
) -> tuple[float, dict]:
    """Total loss ``surrogate + c_v * value_mse - c_e * entropy`` on one minibatch.

    With ``backward`` set, gradients are added to both networks' blocks.
    """
    n = len(batch)
    eps = config.clip_epsilon
    mean, std = agent.policy.forward(batch)
    log_std = np.log(std)
    logp = gaussian_logprob(mean, std, actions)
    ratio = np.exp(logp - logprob_old)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    unclipped_obj = ratio * advantages
    clipped_obj = clipped * advantages
    policy_loss = float(np.mean(-np.minimum(unclipped_obj, clipped_obj)))

    values = agent.value.forward(batch)
    value_loss = float(np.mean((values - returns) ** 2))
    entropy = gaussian_entropy(log_std)
    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy

    if backward:
        # d(-min(rA, clip(r)A))/dr is -A where the unclipped term is selected
        use_unclipped = unclipped_obj <= clipped_obj
        dratio = np.where(use_unclipped, -advantages, 0.0) / n
        dlogp = dratio * ratio
        z = (actions - mean) / std
        dmean = dlogp[:, None] * z / std
        dlog_std = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0) - config.entropy_coef
        agent.policy.backward(dmean, dlog_std)
        agent.value.backward(config.value_coef * 2.0 * (values - returns) / n)

    stats = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_fraction": float(np.mean(clip_binds(ratio, advantages, eps))),
        "approx_kl": float(np.mean(logprob_old - logp)),
    }
    return total, stats


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    centered = adv - adv.mean()
    std = centered.std()
    return centered / std if std > 1e-12 else centered


def _clip_grad(grads: np.ndarray, max_norm: float) -> None:
    if max_norm > 0:
        norm = float(np.sqrt(np.dot(grads, grads)))
        if norm > max_norm:
            grads *= max_norm / norm


def update(agent: Agent, buffer: RolloutBuffer, config: PpoConfig | None = None,
           gamma: float = 0.99, last_value: float = 0.0) -> UpdateStats:
    """Several epochs of shuffled minibatch steps on one rollout."""
    config = config or agent.config
    if len(buffer) == 0:
        raise UsageError("cannot update from an empty rollout buffer")
    rewards, values, dones, logp_old = buffer.arrays()
    adv, returns = gae(rewards, values, dones, gamma, config.gae_lambda, last_value)
    adv = normalize_advantages(adv)

    n = len(buffer)
    mb = min(config.minibatch_size, n)
    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0, "approx_kl": 0.0}
    count = 0
    for _ in range(config.epochs_per_update):
        perm = agent.rng.permutation(n)
        for start in range(0, n, mb):
            idx = perm[start : start + mb]
            obs, actions = buffer.batch(idx)
            agent.policy.zero_grad()
            agent.value.zero_grad()
            _, st = ppo_loss(agent, obs, actions, logp_old[idx], adv[idx], returns[idx], config)
            _clip_grad(agent.policy.params.grads, config.max_grad_norm)
            _clip_grad(agent.value.params.grads, config.max_grad_norm)
            agent.policy_opt.step(agent.policy.params.values, agent.policy.params.grads)
            agent.value_opt.step(agent.value.params.values, agent.value.params.grads)
            for k in totals:
                totals[k] += st[k]
            count += 1
    agent.updates += 1
    if count == 0:
        obs, actions = buffer.batch(np.arange(n))
        _, st = ppo_loss(agent, obs, actions, logp_old, adv, returns, config, backward=False)
        return UpdateStats(**st)
    return UpdateStats(**{k: v / count for k, v in totals.items()})


@dataclass
class EpisodeRecord:
    episode: int
    timestep: int
    cum_reward: float
    steps: int
    reached_goal: bool
    min_obstacle_dist: float
    branch_goal_count: int


@dataclass
class TrainResult:
    records: dict[int, list[EpisodeRecord]]
    update_stats: dict[int, list[UpdateStats]]
    agents: list


def episode_seed(run_seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([int(run_seed), int(episode)]).generate_state(1)[0])


def train_dual(env, agents, total_timesteps: int, seed: int = 0, on_update=None, on_episode=None) -> TrainResult:
    """Train the agents in ``agents`` (``None`` = idle arm) in one lockstep world.

    Every tick both policies act, one ``env.step`` applies both commands,
    and each agent stores its own transition. Full buffers trigger
    independent updates. ``on_update(i, agent, stats)`` and
    ``on_episode(i, record)`` are optional hooks.
    """
    active = [i for i, a in enumerate(agents) if a is not None]
    if not active:
        raise UsageError("need at least one learning agent")
    gamma = env.reward.gamma
    buffers = {i: RolloutBuffer(agents[i].config.rollout_length) for i in active}
    records = {i: [] for i in active}
    stats = {i: [] for i in active}

    def fresh():
        return {"cum": 0.0, "steps": 0, "goal": 0, "min_d": float("inf")}

    ep = 0
    obs = env.reset(episode_seed(seed, ep))
    acc = {i: fresh() for i in active}
    for t in range(1, int(total_timesteps) + 1):
        acts: list = [None, None]
        taken = {}
        for i in active:
            if not env.agent_done(i):
                a, lp, v = agents[i].act(obs[i])
                acts[i] = a
                taken[i] = (a, lp, v)
        results = env.step(acts)
        for i, (a, lp, v) in taken.items():
            res = results[i]
            buffers[i].add(obs[i], a, lp, res.reward, v, res.done)
            s = acc[i]
            s["cum"] += res.reward
            s["steps"] += 1
            s["goal"] += res.info["branch"] == "goal"
            s["min_d"] = min(s["min_d"], res.info["min_obstacle_dist"])
        obs = tuple(r.observation for r in results)

        for i in active:
            if buffers[i].full:
                done = env.agent_done(i)
                last_v = 0.0 if done else agents[i].state_value(obs[i])
                st = update(agents[i], buffers[i], gamma=gamma, last_value=last_v)
                stats[i].append(st)
                buffers[i].clear()
                if on_update is not None:
                    on_update(i, agents[i], st)

        if all(env.agent_done(i) for i in active):
            for i in active:
                s = acc[i]
                rec = EpisodeRecord(ep, t, s["cum"], s["steps"], s["goal"] > 0, s["min_d"], s["goal"])
                records[i].append(rec)
                if on_episode is not None:
                    on_episode(i, rec)
            ep += 1
            acc = {i: fresh() for i in active}
            if t < total_timesteps:
                obs = env.reset(episode_seed(seed, ep))
    return TrainResult(records, stats, list(agents))
