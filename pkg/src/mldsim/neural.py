"""Small fixed-architecture networks with hand-written reverse passes.

Each network owns one :class:`ParameterBlock`. ``forward`` records what the
reverse pass needs; ``backward`` adds gradients into ``params.grads`` (it
accumulates, call ``zero_grad`` between steps).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import Observation, UsageError

OBSTACLE_FEATURES = 12
N_JOINTS = 6
GOAL_DIM = 3
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = math.log(2.0 * math.pi)


class ArchitectureMismatch(ValueError):
    def __init__(self, name: str, detail: str):
        super().__init__(f"checkpoint slice '{name}': {detail}")
        self.name = name


@dataclass(frozen=True)
class NetworkConfig:
    lstm_hidden: int = 32
    trunk_hidden: tuple = (64, 64)
    log_std_init: float = 0.0


class ParameterBlock:
    """Flat parameter and gradient storage with named, non-overlapping slices."""

    def __init__(self, shapes: dict[str, tuple[int, ...]]):
        self.layout: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in shapes.items():
            shape = tuple(int(s) for s in shape)
            self.layout[name] = (offset, shape)
            offset += int(np.prod(shape))
        self.values = np.zeros(offset)
        self.grads = np.zeros(offset)

    def __len__(self) -> int:
        return len(self.values)

    def _view(self, arr: np.ndarray, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        return arr[offset : offset + int(np.prod(shape))].reshape(shape)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._view(self.values, name)

    def grad(self, name: str) -> np.ndarray:
        return self._view(self.grads, name)

    def zero_grad(self) -> None:
        self.grads[:] = 0.0

    def state_dict(self) -> dict[str, list]:
        return {name: self[name].tolist() for name in self.layout}

    def load_state_dict(self, state: dict) -> None:
        missing = set(self.layout) - set(state)
        if missing:
            raise ArchitectureMismatch(sorted(missing)[0], "missing from checkpoint")
        extra = set(state) - set(self.layout)
        if extra:
            raise ArchitectureMismatch(sorted(extra)[0], "not part of this architecture")
        for name, (_, shape) in self.layout.items():
            arr = np.asarray(state[name], dtype=float)
            if arr.shape != shape:
                raise ArchitectureMismatch(name, f"shape {arr.shape} != expected {shape}")
        for name in self.layout:
            self[name][...] = np.asarray(state[name], dtype=float)


# --------------------------------------------------------------------------
# batching


@dataclass
class ObsBatch:
    joints: np.ndarray  # (B, 6)
    goal: np.ndarray  # (B, 3)
    seq: np.ndarray  # (B, L, 12), left-padded
    mask: np.ndarray  # (B, L), 1 where seq holds a real entry

    def __len__(self) -> int:
        return len(self.joints)

    @classmethod
    def from_parts(cls, joints, goals, seqs) -> "ObsBatch":
        b = len(seqs)
        lmax = max((len(s) for s in seqs), default=0)
        seq = np.zeros((b, lmax, OBSTACLE_FEATURES))
        mask = np.zeros((b, lmax))
        for k, s in enumerate(seqs):
            if len(s):
                seq[k, lmax - len(s) :] = s
                mask[k, lmax - len(s) :] = 1.0
        return cls(np.asarray(joints, dtype=float).reshape(b, N_JOINTS),
                   np.asarray(goals, dtype=float).reshape(b, GOAL_DIM), seq, mask)

    @classmethod
    def from_observations(cls, observations) -> "ObsBatch":
        obs = list(observations)
        return cls.from_parts(
            [o.joint_angles for o in obs], [o.goal for o in obs], [o.sequence() for o in obs]
        )


# --------------------------------------------------------------------------
# layers


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LSTM:
    """Single-layer LSTM over masked, left-padded sequences; returns the final hidden state.

    Gate order in the stacked weights is input, forget, cell, output.
    """

    def __init__(self, params: ParameterBlock, prefix: str, n_in: int, n_hidden: int):
        self.p, self.prefix = params, prefix
        self.n_in, self.n_hidden = n_in, n_hidden
        self._cache = None

    @staticmethod
    def shapes(prefix: str, n_in: int, n_hidden: int) -> dict:
        return {
            f"{prefix}.Wx": (n_in, 4 * n_hidden),
            f"{prefix}.Wh": (n_hidden, 4 * n_hidden),
            f"{prefix}.b": (4 * n_hidden,),
        }

    def init(self, rng: np.random.Generator) -> None:
        h = self.n_hidden
        lim = math.sqrt(6.0 / (self.n_in + h))
        self.p[f"{self.prefix}.Wx"][...] = rng.uniform(-lim, lim, (self.n_in, 4 * h))
        wh = self.p[f"{self.prefix}.Wh"]
        for g in range(4):
            q, r = np.linalg.qr(rng.normal(size=(h, h)))
            wh[:, g * h : (g + 1) * h] = q * np.sign(np.diag(r))
        b = self.p[f"{self.prefix}.b"]
        b[...] = 0.0
        b[h : 2 * h] = 1.0

    def forward(self, seq: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        bsz, length, _ = seq.shape
        if mask is None:
            mask = np.ones((bsz, length))
        h_dim = self.n_hidden
        wx, wh, b = (self.p[f"{self.prefix}.{k}"] for k in ("Wx", "Wh", "b"))
        h = np.zeros((bsz, h_dim))
        c = np.zeros((bsz, h_dim))
        steps = []
        for t in range(length):
            x = seq[:, t]
            z = x @ wx + h @ wh + b
            i = _sigmoid(z[:, :h_dim])
            f = _sigmoid(z[:, h_dim : 2 * h_dim])
            g = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
            o = _sigmoid(z[:, 3 * h_dim :])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            m = mask[:, t : t + 1]
            steps.append((x, h, c, i, f, g, o, tc, m))
            c = m * c_new + (1.0 - m) * c
            h = m * h_new + (1.0 - m) * h
        self._cache = steps
        return h

    def backward(self, dh: np.ndarray) -> None:
        if self._cache is None:
            raise UsageError("LSTM.backward called without a recorded forward pass")
        h_dim = self.n_hidden
        wh = self.p[f"{self.prefix}.Wh"]
        gwx, gwh, gb = (self.p.grad(f"{self.prefix}.{k}") for k in ("Wx", "Wh", "b"))
        dc = np.zeros_like(dh)
        for x, h_prev, c_prev, i, f, g, o, tc, m in reversed(self._cache):
            dh_new = m * dh
            dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc_new * g * i * (1.0 - i),
                    dc_new * c_prev * f * (1.0 - f),
                    dc_new * i * (1.0 - g * g),
                    dh_new * tc * o * (1.0 - o),
                ],
                axis=1,
            )
            gwx += x.T @ dz
            gwh += h_prev.T @ dz
            gb += dz.sum(axis=0)
            dh = (1.0 - m) * dh + dz @ wh.T
            dc = (1.0 - m) * dc + dc_new * f


class MLP:
    """Affine layers ``y = x W^T + b`` with tanh between them, linear output."""

    def __init__(self, params: ParameterBlock, prefix: str, sizes: list[int]):
        self.p, self.prefix, self.sizes = params, prefix, list(sizes)
        self._cache = None

    @staticmethod
    def shapes(prefix: str, sizes: list[int]) -> dict:
        out = {}
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            out[f"{prefix}.{k}.W"] = (n_out, n_in)
            out[f"{prefix}.{k}.b"] = (n_out,)
        return out

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def init(self, rng: np.random.Generator, last_scale: float = 1.0) -> None:
        for k, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            lim = math.sqrt(6.0 / (n_in + n_out))
            if k == self.n_layers - 1:
                lim *= last_scale
            self.p[f"{self.prefix}.{k}.W"][...] = rng.uniform(-lim, lim, (n_out, n_in))
            self.p[f"{self.prefix}.{k}.b"][...] = 0.0

    def forward(self, x: np.ndarray) -> np.ndarray:
        acts = [x]
        for k in range(self.n_layers):
            y = x @ self.p[f"{self.prefix}.{k}.W"].T + self.p[f"{self.prefix}.{k}.b"]
            x = np.tanh(y) if k < self.n_layers - 1 else y
            acts.append(x)
        self._cache = acts
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise UsageError("MLP.backward called without a recorded forward pass")
        acts = self._cache
        for k in reversed(range(self.n_layers)):
            if k < self.n_layers - 1:
                dy = dy * (1.0 - acts[k + 1] ** 2)
            self.p.grad(f"{self.prefix}.{k}.W")[...] += dy.T @ acts[k]
            self.p.grad(f"{self.prefix}.{k}.b")[...] += dy.sum(axis=0)
            dy = dy @ self.p[f"{self.prefix}.{k}.W"]
        return dy


# --------------------------------------------------------------------------
# networks


class _ObstacleEncoderNet:
    """LSTM over obstacle entries, concatenated with joints and goal, then an MLP."""

    def __init__(self, cfg: NetworkConfig, n_out: int, extra_shapes: dict | None = None):
        self.cfg = cfg
        h = cfg.lstm_hidden
        self.trunk_sizes = [N_JOINTS + GOAL_DIM + h, *cfg.trunk_hidden, n_out]
        shapes = {**LSTM.shapes("lstm", OBSTACLE_FEATURES, h), **MLP.shapes("trunk", self.trunk_sizes)}
        shapes.update(extra_shapes or {})
        self.params = ParameterBlock(shapes)
        self.lstm = LSTM(self.params, "lstm", OBSTACLE_FEATURES, h)
        self.trunk = MLP(self.params, "trunk", self.trunk_sizes)
        self._recorded = False

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def _encode(self, batch: ObsBatch) -> np.ndarray:
        emb = self.lstm.forward(batch.seq, batch.mask)
        x = np.concatenate([batch.joints, batch.goal, emb], axis=1)
        self._recorded = True
        return self.trunk.forward(x)

    def _backprop(self, dout: np.ndarray) -> None:
        if not self._recorded:
            raise UsageError("backward called without a recorded forward pass")
        dx = self.trunk.backward(dout)
        self.lstm.backward(dx[:, N_JOINTS + GOAL_DIM :])

    def metadata(self) -> dict:
        return {"lstm_hidden": self.cfg.lstm_hidden, "trunk_sizes": self.trunk_sizes}


class PolicyNet(_ObstacleEncoderNet):
    def __init__(self, cfg: NetworkConfig = NetworkConfig(), rng: np.random.Generator | None = None):
        super().__init__(cfg, N_JOINTS, {"log_std": (N_JOINTS,)})
        if rng is not None:
            self.lstm.init(rng)
            self.trunk.init(rng, last_scale=0.0)
            self.params["log_std"][...] = cfg.log_std_init

    def log_std(self) -> np.ndarray:
        return np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX)

    def forward(self, batch: ObsBatch) -> tuple[np.ndarray, np.ndarray]:
        """Means ``(B, 6)`` and the shared std ``(6,)``."""
        mean = self._encode(batch)
        return mean, np.exp(self.log_std())

    def backward(self, dmean: np.ndarray, dlog_std: np.ndarray | None = None) -> None:
        self._backprop(dmean)
        if dlog_std is not None:
            raw = self.params["log_std"]
            inside = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
            self.params.grad("log_std")[...] += np.where(inside, dlog_std, 0.0)


class ValueNet(_ObstacleEncoderNet):
    def __init__(self, cfg: NetworkConfig = NetworkConfig(), rng: np.random.Generator | None = None):
        super().__init__(cfg, 1)
        if rng is not None:
            self.lstm.init(rng)
            self.trunk.init(rng)

    def forward(self, batch: ObsBatch) -> np.ndarray:
        return self._encode(batch)[:, 0]

    def backward(self, dvalue: np.ndarray) -> None:
        self._backprop(np.asarray(dvalue, dtype=float).reshape(-1, 1))


def lstm_forward(params: ParameterBlock, sequence, prefix: str = "lstm") -> np.ndarray:
    """Final hidden state for one sequence of 12-vectors; zeros when it is empty."""
    n_hidden = params.layout[f"{prefix}.Wh"][1][0]
    seq = np.asarray(sequence, dtype=float).reshape(1, -1, OBSTACLE_FEATURES)
    return LSTM(params, prefix, OBSTACLE_FEATURES, n_hidden).forward(seq)[0]


def policy_forward(net: PolicyNet, obs: Observation) -> tuple[np.ndarray, np.ndarray]:
    mean, std = net.forward(ObsBatch.from_observations([obs]))
    return mean[0], std


def gaussian_logprob(mean, std, action) -> np.ndarray:
    """Diagonal Gaussian log density summed over the last axis."""
    mean, std, action = (np.asarray(v, dtype=float) for v in (mean, std, action))
    z = (action - mean) / std
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(std), axis=-1) - 0.5 * mean.shape[-1] * LOG_2PI


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + LOG_2PI))


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, nets: dict, metadata: dict) -> None:
    """Write ``{"metadata": ..., "params": {"<net>.<slice>": values}}`` as JSON."""
    params = {}
    meta = dict(metadata)
    for key, net in nets.items():
        for name, vals in net.params.state_dict().items():
            params[f"{key}.{name}"] = vals
        meta[f"{key}_architecture"] = net.metadata()
    with open(path, "w") as fh:
        json.dump({"metadata": meta, "params": params}, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path, nets: dict) -> dict:
    with open(path) as fh:
        blob = json.load(fh)
    params = blob["params"]
    for key, net in nets.items():
        prefix = f"{key}."
        state = {k[len(prefix) :]: v for k, v in params.items() if k.startswith(prefix)}
        try:
            net.params.load_state_dict(state)
        except ArchitectureMismatch as exc:
            raise ArchitectureMismatch(prefix + exc.name, str(exc).split(": ", 1)[1]) from None
    return blob["metadata"]

