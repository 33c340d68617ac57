"""Experience collection and incremental density-model training.

Drives an environment with uniformly random joint actions, routes each
factor's reward/action pair into that factor's replay buffer, trains each
factor's flow model every `t_inc` steps, then builds the distribution
provider by sampling the trained models and hands over to the solver.

All randomness fans out from one master seed through named sub-streams
(action draws, batch draws, weight init, provider sampling), so a full run
is bit-reproducible and training can resume mid-run from a saved step
counter without replaying.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .distributions import CdfGrid
from .engine import EsrSolution, dmove
from .flow import Adam, FlowModel, one_hot
from .graph import CoordinationGraph, enumerate_local_actions
from .pruning import esr_prune

_ACTION_STREAM = 1
_BATCH_STREAM = 2
_INIT_STREAM = 3
_SAMPLE_STREAM = 4
_SOLVER_STREAM = 5

#: sentinel: cap convolutions at cfg.n (pass None explicitly for exact sums)
CAP_DEFAULT = object()


class LearnError(ValueError):
    """Invalid configuration or an environment/graph mismatch."""


@dataclass
class LearnConfig:
    """Training-loop knobs; defaults follow the experiment configuration."""

    steps: int = 300_000
    t_inc: int = 1_000
    n: int = 500
    n_samples: int = 2_000
    capacity: int = 5_000_000
    batch_size: int = 256
    epochs_per_increment: int = 50
    seed: int = 0
    flows: int = 8
    hidden_units: int = 30
    hidden_layers: int = 1
    lr: float = 1e-3

    def __post_init__(self):
        positive = {
            "steps": self.steps,
            "t_inc": self.t_inc,
            "n": self.n,
            "n_samples": self.n_samples,
            "capacity": self.capacity,
            "batch_size": self.batch_size,
            "epochs_per_increment": self.epochs_per_increment,
            "flows": self.flows,
            "hidden_units": self.hidden_units,
        }
        for name, value in positive.items():
            if value < 1:
                raise LearnError(f"{name} must be positive, got {value}")
        if self.seed < 0:
            raise LearnError("seed must be non-negative")
        if self.t_inc > self.steps:
            warnings.warn(
                f"t_inc={self.t_inc} exceeds steps={self.steps}: no training will run",
                RuntimeWarning,
                stacklevel=2,
            )


class ReplayBuffer:
    """Fixed-capacity FIFO ring of (reward vector, local joint action) pairs."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise LearnError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self._data: list = []
        self._next = 0

    def push(self, reward, action) -> None:
        r = np.asarray(reward, dtype=np.float64)
        if r.shape != (self.dim,):
            raise LearnError(f"reward shape {r.shape} != ({self.dim},)")
        item = (r, tuple(int(a) for a in action))
        if len(self._data) < self.capacity:
            self._data.append(item)
        else:
            self._data[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._data)

    def get(self, index: int):
        return self._data[index]

    def entries(self, oldest_first: bool = True) -> list:
        """Entries in insertion order (oldest first once the ring has wrapped)."""
        if len(self._data) < self.capacity or not oldest_first:
            return list(self._data)
        return self._data[self._next:] + self._data[: self._next]

    def rewards(self) -> np.ndarray:
        return np.stack([r for r, _ in self._data])


def sample_batch(buffer: ReplayBuffer, k: int, seed=None) -> list:
    """k uniform-with-replacement draws; deterministic for a fixed seed."""
    if len(buffer) == 0:
        raise LearnError("cannot sample from an empty replay buffer")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(buffer), size=k)
    return [buffer.get(int(i)) for i in idx]


def _stream(master: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master)] + [int(v) for v in key])


def _action_ranks(graph: CoordinationGraph) -> dict:
    return {
        scope.factor_id: {
            la: r for r, la in enumerate(enumerate_local_actions(graph, scope.agents))
        }
        for scope in graph.scopes
    }


def _check_env(env, graph: CoordinationGraph) -> None:
    env_scopes = [s.agents for s in env.graph.scopes]
    want = [s.agents for s in graph.scopes]
    if env_scopes != want or tuple(env.graph.action_counts) != tuple(graph.action_counts):
        raise LearnError("environment group structure does not match the coordination graph")


def make_models(graph: CoordinationGraph, cfg: LearnConfig, dim: int) -> dict[int, FlowModel]:
    """One conditional flow per factor, conditioned on its local action space."""
    models = {}
    for scope in graph.scopes:
        n_local = len(enumerate_local_actions(graph, scope.agents))
        models[scope.factor_id] = FlowModel(
            dim=dim,
            cond_dim=n_local,
            n_layers=cfg.flows,
            hidden_units=cfg.hidden_units,
            hidden_layers=cfg.hidden_layers,
            seed=_stream(cfg.seed, _INIT_STREAM, scope.factor_id),
        )
    return models


def _is_normalized(model: FlowModel) -> bool:
    return not (np.all(model.norm_shift == 0.0) and np.all(model.norm_scale == 1.0))


def _train_increment(model, buffer, opt, cfg: LearnConfig, fid: int, increment: int, ranks) -> None:
    if len(buffer) == 0:
        warnings.warn(f"factor {fid}: empty buffer at increment {increment}, skipping training",
                      RuntimeWarning, stacklevel=2)
        return
    if not _is_normalized(model):
        model.fit_normalization(buffer.rewards())
    n_local = model.cond_dim
    for epoch in range(cfg.epochs_per_increment):
        batch = sample_batch(
            buffer, cfg.batch_size, seed=_stream(cfg.seed, _BATCH_STREAM, fid, increment, epoch)
        )
        x = np.stack([r for r, _ in batch])
        cond = np.zeros((len(batch), n_local))
        for row, (_, action) in enumerate(batch):
            cond[row, ranks[action]] = 1.0
        model.train_step(x, cond, opt)


def run_steps(env, graph, cfg: LearnConfig, models, buffers, opts, start_step: int = 1) -> int:
    """Drive exploration and periodic training from `start_step` through cfg.steps.

    Returns the number of training increments that ran.  Each environment
    step pushes exactly one entry into every factor's buffer.
    """
    ranks = _action_ranks(graph)
    increments = 0
    for step in range(start_step, cfg.steps + 1):
        rng = np.random.default_rng(_stream(cfg.seed, _ACTION_STREAM, step))
        try:
            joint_action = tuple(int(rng.integers(c)) for c in graph.action_counts)
            rewards = env.execute(joint_action)
        except Exception as exc:
            raise LearnError(f"environment failure at step {step}: {exc}") from exc
        for k, scope in enumerate(graph.scopes):
            local = tuple(joint_action[a] for a in scope.agents)
            buffers[scope.factor_id].push(rewards[k], local)
        if step % cfg.t_inc == 0:
            increment = step // cfg.t_inc
            for scope in graph.scopes:
                fid = scope.factor_id
                _train_increment(models[fid], buffers[fid], opts[fid], cfg, fid, increment,
                                 ranks[fid])
            increments += 1
    return increments


def train_models(env, graph: CoordinationGraph, cfg: LearnConfig):
    """Fresh models and buffers trained on `cfg.steps` random environment steps."""
    if cfg.steps < 1:
        raise LearnError("steps must be positive")
    _check_env(env, graph)
    dim = env.reward_dim
    models = make_models(graph, cfg, dim)
    buffers = {s.factor_id: ReplayBuffer(cfg.capacity, dim) for s in graph.scopes}
    opts = {fid: Adam(models[fid].parameters(), lr=cfg.lr) for fid in models}
    increments = run_steps(env, graph, cfg, models, buffers, opts)
    if increments == 0:
        warnings.warn("run finished without any training increments (steps < t_inc)",
                      RuntimeWarning, stacklevel=2)
    return models, buffers


def build_provider(models: dict, graph: CoordinationGraph, n: int, seed: int):
    """Distribution provider backed by the trained models.

    Each (factor, local action) pair gets an n-sample distribution drawn
    with a seed derived from (master seed, factor, action rank), so the
    provider is a pure deterministic function.
    """
    ranks = _action_ranks(graph)

    def provider(fid, local_action):
        model = models[fid]
        rank = ranks[fid][tuple(local_action)]
        return model.sample(
            one_hot(rank, model.cond_dim), n, seed=_stream(seed, _SAMPLE_STREAM, fid, rank)
        )

    return provider


def learn(
    env,
    graph: CoordinationGraph,
    cfg: LearnConfig,
    grid: CdfGrid,
    q=None,
    prune1=esr_prune,
    prune2=esr_prune,
    prune3=esr_prune,
    cap=CAP_DEFAULT,
) -> EsrSolution:
    """Full pipeline: explore, train, build provider, solve.

    The convolution cap defaults to cfg.n so distributions keep a bounded
    sample count across deep eliminations; pass cap=None for exact sums.
    """
    models, _ = train_models(env, graph, cfg)
    provider = build_provider(models, graph, cfg.n, cfg.seed)
    return dmove(
        graph,
        provider,
        grid,
        q=q,
        prune1=prune1,
        prune2=prune2,
        prune3=prune3,
        cap=cfg.n if cap is CAP_DEFAULT else cap,
        seed=_stream(cfg.seed, _SOLVER_STREAM),
    )
