"""Multi-agent PPO over the pixel -> tracklet -> graph pipeline.

Each controlled agent owns a clipped-surrogate objective with an entropy
bonus and a squared-error value head, trained from n-step truncated returns.
All agents share the rendered observation; their graphs differ only in which
node sits in the agent slot.

Rollout collection fans out over workers that share nothing: every episode's
RNG streams derive from (worker seed, episode index), and buffers concatenate
in worker order, so results are bitwise reproducible for a fixed
(seed, snapshot, worker count) regardless of scheduling.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import arena, nets, perception, tracker, tracklets

log = logging.getLogger(__name__)

REPRESENTATIONS = ("tracklets_gcn", "tracklets_mlp")

METRICS_COLUMNS = (
    "train_episodes",
    "eval_round",
    "mean_eval_reward",
    "std_eval_reward",
    "loss_policy",
    "loss_value",
    "entropy",
)
METRICS_SCHEMA = "trackmarl-metrics v1"


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.95
    n_step: int = 5
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 1.0
    epochs: int = 4
    minibatch_size: int = 64
    learning_rate: float = 2.5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    workers: int = 1
    total_episodes: int = 30_000
    episodes_per_batch: int = 20
    eval_every: int = 1_000
    eval_episodes: int = 100
    final_metric_rounds: int = 10
    standardize_advantages: bool = True
    share_params: bool = False
    reward_scale: float = 0.1  # conditions the value regression; metrics stay unscaled
    lr_anneal: bool = True  # linear decay to zero over total_episodes

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray  # (n_nodes, node_dim)
    action: int
    reward: float
    value: float
    log_prob: float
    done: bool


class TrainDivergedError(RuntimeError):
    """Raised when a loss or parameter goes non-finite; carries the last good state."""

    def __init__(self, message, params, metrics):
        super().__init__(message)
        self.last_good_params = params
        self.metrics = metrics


# ---------------------------------------------------------------------------
# End-to-end observation pipeline
# ---------------------------------------------------------------------------


class EnvPipeline:
    """One environment instance plus its perception/tracking/tracklet state."""

    def __init__(self, task_cfg: arena.TaskConfig, knn: int | None = None, dropout: float = 0.0, role_penalty: float = tracker.ROLE_PENALTY_DEFAULT):
        self.cfg = task_cfg
        self.layout = arena.layout(task_cfg)
        self.colormap = perception.ColorMap.for_task(task_cfg)
        self.census = {r: int(c) for r, c in enumerate(self.layout.role_census)}
        self.n_agents = int(self.layout.controllable.sum())
        self.n_objects = self.layout.n_entities
        self.knn = (self.n_objects - 1) if knn is None else int(knn)
        if not 1 <= self.knn <= self.n_objects - 1:
            raise ValueError(f"knn must lie in [1, {self.n_objects - 1}], got {self.knn}")
        self.dropout = float(dropout)
        self.role_penalty = role_penalty
        self.state = None
        self.tracks = None
        self.windows = None
        self._dropout_rng = None

    @property
    def node_dim(self) -> int:
        return tracklets.node_embedding_dim(self.layout.n_roles)

    @property
    def n_nodes(self) -> int:
        return self.knn + 1

    def _observe(self):
        frame = arena.render(self.state, self.cfg)
        dets = perception.detect(frame, self.colormap, self.cfg)
        if self.dropout > 0.0:
            dets = perception.inject_dropout(dets, self.dropout, self._dropout_rng)
        return dets

    def _graphs(self):
        return [
            tracklets.knn_graph(self.windows, self.tracks, i, self.knn)
            for i in range(self.n_agents)
        ]

    def reset(self, env_seed, dropout_seed):
        env_rng = np.random.default_rng(env_seed)
        self._dropout_rng = np.random.default_rng(dropout_seed)
        self.state = arena.reset(self.cfg, env_rng)
        dets = self._observe()
        self.tracks = tracker.init_tracks(dets, self.census)
        self.windows = tracklets.push_frame(
            tracklets.make_windows(self.n_objects, self.layout.n_roles, self.cfg.arena_half_extent),
            self.tracks,
        )
        return self._graphs()

    def step(self, actions):
        self.state, rewards = arena.step(self.state, actions, self.cfg)
        dets = self._observe()
        self.tracks = tracker.advance_tracks(self.tracks, dets, self.role_penalty)
        self.windows = tracklets.push_frame(self.windows, self.tracks)
        done = self.state.step_index >= self.cfg.episode_len
        return self._graphs(), rewards, done


@dataclass(frozen=True)
class EnvPipelineFactory:
    """Picklable recipe for building identical EnvPipeline instances in workers."""

    task_cfg: arena.TaskConfig
    knn: int | None = None
    dropout: float = 0.0
    role_penalty: float = tracker.ROLE_PENALTY_DEFAULT

    def __call__(self) -> EnvPipeline:
        return EnvPipeline(self.task_cfg, self.knn, self.dropout, self.role_penalty)


# ---------------------------------------------------------------------------
# Returns, advantages, losses
# ---------------------------------------------------------------------------


def n_step_return(rewards: Sequence[float], bootstrap: float, gamma: float, dones: Sequence[bool] | None = None) -> float:
    """Discounted sum of up to n rewards plus a discounted bootstrap.

    The bootstrap (and everything later in the window) is dropped past a
    done flag: the return truncates at episode end.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    acc = float(bootstrap)
    for k in range(len(rewards) - 1, -1, -1):
        if dones is not None and dones[k]:
            acc = 0.0
        acc = rewards[k] + gamma * acc
    return acc


def episode_n_step_returns(rewards: np.ndarray, values: np.ndarray, gamma: float, n: int, final_value: float = 0.0) -> np.ndarray:
    """Per-step n-step returns for one fixed-length episode.

    The episode ends by time limit, not in a terminal state, so windows that
    cross the horizon bootstrap from the final observation's value estimate
    (zero-bootstrapping a truncation would bias late-step advantages upward
    in an all-negative-reward task and feed back into the policy).
    """
    t_len = len(rewards)
    out = np.empty(t_len)
    for t in range(t_len):
        end = min(t + n, t_len)
        acc = values[end] if end < t_len else final_value
        for k in range(end - 1, t - 1, -1):
            acc = rewards[k] + gamma * acc
        out[t] = acc
    return out


def advantage(returns, values, standardize: bool = False):
    """D = R - V, optionally standardized to zero mean / unit variance per batch."""
    d = np.asarray(returns, dtype=np.float64) - np.asarray(values, dtype=np.float64)
    if standardize:
        d = standardize_batch(d)
    return d


def standardize_batch(x: np.ndarray) -> np.ndarray:
    std = x.std()
    if std < 1e-8:
        return x - x.mean()
    return (x - x.mean()) / std


def value_loss(returns: np.ndarray, values: np.ndarray) -> float:
    r = np.asarray(returns, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    return float(((r - v) ** 2).mean())


def ppo_objective(batch: Mapping[str, np.ndarray], params: Mapping[str, np.ndarray], cfg: TrainerConfig, spec: nets.PolicySpec):
    """Clipped-surrogate loss (negated objective) and exact gradients for one agent.

    batch keys: obs (B,n,F), actions (B,), log_probs_old (B,), advantages (B,),
    returns (B,). Where the clip is active and binding, the per-sample policy
    gradient is exactly zero.
    """
    obs = batch["obs"]
    actions = np.asarray(batch["actions"], dtype=np.int64)
    logp_old = np.asarray(batch["log_probs_old"], dtype=np.float64)
    adv = np.asarray(batch["advantages"], dtype=np.float64)
    returns = np.asarray(batch["returns"], dtype=np.float64)
    b = len(actions)

    cache = nets.forward_batch(obs, params, spec)
    logp_new = cache.log_probs[np.arange(b), actions]
    ratio = np.exp(logp_new - logp_old)
    clipped_ratio = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    unclipped = ratio * adv
    clipped = clipped_ratio * adv
    surrogate = np.minimum(unclipped, clipped)

    in_range = (ratio >= 1.0 - cfg.clip_eps) & (ratio <= 1.0 + cfg.clip_eps)
    flows = (unclipped <= clipped) | in_range
    logp_coef = np.where(flows, ratio * adv, 0.0) / b

    vloss = value_loss(returns, cache.values)
    policy_term = float(surrogate.mean())
    entropy_term = float(cache.entropy.mean())
    loss = -(policy_term + cfg.entropy_coef * entropy_term) + cfg.value_coef * vloss

    d_logits, d_values = nets.loss_seed_gradients(
        cache,
        actions,
        logp_coef=-logp_coef,
        entropy_coef=-cfg.entropy_coef / b,
        value_coef=cfg.value_coef * 2.0 * (cache.values - returns) / b,
    )
    grads = nets.backward_batch(cache, params, spec, d_logits, d_values)
    stats = {"loss_policy": -policy_term, "loss_value": vloss, "entropy": entropy_term}
    return loss, grads, stats


class Adam:
    """Adaptive-moment updates with bias correction over a parameter dict."""

    def __init__(self, params: Mapping[str, np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ---------------------------------------------------------------------------
# Rollout collection
# ---------------------------------------------------------------------------


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (N, T, n_nodes, node_dim)
    actions: np.ndarray  # (N, T)
    rewards: np.ndarray  # (N, T)
    values: np.ndarray  # (N, T)
    log_probs: np.ndarray  # (N, T)
    dones: np.ndarray  # (N, T)
    final_values: np.ndarray  # (N, n_episodes) value of the post-horizon observation
    episode_len: int

    @property
    def n_agents(self) -> int:
        return self.obs.shape[0]

    @property
    def n_transitions(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]

    @property
    def n_episodes(self) -> int:
        return self.obs.shape[1] // self.episode_len

    def transition(self, agent: int, t: int) -> Transition:
        return Transition(
            obs=self.obs[agent, t],
            action=int(self.actions[agent, t]),
            reward=float(self.rewards[agent, t]),
            value=float(self.values[agent, t]),
            log_prob=float(self.log_probs[agent, t]),
            done=bool(self.dones[agent, t]),
        )

    def episode_rewards(self) -> np.ndarray:
        """Shared per-episode reward (all agents see the same task reward)."""
        per_step = self.rewards[0].reshape(self.n_episodes, self.episode_len)
        return per_step.sum(axis=1)

    @staticmethod
    def concat(buffers: Sequence["RolloutBuffer"]) -> "RolloutBuffer":
        return RolloutBuffer(
            obs=np.concatenate([b.obs for b in buffers], axis=1),
            actions=np.concatenate([b.actions for b in buffers], axis=1),
            rewards=np.concatenate([b.rewards for b in buffers], axis=1),
            values=np.concatenate([b.values for b in buffers], axis=1),
            log_probs=np.concatenate([b.log_probs for b in buffers], axis=1),
            dones=np.concatenate([b.dones for b in buffers], axis=1),
            final_values=np.concatenate([b.final_values for b in buffers], axis=1),
            episode_len=buffers[0].episode_len,
        )


def _run_episodes(env_factory, params_list, specs, episode_len, episode_seeds, greedy):
    pipe = env_factory()
    n_agents = pipe.n_agents
    actors = [nets.make_actor(params_list[i], specs[i]) for i in range(n_agents)]
    t_total = len(episode_seeds) * episode_len
    obs = np.empty((n_agents, t_total, pipe.n_nodes, pipe.node_dim))
    actions = np.empty((n_agents, t_total), np.int64)
    rewards = np.empty((n_agents, t_total))
    values = np.empty((n_agents, t_total))
    log_probs = np.empty((n_agents, t_total))
    dones = np.zeros((n_agents, t_total), bool)
    final_values = np.empty((n_agents, len(episode_seeds)))
    t = 0
    for ep, seed_seq in enumerate(episode_seeds):
        env_ss, drop_ss, act_ss = seed_seq.spawn(3)
        action_rng = np.random.default_rng(act_ss)
        graphs = pipe.reset(env_ss, drop_ss)
        for _ in range(episode_len):
            step_actions = np.empty(n_agents, np.int64)
            for i in range(n_agents):
                probs, logp_all, value, _ = actors[i](graphs[i].node_features)
                a = int(np.argmax(probs)) if greedy else nets.sample_index(probs, action_rng)
                obs[i, t] = graphs[i].node_features
                step_actions[i] = a
                actions[i, t] = a
                values[i, t] = value
                log_probs[i, t] = logp_all[a]
            graphs, step_rewards, done = pipe.step(step_actions)
            rewards[:, t] = step_rewards
            dones[:, t] = done
            t += 1
        for i in range(n_agents):
            final_values[i, ep] = actors[i](graphs[i].node_features)[2]
    return RolloutBuffer(obs, actions, rewards, values, log_probs, dones, final_values, episode_len)


def _collect_worker(args):
    env_factory, params_list, specs, episode_len, worker_seed, n_episodes, greedy = args
    episode_seeds = [np.random.SeedSequence([worker_seed, e]) for e in range(n_episodes)]
    return _run_episodes(env_factory, params_list, specs, episode_len, episode_seeds, greedy)


def collect_rollouts(env_factory, params_list, specs, cfg: TrainerConfig, seeds: Sequence[int], n_episodes: int, greedy: bool = False) -> RolloutBuffer:
    """Run n_episodes across len(seeds) workers; deterministic in (seeds, snapshot, worker count)."""
    if not seeds:
        raise ValueError("need at least one worker seed")
    if n_episodes < 1:
        raise ValueError("need at least 1 episode")
    episode_len = env_factory.task_cfg.episode_len
    n_workers = len(seeds)
    counts = [n_episodes // n_workers + (1 if w < n_episodes % n_workers else 0) for w in range(n_workers)]
    jobs = [
        (env_factory, params_list, specs, episode_len, int(seeds[w]), counts[w], greedy)
        for w in range(n_workers)
        if counts[w] > 0
    ]
    if len(jobs) <= 1 or cfg.workers <= 1:
        parts = [_collect_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            parts = list(pool.map(_collect_worker, jobs))
    return RolloutBuffer.concat(parts)


def evaluate(env_factory, params_list, specs, n_episodes: int, seed: int) -> tuple:
    """Greedy-policy evaluation; returns (mean, std, per-episode rewards)."""
    if n_episodes < 1:
        raise ValueError("need at least 1 episode")
    episode_seeds = [np.random.SeedSequence([seed, 2, e]) for e in range(n_episodes)]
    buf = _run_episodes(env_factory, params_list, specs, env_factory.task_cfg.episode_len, episode_seeds, greedy=True)
    rewards = buf.episode_rewards()
    return float(rewards.mean()), float(rewards.std()), rewards


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: list
    specs: list
    metrics: list
    timings: list
    final_metric: float


def make_specs(task_cfg: arena.TaskConfig, representation: str, knn: int | None) -> list:
    lay = arena.layout(task_cfg)
    m = lay.n_entities
    k = (m - 1) if knn is None else int(knn)
    arch = {"tracklets_gcn": "gcn", "tracklets_mlp": "mlp"}.get(representation)
    if arch is None:
        raise ValueError(f"unknown representation {representation!r}; expected one of {REPRESENTATIONS}")
    spec = nets.PolicySpec(
        node_dim=tracklets.node_embedding_dim(lay.n_roles),
        n_nodes=k + 1,
        n_actions=arena.N_ACTIONS,
        arch=arch,
    )
    return [spec] * int(lay.controllable.sum())


def init_agents(specs, seed: int, share_params: bool) -> list:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    if share_params:
        shared = nets.init_params(specs[0], rng)
        return [shared for _ in specs]
    return [nets.init_params(s, rng) for s in specs]


def _update_agent(buffer, agent, params, spec, cfg, optimizer, rng):
    t_total = buffer.obs.shape[1]
    n_eps = buffer.n_episodes
    rewards = buffer.rewards[agent].reshape(n_eps, buffer.episode_len) * cfg.reward_scale
    values = buffer.values[agent].reshape(n_eps, buffer.episode_len)
    returns = np.concatenate(
        [
            episode_n_step_returns(rewards[e], values[e], cfg.gamma, cfg.n_step, buffer.final_values[agent, e])
            for e in range(n_eps)
        ]
    )
    adv = advantage(returns, buffer.values[agent], standardize=cfg.standardize_advantages)
    batch = {
        "obs": buffer.obs[agent],
        "actions": buffer.actions[agent],
        "log_probs_old": buffer.log_probs[agent],
        "advantages": adv,
        "returns": returns,
    }
    mb = cfg.minibatch_size if cfg.minibatch_size > 0 else t_total
    stats = {"loss_policy": 0.0, "loss_value": 0.0, "entropy": 0.0}
    n_steps = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(t_total)
        for start in range(0, t_total, mb):
            idx = perm[start : start + mb]
            sub = {k: v[idx] for k, v in batch.items()}
            loss, grads, s = ppo_objective(sub, params, cfg, spec)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss {loss}")
            optimizer.step(params, grads)
            for k in stats:
                stats[k] += s[k]
            n_steps += 1
    return {k: v / max(n_steps, 1) for k, v in stats.items()}


def train(
    task_cfg: arena.TaskConfig,
    trainer_cfg: TrainerConfig,
    representation: str = "tracklets_gcn",
    dropout: float = 0.0,
    knn: int | None = None,
    seed: int = 0,
    eval_dropout: bool = False,
    progress: Callable | None = None,
) -> TrainResult:
    """Alternate rollout collection and PPO updates; evaluate greedily on a cadence.

    The final metric averages the mean rewards of the last up-to-ten
    evaluation rounds. Raises TrainDivergedError (carrying the last good
    parameters) if a loss or parameter goes non-finite.
    """
    specs = make_specs(task_cfg, representation, knn)
    params = init_agents(specs, seed, trainer_cfg.share_params)
    n_agents = len(specs)
    k = (arena.layout(task_cfg).n_entities - 1) if knn is None else int(knn)
    train_factory = EnvPipelineFactory(task_cfg, k, dropout)
    eval_factory = EnvPipelineFactory(task_cfg, k, dropout if eval_dropout else 0.0)
    optimizers = [
        Adam(params[i], trainer_cfg.learning_rate, trainer_cfg.adam_beta1, trainer_cfg.adam_beta2, trainer_cfg.adam_eps)
        for i in range(n_agents)
    ]
    update_rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))

    metrics = []
    timings = []
    last_good = [{k2: v.copy() for k2, v in p.items()} for p in params]
    episodes_done = 0
    batch_index = 0
    next_eval = trainer_cfg.eval_every
    eval_round = 0
    stats = {"loss_policy": float("nan"), "loss_value": float("nan"), "entropy": float("nan")}
    t0 = time.perf_counter()

    while episodes_done < trainer_cfg.total_episodes:
        n_eps = min(trainer_cfg.episodes_per_batch, trainer_cfg.total_episodes - episodes_done)
        if trainer_cfg.lr_anneal:
            frac = 1.0 - episodes_done / trainer_cfg.total_episodes
            for opt in optimizers:
                opt.lr = trainer_cfg.learning_rate * frac
        seeds = [
            int(np.random.SeedSequence([seed, 1, batch_index, w]).generate_state(1)[0])
            for w in range(trainer_cfg.workers)
        ]
        buffer = collect_rollouts(train_factory, params, specs, trainer_cfg, seeds, n_eps)
        try:
            agent_stats = [
                _update_agent(buffer, i, params[i], specs[i], trainer_cfg, optimizers[i], update_rng)
                for i in range(n_agents)
            ]
            for p in params:
                for v in p.values():
                    if not np.isfinite(v).all():
                        raise FloatingPointError("non-finite parameter")
        except FloatingPointError as err:
            raise TrainDivergedError(
                f"training diverged after {episodes_done} episodes: {err}", last_good, metrics
            ) from err
        stats = {k2: float(np.mean([s[k2] for s in agent_stats])) for k2 in agent_stats[0]}
        last_good = [{k2: v.copy() for k2, v in p.items()} for p in params]
        episodes_done += n_eps
        batch_index += 1

        while episodes_done >= next_eval and next_eval <= trainer_cfg.total_episodes:
            eval_round += 1
            mean_r, std_r, _ = evaluate(eval_factory, params, specs, trainer_cfg.eval_episodes, seed)
            metrics.append(
                {
                    "train_episodes": next_eval,
                    "eval_round": eval_round,
                    "mean_eval_reward": mean_r,
                    "std_eval_reward": std_r,
                    "loss_policy": stats["loss_policy"],
                    "loss_value": stats["loss_value"],
                    "entropy": stats["entropy"],
                }
            )
            timings.append({"train_episodes": next_eval, "wallclock_s": time.perf_counter() - t0})
            if progress is not None:
                progress(metrics[-1])
            next_eval += trainer_cfg.eval_every

    tail = [m["mean_eval_reward"] for m in metrics[-trainer_cfg.final_metric_rounds :]]
    final_metric = float(np.mean(tail)) if tail else float("nan")
    return TrainResult(params=params, specs=specs, metrics=metrics, timings=timings, final_metric=final_metric)


# ---------------------------------------------------------------------------
# Metrics and checkpoint files
# ---------------------------------------------------------------------------


def write_metrics_csv(path, rows: Sequence[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {METRICS_SCHEMA}\n")
        f.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row[c]) for c in METRICS_COLUMNS) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_metrics_csv(path) -> list:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != f"# {METRICS_SCHEMA}":
            raise ValueError(f"{path}: unknown metrics schema {header!r} (expected '# {METRICS_SCHEMA}')")
        cols = f.readline().strip().split(",")
        for c in cols:
            if c not in METRICS_COLUMNS:
                raise ValueError(f"{path}: unexpected column {c!r}")
        for c in METRICS_COLUMNS:
            if c not in cols:
                raise ValueError(f"{path}: missing column {c!r}")
        rows = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            vals = line.split(",")
            row = {}
            for c, v in zip(cols, vals):
                row[c] = int(v) if c in ("train_episodes", "eval_round") else float(v)
            rows.append(row)
        return rows


def write_timing_csv(path, rows: Sequence[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("train_episodes,wallclock_s\n")
        for row in rows:
            f.write(f"{row['train_episodes']},{row['wallclock_s']:.3f}\n")


_ARCH_CODES = {"gcn": 0, "mlp": 1}


def save_agents(path, params_list, spec: nets.PolicySpec, knn: int) -> None:
    """Bundle all agents' tensors plus shape metadata into one checkpoint."""
    tensors = {
        "meta": np.array(
            [len(params_list), spec.n_actions, spec.node_dim, spec.n_nodes, _ARCH_CODES[spec.arch], knn],
            dtype=np.float64,
        )
    }
    for i, p in enumerate(params_list):
        for k2, v in p.items():
            tensors[f"agent{i}/{k2}"] = v
    nets.save_checkpoint(path, tensors)


def load_agents(path):
    """Inverse of save_agents: (params_list, spec, knn)."""
    tensors = nets.load_checkpoint(path)
    if "meta" not in tensors:
        raise nets.CheckpointError(f"{path}: missing meta tensor")
    n_agents, n_actions, node_dim, n_nodes, arch_code, knn = (int(x) for x in tensors["meta"])
    arch = {v: k2 for k2, v in _ARCH_CODES.items()}[arch_code]
    spec = nets.PolicySpec(node_dim=node_dim, n_nodes=n_nodes, n_actions=n_actions, arch=arch)
    params_list = []
    for i in range(n_agents):
        prefix = f"agent{i}/"
        params_list.append({k2[len(prefix) :]: v for k2, v in tensors.items() if k2.startswith(prefix)})
    return params_list, spec, knn
