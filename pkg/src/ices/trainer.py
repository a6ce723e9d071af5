"""Training loop: collect episodes, update policies then scaffolds, sync targets, log metrics."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, make_env
from .envs import MultiAgentEnv
from .episodes import EpisodeBatch, EpisodeRecorder, collate
from .nn import Tape
from .policies import (
    Explorer,
    Exploiter,
    PolicyConfig,
    agent_inputs,
    behavior_action,
    epsilon_schedule,
    exploration_losses,
    linear_schedule,
)
from .scaffolds import ScaffoldBatch, ScaffoldConfig, ScaffoldModel

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "step", "episodes", "test_return_mean", "test_win_rate", "loss_td", "loss_elbo",
    "loss_actor", "loss_value", "mean_r_int", "actor_entropy", "alpha", "epsilon",
)
_TRAIN_KEYS = ("loss_td", "loss_elbo", "loss_actor", "loss_value", "mean_r_int", "actor_entropy")


class ReplayBuffer:
    """FIFO store of whole episodes."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.episodes: deque[EpisodeBatch] = deque(maxlen=capacity)
        self.inserted = 0

    def add(self, episode: EpisodeBatch) -> None:
        if episode.batch_size != 1:
            raise ValueError("store one episode at a time")
        self.episodes.append(episode)
        self.inserted += 1

    def __len__(self) -> int:
        return len(self.episodes)

    def can_sample(self, n: int) -> bool:
        return len(self.episodes) >= n

    def sample(self, n: int, rng: np.random.Generator) -> EpisodeBatch:
        if not self.can_sample(n):
            raise ValueError(f"buffer holds {len(self)} episodes, need {n}")
        idx = np.sort(rng.choice(len(self.episodes), size=n, replace=False))
        return collate([self.episodes[i] for i in idx])


def policy_config(cfg: ExperimentConfig, env: MultiAgentEnv) -> PolicyConfig:
    a, s = cfg.algo, env.spec
    return PolicyConfig(
        n_agents=s.n_agents, n_actions=s.n_actions, obs_dim=s.obs_dim, state_dim=s.state_dim,
        hidden_dim=a.hidden_dim, mixer_embed=a.mixer_embed, hypernet_hidden=a.hypernet_hidden,
        gamma=a.gamma, beta=a.beta, advantage_mode=a.advantage_mode, actor_sees_state=cfg.actor_sees_state,
        lr_exploit=a.lr_exploit, lr_explore=a.lr_explore, lr_value=a.lr_value,
        exploit_grad_clip=a.exploit_grad_clip, explore_grad_clip=a.explore_grad_clip, double_q=a.double_q,
    )


def scaffold_config(cfg: ExperimentConfig, env: MultiAgentEnv) -> ScaffoldConfig:
    a, s = cfg.algo, env.spec
    return ScaffoldConfig(
        n_agents=s.n_agents, n_actions=s.n_actions, state_dim=s.state_dim, embed_dim=a.embed_dim,
        latent_dim=a.latent_dim, hidden_dim=a.scaffold_hidden, variant=cfg.scaffold_variant,
        lr=a.scaffold_lr, grad_clip=a.scaffold_clip, reward_clip=a.scaffold_reward_clip,
    )


@dataclass
class Learners:
    """Everything the training loop mutates.  Only ``exploiter`` survives training."""

    exploiter: Exploiter
    explorer: Explorer | None
    scaffolds: ScaffoldModel | None


def build_learners(cfg: ExperimentConfig, env: MultiAgentEnv, rng: np.random.Generator) -> Learners:
    pc = policy_config(cfg, env)
    exploiter = Exploiter(pc, rng)
    explorer = Explorer(pc, rng) if cfg.uses_explorer else None
    scaffolds = ScaffoldModel(scaffold_config(cfg, env), rng) if cfg.uses_scaffolds else None
    return Learners(exploiter, explorer, scaffolds)


# -- rollouts ----------------------------------------------------------------------------
def run_episode(env: MultiAgentEnv, exploiter: Exploiter, rng: np.random.Generator,
                explorer: Explorer | None = None, alpha: float = 0.0, epsilon: float = 0.0,
                on_step=None) -> EpisodeBatch:
    """Roll out one episode with the behavior policy; ``on_step()`` fires after every env step."""
    spec = env.spec
    n, u = spec.n_agents, spec.n_actions
    state, obs = env.reset()
    rec = EpisodeRecorder(state, obs, env.avail_actions())
    h_q = exploiter.init_hidden(n)
    h_x = explorer.init_hidden(n) if explorer is not None else None
    prev = np.zeros((n, u))
    ids = np.eye(n)
    while True:
        inputs = np.concatenate([obs, prev, ids], axis=-1)
        q, h_q = exploiter.act_values(inputs, h_q)
        probs = None
        if explorer is not None:
            probs, h_x = explorer.act_probs(inputs, h_x, state[None])
        actions, _ = behavior_action(probs, q, alpha, epsilon, rng, env.avail_actions())
        res = env.step(actions)
        rec.add(actions, res.reward_ext, res.next_state, res.next_obs, env.avail_actions(),
                terminal=res.done and not res.truncated)
        prev = np.eye(u)[actions]
        state, obs = res.next_state, res.next_obs
        if on_step is not None:
            on_step()
        if res.done:
            return rec.finish(res.won)


def evaluate(exploiter: Exploiter, env: MultiAgentEnv, n_episodes: int, rng: np.random.Generator) -> dict[str, float]:
    """Greedy rollouts with the exploitation networks only."""
    if n_episodes <= 0:
        raise ValueError("evaluate needs at least one episode")
    returns, wins = [], []
    for _ in range(n_episodes):
        ep = run_episode(env, exploiter, rng)
        returns.append(float(ep.rewards.sum()))
        wins.append(bool(ep.won[0]))
    return {"test_return_mean": float(np.mean(returns)), "test_win_rate": float(np.mean(wins))}


# -- updates --------------------------------------------------------------------------------
def scaffold_rewards(scaffolds: ScaffoldModel | None, batch: EpisodeBatch) -> np.ndarray:
    """Per-(t, i) scaffolds from the current CVAE, zero on padding, (B, T, n)."""
    out = np.zeros(batch.actions.shape)
    if scaffolds is None:
        return out
    m = batch.mask.astype(bool)
    s, a, s_next = batch.transitions()
    out[m] = scaffolds.rewards(s, a, s_next)
    return out


def int_ext_bonus(r_int: np.ndarray, weight: float) -> np.ndarray:
    """Summed per-agent scaffolds as a team reward bonus, (B, T)."""
    return weight * r_int.sum(axis=-1)


def train_policies(learners: Learners, batch: EpisodeBatch, cfg: ExperimentConfig) -> dict[str, float]:
    """One exploit step on the TD loss, then one actor and one value step on the scaffolds."""
    r_int = scaffold_rewards(learners.scaffolds, batch)
    mask = batch.mask.astype(bool)
    stats = {"mean_r_int": float(r_int[mask].mean()) if learners.scaffolds is not None else math.nan}

    bonus = int_ext_bonus(r_int, cfg.algo.int_ext_weight) if cfg.variant == "int_ext" else None
    ex = learners.exploiter
    ex.store.zero_grad()
    with Tape() as tape:
        loss = ex.loss(batch, bonus)
        tape.backward(loss)
    ex.optimizer.step()
    ex.store.zero_grad()
    stats["loss_td"] = float(loss.data)

    xp = learners.explorer
    if xp is not None:
        xp.store.zero_grad()
        with Tape() as tape:
            losses = exploration_losses(xp.store, batch, r_int, xp.config)
            # actor and value parameters are disjoint, so one sweep serves both optimizers
            tape.backward(losses["actor"] + losses["value"])
        xp.actor_optimizer.step()
        xp.value_optimizer.step()
        xp.store.zero_grad()
        stats.update(loss_actor=float(losses["actor"].data), loss_value=float(losses["value"].data),
                     actor_entropy=losses["entropy"])
    return stats


def train_scaffolds(scaffolds: ScaffoldModel, batch: EpisodeBatch, cap: int, rng: np.random.Generator) -> dict[str, float]:
    """One ELBO step on (at most ``cap``) transitions drawn from the sampled episodes."""
    s, a, s_next = batch.transitions()
    if len(s) > cap:
        idx = np.sort(rng.choice(len(s), size=cap, replace=False))
        s, a, s_next = s[idx], a[idx], s_next[idx]
    return {"loss_elbo": scaffolds.train_step(ScaffoldBatch(s, a, s_next), rng)["loss_elbo"]}


# -- main loop ----------------------------------------------------------------------------------
@dataclass
class TrainingResult:
    learners: Learners
    rows: list[dict[str, float]] = field(default_factory=list)
    steps: int = 0
    episodes: int = 0
    train_events: int = 0

    @property
    def exploiter(self) -> Exploiter:
        return self.learners.exploiter


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "env", "eval_env", "behavior", "eval", "buffer", "scaffold")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def run_training(cfg: ExperimentConfig, on_row=None) -> TrainingResult:
    """Collect, train and evaluate over environment steps until ``cfg.step_max``.

    Every ``train_interval`` steps (once the buffer holds a batch) the
    policies are updated first and the scaffolds second.  Targets are synced
    every ``target_update_interval`` steps and a greedy evaluation row is
    logged every ``eval_interval`` steps.  ``on_row(row)`` streams rows out.
    """
    a = cfg.algo
    rngs = _streams(cfg.seed)
    env = make_env(cfg.env, seed=int(rngs["env"].integers(2**31)))
    eval_env = make_env(cfg.env, seed=int(rngs["eval_env"].integers(2**31)))
    learners = build_learners(cfg, env, rngs["init"])
    buffer = ReplayBuffer(a.buffer_size)
    result = TrainingResult(learners)
    pending: dict[str, list[float]] = {k: [] for k in _TRAIN_KEYS}
    step = 0
    schedule = {"alpha": 0.0, "epsilon": 0.0}

    def current_schedule(t: int) -> tuple[float, float]:
        alpha = linear_schedule(t, a.alpha_start, a.alpha_end, cfg.step_max) if cfg.uses_explorer else 0.0
        eps = epsilon_schedule(t, a.epsilon_start, a.epsilon_finish, a.epsilon_anneal_steps, cfg.hold_epsilon)
        return alpha, eps

    def on_step():
        nonlocal step
        step += 1
        if step % a.train_interval == 0:
            if buffer.can_sample(a.batch_size):
                batch = buffer.sample(a.batch_size, rngs["buffer"])
                stats = train_policies(learners, batch, cfg)
                if learners.scaffolds is not None:
                    stats.update(train_scaffolds(learners.scaffolds, batch, a.scaffold_batch_transitions,
                                                 rngs["scaffold"]))
                for k, v in stats.items():
                    pending[k].append(v)
                result.train_events += 1
            else:
                log.debug("step %d: buffer has %d < %d episodes, skipping update", step, len(buffer), a.batch_size)
        if step % a.target_update_interval == 0:
            learners.exploiter.sync_target()
        if step % a.eval_interval == 0:
            row = {"step": step, "episodes": result.episodes}
            row.update(evaluate(learners.exploiter, eval_env, a.eval_episodes, rngs["eval"]) if a.eval_episodes
                       else {"test_return_mean": math.nan, "test_win_rate": math.nan})
            for k in _TRAIN_KEYS:
                vals = [v for v in pending[k] if not math.isnan(v)]
                row[k] = float(np.mean(vals)) if vals else math.nan
                pending[k].clear()
            row.update(schedule)
            result.rows.append(row)
            if on_row is not None:
                on_row(row)

    while step < cfg.step_max:
        alpha, eps = current_schedule(step)
        schedule.update(alpha=alpha, epsilon=eps)
        ep = run_episode(env, learners.exploiter, rngs["behavior"], learners.explorer, alpha, eps, on_step)
        buffer.add(ep)
        result.episodes += 1
    result.steps = step
    return result


def metrics_header() -> str:
    return ",".join(METRIC_COLUMNS) + "\n"


def metrics_line(row: dict[str, float]) -> str:
    """One CSV line; floats use ``repr`` so values round-trip exactly."""
    return ",".join(_fmt(row[c]) for c in METRIC_COLUMNS) + "\n"


def format_metrics(rows: list[dict[str, float]]) -> str:
    return metrics_header() + "".join(metrics_line(r) for r in rows)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
