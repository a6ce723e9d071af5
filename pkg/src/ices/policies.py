"""Exploitation (recurrent Q agents + monotonic mixer) and exploration (actor + baseline).

The two paths never share parameters.  The exploit path is a QMIX-style
learner trained on the extrinsic TD error; the explore path is a per-agent
stochastic actor trained one step at a time on the intrinsic scaffold with a
learned baseline.  ``behavior_action`` mixes them per agent per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episodes import EpisodeBatch
from .nn import T, Adam, CategoricalDist, ParamStore, Tensor, greedy, gru_cell, init_gru, init_linear, init_mlp
from .nn import linear, mlp_forward, mlp_layers, no_grad
from .nn.tensor import NumericError

ADVANTAGE_MODES = ("exact", "paper_literal")
UNAVAILABLE = -1e10  # finite stand-in for -inf on masked actions


@dataclass(frozen=True)
class PolicyConfig:
    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    hidden_dim: int = 32
    mixer_embed: int = 16
    hypernet_hidden: int = 32
    gamma: float = 0.99
    beta: float = 0.05
    advantage_mode: str = "exact"
    actor_sees_state: bool = True
    lr_exploit: float = 5e-4
    lr_explore: float = 1e-3
    lr_value: float = 1e-3
    exploit_grad_clip: float = 10.0
    explore_grad_clip: float = 10.0
    double_q: bool = False

    def __post_init__(self):
        if self.advantage_mode not in ADVANTAGE_MODES:
            raise ValueError(f"advantage_mode must be one of {ADVANTAGE_MODES}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    @property
    def agent_input_dim(self) -> int:
        return self.obs_dim + self.n_actions + self.n_agents


def agent_inputs(obs: np.ndarray, actions: np.ndarray, n_actions: int) -> np.ndarray:
    """obs ++ one-hot(previous action) ++ one-hot(agent id); obs (B, T+1, n, O), actions (B, T, n)."""
    b, t1, n, _ = obs.shape
    prev = np.zeros((b, t1, n, n_actions))
    if actions.shape[1]:
        prev[:, 1:] = np.eye(n_actions)[actions[:, : t1 - 1]]
    ids = np.broadcast_to(np.eye(n), (b, t1, n, n))
    return np.concatenate([obs, prev, ids], axis=-1)


def _recurrent_unroll(store: ParamStore, prefix: str, inputs: np.ndarray) -> Tensor:
    """fc -> GRU over time for every (episode, agent) row.

    inputs (B, T, n, in); returns hidden states (T*B*n, H) in (t, episode, agent)
    row order.  Input and gate projections run once over all steps, so only
    the recurrent part sits inside the time loop.
    """
    b, t1, n, d = inputs.shape
    x = np.transpose(inputs, (1, 0, 2, 3)).reshape(t1 * b * n, d)
    e = T.relu(linear(store, f"{prefix}.fc", x))
    gx = T.reshape(T.affine(e, store[f"{prefix}.gru.wx"], store[f"{prefix}.gru.bx"]), (t1, b * n, -1))
    wh, bh = store[f"{prefix}.gru.wh"], store[f"{prefix}.gru.bh"]
    h = Tensor(np.zeros((b * n, wh.shape[0])))
    hiddens = []
    for t in range(t1):
        h = T.gru_recurrent(gx[t], h, wh, bh)
        hiddens.append(h)
    return T.reshape(T.stack(hiddens, axis=0), (t1 * b * n, -1))


def _rows_to_batch(x: Tensor, b: int, t: int, n: int) -> Tensor:
    """(T*B*n, ...) rows in (t, episode, agent) order -> (B, T, n, ...)."""
    x = T.reshape(x, (t, b, n) + x.shape[1:])
    return T.transpose(x, (1, 0, 2) + tuple(range(3, x.ndim)))


# -- exploitation ------------------------------------------------------------------------
def init_exploit(config: PolicyConfig, rng: np.random.Generator) -> ParamStore:
    c = config
    store = ParamStore()
    init_linear(store, "agent.fc", c.agent_input_dim, c.hidden_dim, rng)
    init_gru(store, "agent.gru", c.hidden_dim, c.hidden_dim, rng)
    init_linear(store, "agent.q", c.hidden_dim, c.n_actions, rng)
    init_mlp(store, "mixer.hyper_w1", [c.state_dim, c.hypernet_hidden, c.n_agents * c.mixer_embed], rng)
    init_mlp(store, "mixer.hyper_b1", [c.state_dim, c.mixer_embed], rng)
    init_mlp(store, "mixer.hyper_w2", [c.state_dim, c.hypernet_hidden, c.mixer_embed], rng)
    init_mlp(store, "mixer.value", [c.state_dim, c.mixer_embed, 1], rng)
    return store


def agent_q(store: ParamStore, inputs, hidden) -> tuple[Tensor, Tensor]:
    """One recurrent step of the shared agent network; inputs (N, in), hidden (N, H)."""
    e = T.relu(linear(store, "agent.fc", inputs))
    h = gru_cell(store, "agent.gru", e, hidden)
    return linear(store, "agent.q", h), h


def mask_unavailable(q: np.ndarray, avail: np.ndarray | None) -> np.ndarray:
    if avail is None:
        return q
    return np.where(avail, q, UNAVAILABLE)


def unroll_q(store: ParamStore, batch: EpisodeBatch, config: PolicyConfig, include_final: bool = True) -> Tensor:
    """Q values for every step, (B, T+1, n, U), or (B, T, n, U) without the final next observation."""
    obs = batch.obs if include_final else batch.obs[:, : batch.max_t]
    inputs = agent_inputs(obs, batch.actions, config.n_actions)
    q = linear(store, "agent.q", _recurrent_unroll(store, "agent", inputs))
    return _rows_to_batch(q, batch.batch_size, obs.shape[1], batch.n_agents)


def mix(store: ParamStore, q_agents, states, config: PolicyConfig) -> Tensor:
    """Monotonic mixing: Q_tot = elu(q W1 + b1) W2 + V(s), with W1, W2 = |hypernet(s)|."""
    q_agents = T.as_tensor(q_agents)
    states = np.asarray(states, dtype=float)
    m = q_agents.shape[0]
    n, e = config.n_agents, config.mixer_embed
    w1 = T.absolute(mlp_forward(store, mlp_layers(store, "mixer.hyper_w1"), states))
    b1 = mlp_forward(store, mlp_layers(store, "mixer.hyper_b1"), states)
    w2 = T.absolute(mlp_forward(store, mlp_layers(store, "mixer.hyper_w2"), states))
    v = mlp_forward(store, mlp_layers(store, "mixer.value"), states)
    hidden = T.elu(T.matmul(T.reshape(q_agents, (m, 1, n)), T.reshape(w1, (m, n, e))) + T.reshape(b1, (m, 1, e)))
    out = T.matmul(hidden, T.reshape(w2, (m, e, 1)))
    return T.reshape(out, (m,)) + T.reshape(v, (m,))


def td_targets(target: ParamStore, batch: EpisodeBatch, config: PolicyConfig,
               reward_bonus: np.ndarray | None = None, online_q: np.ndarray | None = None) -> np.ndarray:
    """y = r + gamma * (1 - terminal) * max_u Q_tot(next; target params), (B, T).

    With ``online_q`` (B, T+1, n, U) the next action is the online network's
    argmax instead, evaluated by the target (double Q-learning).
    """
    with no_grad():
        q_next = mask_unavailable(unroll_q(target, batch, config).data[:, 1:], batch.avail[:, 1:])
        if online_q is None:
            q_next = q_next.max(axis=-1)  # (B, T, n)
        else:
            pick = mask_unavailable(online_q[:, 1:], batch.avail[:, 1:]).argmax(axis=-1)
            q_next = np.take_along_axis(q_next, pick[..., None], axis=-1)[..., 0]
        b, t, n = q_next.shape
        tot = mix(target, q_next.reshape(b * t, n), batch.states[:, 1:].reshape(b * t, -1), config).data
    rewards = batch.rewards if reward_bonus is None else batch.rewards + reward_bonus
    return rewards + config.gamma * (1.0 - batch.terminated) * tot.reshape(b, t)


def _chosen_mixed(store: ParamStore, q: Tensor, batch: EpisodeBatch, config: PolicyConfig) -> Tensor:
    chosen = T.take_along(q, batch.actions[..., None], axis=-1)  # (B, T, n, 1)
    b, t, n = batch.actions.shape
    tot = mix(store, T.reshape(chosen, (b * t, n)), batch.states[:, :-1].reshape(b * t, -1), config)
    return T.reshape(tot, (b, t))


def chosen_q_tot(store: ParamStore, batch: EpisodeBatch, config: PolicyConfig) -> Tensor:
    return _chosen_mixed(store, unroll_q(store, batch, config, include_final=False), batch, config)


def td_loss(store: ParamStore, target: ParamStore, batch: EpisodeBatch, config: PolicyConfig,
            reward_bonus: np.ndarray | None = None) -> Tensor:
    """Masked mean squared TD error of the mixed value against the target network."""
    if config.double_q:
        q = unroll_q(store, batch, config)
        y = td_targets(target, batch, config, reward_bonus, online_q=q.data)
        q_tot = _chosen_mixed(store, q[:, : batch.max_t], batch, config)
    else:
        y = td_targets(target, batch, config, reward_bonus)
        q_tot = chosen_q_tot(store, batch, config)
    err = (q_tot - y) * batch.mask
    loss = T.tsum(T.square(err)) * (1.0 / max(batch.mask.sum(), 1.0))
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite TD loss {loss.data}")
    return loss


# -- exploration ------------------------------------------------------------------------
def init_explore(config: PolicyConfig, rng: np.random.Generator) -> ParamStore:
    c = config
    store = ParamStore()
    init_linear(store, "actor.fc", c.agent_input_dim, c.hidden_dim, rng)
    init_gru(store, "actor.gru", c.hidden_dim, c.hidden_dim, rng)
    head_in = c.hidden_dim + c.state_dim + c.n_agents
    init_mlp(store, "actor.head", [head_in, c.hidden_dim, c.n_actions], rng)
    init_mlp(store, "value.net", [head_in, c.hidden_dim, 1], rng)
    return store


def _head_inputs(h, states: np.ndarray, n_agents: int, use_state: bool) -> Tensor:
    """[h, s, one-hot id]; h rows are (group, agent) with one state row per group, states (G, S)."""
    rows = h.shape[0]
    s = np.repeat(states, n_agents, axis=0) if use_state else np.zeros((rows, states.shape[-1]))
    ids = np.tile(np.eye(n_agents), (rows // n_agents, 1))
    return T.concat([h, Tensor(s), Tensor(ids)], axis=-1)


def explore_dist(store: ParamStore, hidden, states, config: PolicyConfig) -> CategoricalDist:
    """Actor distribution from the trunk encoding of each agent's history, rows (group, agent)."""
    x = _head_inputs(T.as_tensor(hidden), np.atleast_2d(states), config.n_agents, config.actor_sees_state)
    return CategoricalDist(mlp_forward(store, mlp_layers(store, "actor.head"), x))


def value_baseline(store: ParamStore, hidden, states, config: PolicyConfig) -> Tensor:
    """V(history, s); the trunk encoding enters detached so only the value net learns from it."""
    h = Tensor(T.as_tensor(hidden).data)
    x = _head_inputs(h, np.atleast_2d(states), config.n_agents, True)
    return T.reshape(mlp_forward(store, mlp_layers(store, "value.net"), x), (-1,))


def actor_step(store: ParamStore, inputs, hidden) -> Tensor:
    e = T.relu(linear(store, "actor.fc", inputs))
    return gru_cell(store, "actor.gru", e, hidden)


def unroll_explore(store: ParamStore, batch: EpisodeBatch, config: PolicyConfig) -> tuple[Tensor, Tensor]:
    """Actor logits (B, T, n, U) and baseline values (B, T, n) on the real steps."""
    b, t, n = batch.actions.shape
    inputs = agent_inputs(batch.obs[:, :t], batch.actions, config.n_actions)
    h = _recurrent_unroll(store, "actor", inputs)
    states = np.transpose(batch.states[:, :t], (1, 0, 2)).reshape(t * b, -1)
    logits = explore_dist(store, h, states, config).logits
    values = value_baseline(store, h, states, config)
    return _rows_to_batch(logits, b, t, n), _rows_to_batch(values, b, t, n)


def advantage(r_int: np.ndarray, values: np.ndarray, log_prob: np.ndarray, beta: float, mode: str) -> np.ndarray:
    """Exact-entropy form r - V - beta (1 + log nu(u)), or the constant-beta form r - V - beta."""
    if mode == "exact":
        return r_int - values - beta * (1.0 + log_prob)
    if mode == "paper_literal":
        return r_int - values - beta
    raise ValueError(f"unknown advantage mode {mode!r}")


def exploration_losses(store: ParamStore, batch: EpisodeBatch, r_int: np.ndarray, config: PolicyConfig,
                       fixed_advantage: np.ndarray | None = None) -> dict:
    """Actor (REINFORCE with baseline) and value regression losses over real (t, i) pairs.

    Both are single-step objectives on the per-agent scaffold: no discounting,
    no bootstrapping.  The advantage is a constant inside the actor loss; pass
    ``fixed_advantage`` to pin it (gradient checks do this so that finite
    differences do not move it).  Returns tensors ``actor`` and ``value``, the
    numpy ``advantage`` and the mean actor entropy.
    """
    logits, values = unroll_explore(store, batch, config)
    logp_all = T.log_softmax(logits, axis=-1)
    logp = T.reshape(T.take_along(logp_all, batch.actions[..., None], axis=-1), batch.actions.shape)
    mask = np.broadcast_to(batch.mask[..., None], batch.actions.shape)
    denom = 1.0 / max(mask.sum(), 1.0)
    adv = fixed_advantage
    if adv is None:
        adv = advantage(r_int, values.data, logp.data, config.beta, config.advantage_mode)
    actor = -T.tsum(logp * (adv * mask)) * denom
    value = T.tsum(T.square(values - r_int) * mask) * denom
    probs = np.exp(logp_all.data)
    entropy = float((-(probs * logp_all.data).sum(axis=-1) * mask).sum() * denom)
    return {"actor": actor, "value": value, "advantage": adv, "entropy": entropy}


def exploration_loss(store: ParamStore, batch: EpisodeBatch, r_int: np.ndarray, config: PolicyConfig) -> Tensor:
    return exploration_losses(store, batch, r_int, config)["actor"]


def value_loss(store: ParamStore, batch: EpisodeBatch, r_int: np.ndarray, config: PolicyConfig) -> Tensor:
    return exploration_losses(store, batch, r_int, config)["value"]


# -- behavior ----------------------------------------------------------------------------
def behavior_action(explore_probs: np.ndarray | None, q_values: np.ndarray, alpha: float, epsilon: float,
                    rng: np.random.Generator, avail: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-agent mixture: sample the actor w.p. alpha, else greedy Q with residual epsilon.

    Returns ``(actions, explored)``, both of length n.  No random numbers are
    drawn when ``alpha == 0`` and ``epsilon == 0``.
    """
    q_values = np.atleast_2d(q_values)
    n, u = q_values.shape
    avail = np.ones((n, u), dtype=bool) if avail is None else np.asarray(avail, dtype=bool)
    if not (0.0 <= alpha <= 1.0 and 0.0 <= epsilon <= 1.0):
        raise ValueError("alpha and epsilon must lie in [0, 1]")
    actions = np.asarray(greedy(mask_unavailable(q_values, avail)), dtype=np.int64).reshape(n)
    explored = np.zeros(n, dtype=bool)
    if alpha > 0.0:
        if explore_probs is None:
            raise ValueError("alpha > 0 needs exploration probabilities")
        explored = rng.random(n) < alpha
        if explored.any():
            p = np.where(avail, explore_probs, 0.0)
            sampled = CategoricalDist(Tensor(np.log(np.maximum(p, 1e-300)))).sample(rng)
            actions = np.where(explored, sampled, actions)
    if epsilon > 0.0:
        flip = (rng.random(n) < epsilon) & ~explored
        if flip.any():
            randoms = np.array([rng.choice(np.flatnonzero(avail[i])) for i in range(n)])
            actions = np.where(flip, randoms, actions)
    return actions, explored


def linear_schedule(step: int, start: float, end: float, duration: int) -> float:
    if duration <= 0:
        return end
    frac = min(max(step / duration, 0.0), 1.0)
    return start + frac * (end - start)


def epsilon_schedule(step: int, start: float, finish: float, anneal_steps: int, hold_finish: bool = False) -> float:
    """Linear from start to finish, then 0 (or kept at finish for the plain QMIX baseline)."""
    if step >= anneal_steps:
        return finish if hold_finish else 0.0
    return linear_schedule(step, start, finish, anneal_steps)


# -- learners ------------------------------------------------------------------------------
class Exploiter:
    """Q agents + mixer (``store``), the frozen target copy and their optimizer."""

    def __init__(self, config: PolicyConfig, rng: np.random.Generator):
        self.config = config
        self.store = init_exploit(config, rng)
        self.target = self.store.copy()
        self.optimizer = Adam(self.store, lr=config.lr_exploit, max_grad_norm=config.exploit_grad_clip)

    def sync_target(self) -> None:
        self.target.load(self.store.state())

    def loss(self, batch: EpisodeBatch, reward_bonus: np.ndarray | None = None) -> Tensor:
        return td_loss(self.store, self.target, batch, self.config, reward_bonus)

    def init_hidden(self, n: int) -> np.ndarray:
        return np.zeros((n, self.config.hidden_dim))

    def act_values(self, inputs: np.ndarray, hidden: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with no_grad():
            q, h = agent_q(self.store, inputs, hidden)
        return q.data, h.data


class Explorer:
    """Exploration actor (``actor.*``) and value baseline (``value.*``) with separate optimizers."""

    def __init__(self, config: PolicyConfig, rng: np.random.Generator):
        self.config = config
        self.store = init_explore(config, rng)
        self.actor_optimizer = Adam(self.store, lr=config.lr_explore, prefix="actor.",
                                    max_grad_norm=config.explore_grad_clip)
        self.value_optimizer = Adam(self.store, lr=config.lr_value, prefix="value.",
                                    max_grad_norm=config.explore_grad_clip)

    def init_hidden(self, n: int) -> np.ndarray:
        return np.zeros((n, self.config.hidden_dim))

    def act_probs(self, inputs: np.ndarray, hidden: np.ndarray, state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with no_grad():
            h = actor_step(self.store, inputs, hidden)
            dist = explore_dist(self.store, h, state, self.config)
        return dist.probs(), h.data
