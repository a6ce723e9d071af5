import dataclasses
import math

import numpy as np
import pytest

from ices.episodes import EpisodeBatch, collate
from ices.envs import CooperativeMatrixGame
from ices.nn import CategoricalDist, Tape, Tensor, greedy
from ices.nn.gradcheck import analytic_grads, check_gradients, relative_error
from ices.policies import (
    Explorer,
    Exploiter,
    PolicyConfig,
    advantage,
    agent_q,
    behavior_action,
    epsilon_schedule,
    explore_dist,
    exploration_loss,
    exploration_losses,
    init_exploit,
    linear_schedule,
    mask_unavailable,
    mix,
    td_loss,
    td_targets,
    value_loss,
)
from ices.trainer import run_episode

TOL = 1e-4


def small_config(**kw) -> PolicyConfig:
    base = dict(n_agents=2, n_actions=3, obs_dim=4, state_dim=4, hidden_dim=4, mixer_embed=3, hypernet_hidden=4)
    base.update(kw)
    return PolicyConfig(**base)


def zero(store, prefix=""):
    for t in store.tensors(prefix):
        t.data = np.zeros_like(t.data)


def matrix_batch(config, n_episodes=2, limit=3, seed=0, alpha=0.5):
    rng = np.random.default_rng(seed)
    env = CooperativeMatrixGame(episode_limit=limit, seed=seed)
    ex, xp = Exploiter(config, rng), Explorer(config, rng)
    return collate([run_episode(env, ex, rng, xp, alpha, 0.5) for _ in range(n_episodes)]), ex, xp


def two_state_episode(rewards, terminal_last=True) -> EpisodeBatch:
    """Deterministic s0 -> s1 -> end, two agents with one-hot state observations."""
    t = len(rewards)
    states = np.eye(4)[[0, 1, 1][: t + 1]][None]
    obs = np.repeat(states[:, :, None, :], 2, axis=2)
    term = np.zeros((1, t))
    term[0, -1] = float(terminal_last)
    return EpisodeBatch(states, obs, np.ones((1, t + 1, 2, 3), bool), np.zeros((1, t, 2), np.int64),
                        np.asarray(rewards, float)[None], term, np.ones((1, t)), np.array([True]))


# -- agent network ---------------------------------------------------------------------
def test_zero_agent_gives_equal_q_and_action_zero():
    c = small_config()
    store = init_exploit(c, np.random.default_rng(0))
    zero(store, "agent.")
    q, h = agent_q(store, np.ones((2, c.agent_input_dim)), np.zeros((2, c.hidden_dim)))
    assert np.all(q.data == q.data[0, 0])
    assert np.array_equal(greedy(q.data), [0, 0])


def test_unavailable_actions_never_chosen():
    rng = np.random.default_rng(1)
    for _ in range(200):
        q = rng.normal(size=(2, 5))
        avail = rng.random((2, 5)) < 0.5
        avail[:, rng.integers(5)] = True
        acts = greedy(mask_unavailable(q, avail))
        assert all(avail[i, a] for i, a in enumerate(acts))
        acts, _ = behavior_action(np.full((2, 5), 0.2), q, 0.5, 0.5, rng, avail)
        assert all(avail[i, a] for i, a in enumerate(acts))


def test_td_loss_gradient_through_agents_and_mixer():
    c = small_config()
    batch, ex, _ = matrix_batch(c)
    batch.rewards[:] = np.random.default_rng(2).normal(size=batch.rewards.shape)
    for t in ex.target.tensors():
        t.data = t.data + 0.1
    assert check_gradients(ex.store, lambda: ex.loss(batch)) <= TOL


# -- mixer -----------------------------------------------------------------------------
def test_mixer_is_monotone_under_random_bumps():
    violations = 0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        c = small_config(n_agents=3, state_dim=5, mixer_embed=4, hypernet_hidden=6)
        store = init_exploit(c, rng)
        for t in store.tensors("mixer."):
            t.data = t.data * rng.uniform(0.5, 3.0)
        s = rng.normal(size=(100, 5))
        q = rng.normal(size=(100, 3)) * 3
        i = rng.integers(0, 3, size=100)
        bumped = q.copy()
        bumped[np.arange(100), i] += rng.exponential(1.0, size=100) + 1e-9
        violations += int(np.sum(mix(store, bumped, s, c).data < mix(store, q, s, c).data))
    assert violations == 0


def test_single_agent_identity_mixer_adds_state_bias():
    c = small_config(n_agents=1, mixer_embed=2)
    store = init_exploit(c, np.random.default_rng(3))
    zero(store, "mixer.hyper_")
    store["mixer.hyper_w1.1.b"].data = np.array([1.0, 0.0])
    store["mixer.hyper_w2.1.b"].data = np.array([1.0, 0.0])
    s = np.random.default_rng(3).normal(size=(6, 4))
    q = np.linspace(0.1, 4.0, 6)[:, None]
    bias = mix(store, np.zeros((6, 1)), s, c).data
    np.testing.assert_allclose(mix(store, q, s, c).data, q[:, 0] + bias, rtol=0, atol=1e-12)


def test_mixer_gradient():
    c = small_config()
    store = init_exploit(c, np.random.default_rng(4))
    rng = np.random.default_rng(4)
    q, s = rng.normal(size=(5, 2)), rng.normal(size=(5, 4))
    assert check_gradients(store, lambda: (mix(store, q, s, c) ** 2).sum(), prefix="mixer.") <= TOL


# -- TD loss -----------------------------------------------------------------------------
def test_terminal_reward_one_with_zero_value_costs_one():
    c = small_config()
    store = init_exploit(c, np.random.default_rng(5))
    zero(store)
    batch = two_state_episode([1.0])
    assert td_loss(store, store.copy(), batch, c).item() == pytest.approx(1.0, abs=1e-15)


def test_zero_rewards_and_zero_values_give_zero_loss():
    c = small_config()
    store = init_exploit(c, np.random.default_rng(6))
    zero(store)
    batch = two_state_episode([0.0, 0.0], terminal_last=False)
    assert td_loss(store, store.copy(), batch, c).item() == 0.0


def test_gamma_zero_targets_are_rewards():
    c = small_config(gamma=1e-300)
    batch, ex, _ = matrix_batch(c, n_episodes=3, limit=4, seed=7)
    batch.rewards[:] = np.random.default_rng(7).normal(size=batch.rewards.shape)
    # gamma must be > 0; with 1e-300 the bootstrap term underflows to exactly zero
    assert np.array_equal(td_targets(ex.target, batch, c), batch.rewards)


def test_self_consistent_value_table_has_zero_td_error():
    gamma = 0.9
    c = small_config(gamma=gamma, mixer_embed=2)
    store = init_exploit(c, np.random.default_rng(8))
    zero(store)
    # Q_tot reduces to the state-value head: V(s0) = gamma, V(s1) = 1
    store["mixer.value.0.w"].data = np.eye(4, 2)
    store["mixer.value.1.w"].data = np.array([[gamma], [1.0]])
    batch = two_state_episode([0.0, 1.0])
    assert td_loss(store, store.copy(), batch, c).item() <= 1e-10


def test_truncated_episodes_bootstrap():
    c = small_config()
    store = init_exploit(c, np.random.default_rng(9))
    zero(store)
    store["mixer.value.1.b"].data = np.array([2.0])
    batch = two_state_episode([0.0], terminal_last=False)
    assert td_targets(store, batch, c)[0, 0] == pytest.approx(c.gamma * 2.0)


def test_padding_is_ignored():
    c = small_config()
    short = two_state_episode([1.0])
    long = two_state_episode([0.0, 1.0])
    store = init_exploit(c, np.random.default_rng(10))
    both = collate([short, long])
    alone = td_loss(store, store.copy(), short, c).item() * 1 + td_loss(store, store.copy(), long, c).item() * 2
    assert td_loss(store, store.copy(), both, c).item() == pytest.approx(alone / 3, rel=1e-12)


# -- exploration actor ----------------------------------------------------------------------
def test_zero_actor_is_uniform():
    c = small_config()
    xp = Explorer(c, np.random.default_rng(11))
    zero(xp.store, "actor.")
    dist = explore_dist(xp.store, np.ones((2, c.hidden_dim)), np.ones((1, 4)), c)
    np.testing.assert_allclose(dist.probs(), 1.0 / 3.0)
    np.testing.assert_allclose(dist.entropy().data, math.log(3), atol=1e-12)


def test_actor_without_state_ignores_state():
    c = small_config(actor_sees_state=False)
    xp = Explorer(c, np.random.default_rng(12))
    h = np.random.default_rng(12).normal(size=(2, c.hidden_dim))
    a = explore_dist(xp.store, h, np.eye(4)[[0]], c).logits.data
    b = explore_dist(xp.store, h, np.eye(4)[[3]] * 7.0, c).logits.data
    assert np.array_equal(a, b)
    with_state = small_config()
    assert not np.array_equal(explore_dist(xp.store, h, np.eye(4)[[0]], with_state).logits.data,
                              explore_dist(xp.store, h, np.eye(4)[[3]], with_state).logits.data)


def test_actor_is_deterministic():
    c = small_config()
    xp = Explorer(c, np.random.default_rng(13))
    h = np.ones((2, c.hidden_dim))
    assert np.array_equal(explore_dist(xp.store, h, np.ones((1, 4)), c).logits.data,
                          explore_dist(xp.store, h, np.ones((1, 4)), c).logits.data)


# -- behavior policy --------------------------------------------------------------------------
def test_pure_exploitation_matches_greedy():
    rng = np.random.default_rng(14)
    for _ in range(100):
        q = rng.normal(size=(3, 4))
        acts, explored = behavior_action(np.full((3, 4), 0.25), q, 0.0, 0.0, rng)
        assert np.array_equal(acts, np.argmax(q, axis=1)) and not explored.any()


def test_full_exploration_samples_the_actor():
    rng = np.random.default_rng(15)
    probs = np.array([[0.7, 0.2, 0.1, 0.0]])
    q = np.array([[0.0, 0.0, 0.0, 9.0]])
    counts = np.zeros(4)
    for _ in range(20000):
        acts, explored = behavior_action(probs, q, 1.0, 0.0, rng)
        assert explored.all()
        counts[acts[0]] += 1
    freq = counts / counts.sum()
    assert counts[3] == 0
    assert np.all(np.abs(freq - probs[0]) <= 4 * np.sqrt(probs[0] * (1 - probs[0]) / 20000) + 1e-12)


def test_half_alpha_explores_half_the_time():
    rng = np.random.default_rng(16)
    n = 100_000
    explored = 0
    probs, q = np.full((1, 3), 1 / 3), np.zeros((1, 3))
    for _ in range(n):
        explored += int(behavior_action(probs, q, 0.5, 0.0, rng)[1][0])
    assert 0.494 <= explored / n <= 0.506


def test_behavior_rejects_bad_rates():
    with pytest.raises(ValueError):
        behavior_action(None, np.zeros((1, 3)), 1.5, 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        behavior_action(None, np.zeros((1, 3)), 0.5, 0.0, np.random.default_rng(0))


def test_schedules():
    assert linear_schedule(0, 0.1, 0.05, 100) == 0.1
    assert linear_schedule(100, 0.1, 0.05, 100) == 0.05
    assert linear_schedule(50, 0.1, 0.05, 100) == pytest.approx(0.075)
    alphas = [linear_schedule(t, 0.1, 0.05, 1000) for t in range(0, 1200, 7)]
    assert all(a >= b for a, b in zip(alphas, alphas[1:]))
    assert epsilon_schedule(0, 1.0, 0.05, 100) == 1.0
    assert epsilon_schedule(100, 1.0, 0.05, 100) == 0.0
    assert epsilon_schedule(10**6, 1.0, 0.05, 100, hold_finish=True) == 0.05


# -- exploration losses --------------------------------------------------------------------------
def test_actor_gradient_both_modes():
    for mode in ("exact", "paper_literal"):
        c = small_config(advantage_mode=mode, beta=0.3)
        batch, _, xp = matrix_batch(c, seed=17)
        r = np.random.default_rng(17).normal(size=batch.actions.shape)
        adv = exploration_losses(xp.store, batch, r, c)["advantage"]
        err = check_gradients(xp.store, lambda: exploration_losses(xp.store, batch, r, c, adv)["actor"], "actor.")
        assert err <= TOL, mode


def baseline_values(xp, batch, c):
    """V for every (t, i): the ``paper_literal`` advantage with r = 0 and beta = 0 is -V."""
    lit = dataclasses.replace(c, advantage_mode="paper_literal", beta=0.0)
    return -exploration_losses(xp.store, batch, np.zeros(batch.actions.shape), lit)["advantage"]


def test_paper_literal_zero_advantage_means_zero_gradient():
    c = small_config(advantage_mode="paper_literal", beta=0.2)
    batch, _, xp = matrix_batch(c, seed=18)
    r = baseline_values(xp, batch, c) + 0.2
    grads = analytic_grads(xp.store, lambda: exploration_loss(xp.store, batch, r, c), "actor.")
    # r - V - beta is zero up to rounding of the subtraction
    assert max(np.abs(g).max() for g in grads.values()) <= 1e-14


def test_beta_zero_modes_coincide():
    batch, _, xp = matrix_batch(small_config(), seed=19)
    r = np.random.default_rng(19).normal(size=batch.actions.shape)
    g = [analytic_grads(xp.store, lambda m=m: exploration_loss(xp.store, batch, r, small_config(beta=0.0,
                                                                advantage_mode=m)), "actor.")
         for m in ("exact", "paper_literal")]
    for name in g[0]:
        np.testing.assert_array_equal(g[0][name], g[1][name])


def entropy_objective(logits: np.ndarray, rewards: np.ndarray, beta: float) -> float:
    p = np.exp(logits - logits.max())
    p /= p.sum()
    return float(p @ rewards - beta * np.sum(p * np.log(p)))


def score_function_gradient(logits0, r_table, baseline, beta, mode, rng, n=100_000, stratified=False):
    if stratified:
        # one uniform per stratum [k/n, (k+1)/n), pushed through the inverse CDF
        cdf = np.cumsum(CategoricalDist(Tensor(logits0)).probs())
        u = (np.arange(n) + rng.random(n)) / n
        actions = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(logits0) - 1)
    else:
        actions = CategoricalDist(Tensor(np.tile(logits0, (n, 1)))).sample(rng)
    r = r_table[actions]
    theta = Tensor(logits0.copy(), requires_grad=True)
    with Tape() as tape:
        logp = CategoricalDist(theta + Tensor(np.zeros((n, len(logits0))))).log_prob(actions)
        adv = advantage(r, r.mean() if baseline is None else baseline, logp.data, beta, mode)
        tape.backward(-(logp * adv).mean())
    return -theta.grad


def test_exact_mode_matches_regularized_objective():
    """Score-function estimate of the gradient of E[r] + beta * H against finite differences."""
    beta = 0.5
    logits0 = np.array([0.3, -0.4, 0.8])
    rewards = np.array([1.5, -1.0, 0.2])
    estimate = score_function_gradient(logits0, rewards, entropy_objective(logits0, rewards, beta), beta,
                                       "exact", np.random.default_rng(20), stratified=True)
    fd = np.zeros(3)
    for k in range(3):
        e = np.eye(3)[k] * 1e-5
        fd[k] = (entropy_objective(logits0 + e, rewards, beta) - entropy_objective(logits0 - e, rewards, beta)) / 2e-5
    assert relative_error(estimate, fd) <= 1e-3


def test_paper_literal_gradient_invariant_to_reward_shift():
    # the baseline is the least-squares constant fit, i.e. a converged value regression
    beta, shift = 0.1, 3.0
    logits0 = np.array([0.2, 0.0, -0.5])
    rewards = np.array([1.0, 0.0, 0.5])

    def grad(r_table, seed):
        return score_function_gradient(logits0, r_table, None, beta, "paper_literal", np.random.default_rng(seed))

    base, shifted = grad(rewards, 1), grad(rewards + shift, 2)
    spread = np.std([grad(rewards, s) for s in range(3, 9)], axis=0)
    assert np.all(np.abs(base - shifted) <= 4 * np.sqrt(2) * spread)


def test_value_loss_zero_when_baseline_matches():
    c = small_config()
    batch, _, xp = matrix_batch(c, seed=22)
    assert value_loss(xp.store, batch, baseline_values(xp, batch, c), c).item() <= 1e-24


def test_value_regression_to_constant():
    c = small_config(lr_value=1e-2)
    batch, _, xp = matrix_batch(c, seed=23, n_episodes=2, limit=2)
    target = np.full(batch.actions.shape, 0.7)
    for _ in range(2000):
        xp.store.zero_grad()
        with Tape() as tape:
            tape.backward(value_loss(xp.store, batch, target, c))
        xp.value_optimizer.step()
    assert np.max(np.abs(baseline_values(xp, batch, c) - 0.7)[batch.mask > 0]) <= 1e-2


def test_value_gradient():
    c = small_config()
    batch, _, xp = matrix_batch(c, seed=24)
    r = np.random.default_rng(24).normal(size=batch.actions.shape)
    assert check_gradients(xp.store, lambda: value_loss(xp.store, batch, r, c), "value.") <= TOL


def test_actor_loss_ignores_value_parameters():
    c = small_config()
    batch, _, xp = matrix_batch(c, seed=25)
    r = np.random.default_rng(25).normal(size=batch.actions.shape)
    grads = analytic_grads(xp.store, lambda: exploration_loss(xp.store, batch, r, c), "value.")
    assert all(np.all(g == 0.0) for g in grads.values())
    grads = analytic_grads(xp.store, lambda: value_loss(xp.store, batch, r, c), "actor.")
    assert all(np.all(g == 0.0) for g in grads.values())


def test_entropy_rises_to_near_maximum_without_reward():
    c = small_config(beta=0.5, lr_explore=1e-2)
    rng = np.random.default_rng(26)
    env = CooperativeMatrixGame(episode_limit=1, seed=26)
    ex, xp = Exploiter(c, rng), Explorer(c, rng)
    xp.store["actor.head.1.b"].data = np.array([4.0, 0.0, -4.0])
    first = None
    for _ in range(5000):
        batch = collate([run_episode(env, ex, rng, xp, 1.0, 0.0) for _ in range(4)])
        xp.store.zero_grad()
        with Tape() as tape:
            out = exploration_losses(xp.store, batch, np.zeros(batch.actions.shape), c)
            tape.backward(out["actor"] + out["value"])
        xp.actor_optimizer.step()
        xp.value_optimizer.step()
        first = out["entropy"] if first is None else first
    assert first < 0.5 * math.log(3)
    assert out["entropy"] >= 0.95 * math.log(3)


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(advantage_mode="bogus")
    with pytest.raises(ValueError):
        small_config(gamma=0.0)
    with pytest.raises(ValueError):
        small_config(beta=-1.0)
