"""Finite-difference audit of every trained loss at the default network sizes.

Each component builds a fresh random instance, takes the analytic gradient
from the tape and compares it against central differences on a random subset
of coordinates per parameter tensor.  Sampling coordinates keeps the full-size
networks affordable; the relative error is taken over the sampled entries.

The mixer's absolute-value weights and the ReLU layers are only piecewise
smooth.  When a coordinate sits closer to a kink than the probe step, the
coarse and fine central differences disagree, and the fine one is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import AlgoConfig
from .envs import CooperativeMatrixGame
from .episodes import collate
from .nn import ParamStore, Tensor, gru_cell, init_gru, init_mlp, mlp_forward, mlp_layers
from .nn.gradcheck import analytic_grads, relative_error
from .policies import Explorer, Exploiter, PolicyConfig, exploration_losses, mix, value_loss
from .scaffolds import COUNTERFACTUAL, FULL, ScaffoldBatch, ScaffoldConfig, ScaffoldModel
from .trainer import run_episode

COMPONENTS = ("mlp", "gru", "mixer", "td", "elbo", "actor", "value")
TOLERANCE = 1e-4
KINK_GAP = 1e-6  # coarse vs fine disagreement that signals a kink inside the probe step


@dataclass
class ComponentResult:
    name: str
    error: float
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.error <= TOLERANCE


def sampled_error(store: ParamStore, loss_fn: Callable[[], Tensor], prefix: str, rng: np.random.Generator,
                  coords: int = 24, step: float = 1e-5, corrupt: bool = False) -> float:
    """Relative error between tape and central-difference gradients on sampled coordinates."""
    ana = analytic_grads(store, loss_fn, prefix)
    if corrupt:
        ana = {k: v * 1.01 + 1e-3 for k, v in ana.items()}
    errors, all_a, all_n = [], [], []
    for name, g in ana.items():
        flat = store[name].data.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        num = np.empty(len(picks))
        for j, k in enumerate(picks):
            coarse, fine = (_central(flat, k, loss_fn, h) for h in (step, step * 1e-2))
            num[j] = fine if relative_error(np.array([coarse]), np.array([fine])) > KINK_GAP else coarse
        a = g.reshape(-1)[picks]
        errors.append(relative_error(a, num))
        all_a.append(a)
        all_n.append(num)
    return max(errors + [relative_error(np.concatenate(all_a), np.concatenate(all_n))])


def _central(flat: np.ndarray, k: int, loss_fn: Callable[[], Tensor], h: float) -> float:
    orig = flat[k]
    flat[k] = orig + h
    up = float(loss_fn().data)
    flat[k] = orig - h
    down = float(loss_fn().data)
    flat[k] = orig
    return (up - down) / (2.0 * h)


def _policy_setup(rng: np.random.Generator, **overrides):
    a = AlgoConfig()
    env = CooperativeMatrixGame(episode_limit=3, seed=int(rng.integers(2**31)))
    spec = env.spec
    config = PolicyConfig(spec.n_agents, spec.n_actions, spec.obs_dim, spec.state_dim, hidden_dim=a.hidden_dim,
                          mixer_embed=a.mixer_embed, hypernet_hidden=a.hypernet_hidden, **overrides)
    ex, xp = Exploiter(config, rng), Explorer(config, rng)
    batch = collate([run_episode(env, ex, rng, xp, 0.5, 0.5) for _ in range(2)])
    return config, ex, xp, batch


def _mlp(rng, corrupt):
    store = ParamStore()
    init_mlp(store, "net", [6, AlgoConfig().scaffold_hidden, 5], rng)
    x, w = rng.normal(size=(4, 6)), rng.normal(size=(4, 5))
    return sampled_error(store, lambda: (mlp_forward(store, mlp_layers(store, "net"), x) * w).sum(), "", rng,
                         corrupt=corrupt), ""


def _gru(rng, corrupt):
    store = ParamStore()
    hidden = AlgoConfig().hidden_dim
    init_gru(store, "cell", 5, hidden, rng)
    xs, w = rng.normal(size=(3, 2, 5)), rng.normal(size=(2, hidden))

    def loss():
        h = Tensor(np.zeros((2, hidden)))
        for x in xs:
            h = gru_cell(store, "cell", x, h)
        return (h * w).sum()

    return sampled_error(store, loss, "", rng, corrupt=corrupt), ""


def _mixer(rng, corrupt):
    config, ex, _, _ = _policy_setup(rng)
    q, s = rng.normal(size=(6, config.n_agents)), rng.normal(size=(6, config.state_dim))
    w = rng.normal(size=6)
    return sampled_error(ex.store, lambda: (mix(ex.store, q, s, config) * w).sum(), "mixer.", rng,
                         corrupt=corrupt), ""


def _td(rng, corrupt):
    _, ex, _, batch = _policy_setup(rng)
    batch.rewards[:] = rng.normal(size=batch.rewards.shape)
    for t in ex.target.tensors():
        t.data = t.data + rng.normal(scale=0.1, size=t.data.shape)
    return sampled_error(ex.store, lambda: ex.loss(batch), "", rng, corrupt=corrupt), ""


def _elbo(rng, corrupt):
    a = AlgoConfig()
    model = ScaffoldModel(ScaffoldConfig(2, 3, 4, embed_dim=a.embed_dim, latent_dim=a.latent_dim,
                                         hidden_dim=a.scaffold_hidden), rng)
    states, next_states = np.eye(4)[rng.integers(4, size=3)], np.eye(4)[rng.integers(4, size=3)]
    batch = ScaffoldBatch(states, rng.integers(3, size=(3, 2)), next_states)
    noise = {FULL: rng.standard_normal((3, a.latent_dim)), COUNTERFACTUAL: rng.standard_normal((3, 2, a.latent_dim))}
    return sampled_error(model.store, lambda: model.elbo_loss(batch, noise=noise), "", rng, corrupt=corrupt), ""


def _actor(rng, corrupt):
    errors = []
    for mode in ("exact", "paper_literal"):
        config, _, xp, batch = _policy_setup(rng, advantage_mode=mode, beta=0.3)
        r = rng.normal(size=batch.actions.shape)
        adv = exploration_losses(xp.store, batch, r, config)["advantage"]
        errors.append(sampled_error(xp.store, lambda: exploration_losses(xp.store, batch, r, config, adv)["actor"],
                                    "actor.", rng, corrupt=corrupt))
    return max(errors), f"exact={errors[0]:.2e} paper_literal={errors[1]:.2e}"


def _value(rng, corrupt):
    config, _, xp, batch = _policy_setup(rng)
    r = rng.normal(size=batch.actions.shape)
    return sampled_error(xp.store, lambda: value_loss(xp.store, batch, r, config), "value.", rng,
                         corrupt=corrupt), ""


_CHECKS = {"mlp": _mlp, "gru": _gru, "mixer": _mixer, "td": _td, "elbo": _elbo, "actor": _actor, "value": _value}


def gradient_report(seed: int | None = None, corrupt: frozenset[str] | set[str] = frozenset()) -> list[ComponentResult]:
    """Run every component check; names in ``corrupt`` get a perturbed analytic gradient (test hook)."""
    unknown = set(corrupt) - set(COMPONENTS)
    if unknown:
        raise ValueError(f"unknown components: {sorted(unknown)}")
    children = np.random.SeedSequence(seed).spawn(len(COMPONENTS))
    results = []
    for name, child in zip(COMPONENTS, children):
        error, detail = _CHECKS[name](np.random.default_rng(child), name in corrupt)
        results.append(ComponentResult(name, error, detail))
    return results
