"""Dual-encoder CVAE over latent next-state transitions.

Two encoders share one decoder: the *full* branch conditions on the whole
joint action, the *counterfactual* branch sees the same joint action with one
agent's embedding swapped for a learned mask token.  The KL between the two
priors is the per-agent intrinsic scaffold.  Sharing the decoder forces both
encoders into one latent space, which is what makes that KL meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import T, Adam, LatentGaussian, ParamStore, Tape, Tensor
from .nn import gaussian_log_likelihood, init_mlp, kl_diag_gaussian, mlp_forward, mlp_layers, reparameterize
from .nn.tensor import NumericError

VARIANTS = ("ices", "global_con", "euclidean", "two_cvaes")
FULL, COUNTERFACTUAL = "full", "counterfactual"


class ConfigError(ValueError):
    """Unknown mode or inconsistent scaffold settings."""


@dataclass(frozen=True)
class ScaffoldConfig:
    n_agents: int
    n_actions: int
    state_dim: int
    embed_dim: int = 4
    latent_dim: int = 8
    hidden_dim: int = 64
    variant: str = "ices"
    lr: float = 1e-4
    grad_clip: float = 0.1
    reward_clip: float = 10.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown scaffold variant {self.variant!r}; expected one of {VARIANTS}")


@dataclass
class ScaffoldBatch:
    """Aligned transitions: states (B, S), actions (B, n) ints, next states (B, S)."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.next_states = np.asarray(self.next_states, dtype=float)
        if not (len(self.states) == len(self.actions) == len(self.next_states)):
            raise ValueError("scaffold batch fields must share their leading length")

    def __len__(self) -> int:
        return len(self.states)


class ScaffoldModel:
    """Parameters psi (full encoder), phi (counterfactual encoder), theta (decoder).

    With ``variant="two_cvaes"`` the counterfactual branch also gets its own
    decoder and action embedding, i.e. two unrelated CVAEs.
    """

    def __init__(self, config: ScaffoldConfig, rng: np.random.Generator):
        self.config = c = config
        self.store = ParamStore()
        self.independent = c.variant == "two_cvaes"
        enc_in = c.state_dim + c.n_agents * c.embed_dim
        for branch in ("psi", "phi"):
            embed = "embed" if branch == "psi" or not self.independent else "embed_cf"
            if f"{embed}.table" not in self.store:
                self.store.add(f"{embed}.table", rng.normal(0.0, 1.0, size=(c.n_actions + 1, c.embed_dim)))
            init_mlp(self.store, f"{branch}.trunk", [enc_in, c.hidden_dim, c.hidden_dim], rng)
            init_mlp(self.store, f"{branch}.prior", [c.hidden_dim, 2 * c.latent_dim], rng)
            init_mlp(self.store, f"{branch}.post", [c.hidden_dim + c.state_dim, c.hidden_dim, 2 * c.latent_dim], rng)
        init_mlp(self.store, "theta.dec", [c.latent_dim, c.hidden_dim, c.state_dim], rng)
        if self.independent:
            init_mlp(self.store, "theta_cf.dec", [c.latent_dim, c.hidden_dim, c.state_dim], rng)
        self.optimizer = Adam(self.store, lr=c.lr, max_grad_norm=c.grad_clip)
        self._layers = {name: mlp_layers(self.store, name) for name in
                        ("psi.trunk", "psi.prior", "psi.post", "phi.trunk", "phi.prior", "phi.post",
                         "theta.dec", "theta_cf.dec")}

    @property
    def mask_index(self) -> int:
        return self.config.n_actions

    # -- building blocks ---------------------------------------------------------
    def _embed_table(self, branch: str) -> Tensor:
        return self.store["embed_cf.table" if branch == "phi" and self.independent else "embed.table"]

    def _trunk(self, branch: str, states: np.ndarray, actions: np.ndarray) -> Tensor:
        emb = self._embed_table(branch)[actions]  # (B, n, E)
        emb = T.reshape(emb, (actions.shape[0], -1))
        x = T.concat([Tensor(states), emb], axis=-1)
        return mlp_forward(self.store, self._layers[f"{branch}.trunk"], x, final_activation="relu")

    def _prior(self, branch: str, h: Tensor) -> LatentGaussian:
        return LatentGaussian.from_head(mlp_forward(self.store, self._layers[f"{branch}.prior"], h))

    def _posterior(self, branch: str, h: Tensor, next_states: np.ndarray) -> LatentGaussian:
        x = T.concat([h, Tensor(next_states)], axis=-1)
        return LatentGaussian.from_head(mlp_forward(self.store, self._layers[f"{branch}.post"], x))

    def masked_actions(self, actions: np.ndarray) -> np.ndarray:
        """Counterfactual action rows, (B, k, n): one row per masked agent, or one all-masked row."""
        actions = np.asarray(actions, dtype=np.int64)
        b, n = actions.shape
        if self.config.variant == "global_con":
            return np.full((b, 1, n), self.mask_index, dtype=np.int64)
        out = np.repeat(actions[:, None, :], n, axis=1)
        out[:, np.arange(n), np.arange(n)] = self.mask_index
        return out

    def decoder_name(self, branch: str) -> str:
        return "theta_cf.dec" if branch == "phi" and self.independent else "theta.dec"

    def decode(self, z, branch: str = "psi") -> Tensor:
        """Mean of the unit-variance Gaussian over the next state."""
        return mlp_forward(self.store, self._layers[self.decoder_name(branch)], z)

    # -- public distributions ----------------------------------------------------------
    def prior_full(self, states, actions) -> LatentGaussian:
        states, actions = _batch(states, actions)
        return self._prior("psi", self._trunk("psi", states, actions))

    def prior_counterfactual(self, states, actions, agent) -> LatentGaussian:
        """p_phi(z' | s, u^{-i}); ``agent=None`` masks every agent."""
        states, actions = _batch(states, actions)
        masked = actions.copy()
        if agent is None:
            masked[:] = self.mask_index
        else:
            masked[np.arange(len(masked)), np.broadcast_to(agent, len(masked))] = self.mask_index
        return self._prior("phi", self._trunk("phi", states, masked))

    def posterior(self, branch: str, states, actions, next_states, agent=None) -> LatentGaussian:
        states, actions = _batch(states, actions)
        next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
        if branch == FULL:
            return self._posterior("psi", self._trunk("psi", states, actions), next_states)
        if branch != COUNTERFACTUAL:
            raise ConfigError(f"unknown branch {branch!r}")
        masked = actions.copy()
        if agent is None:
            masked[:] = self.mask_index
        else:
            masked[np.arange(len(masked)), np.broadcast_to(agent, len(masked))] = self.mask_index
        return self._posterior("phi", self._trunk("phi", states, masked), next_states)

    # -- objective ---------------------------------------------------------------------
    def elbo_terms(self, batch: ScaffoldBatch, rng: np.random.Generator | None = None,
                   noise: dict[str, np.ndarray] | None = None) -> dict[str, Tensor]:
        """Per-transition KL and reconstruction terms of both branches.

        ``noise`` fixes the reparameterization draws (keys ``full`` (B, L) and
        ``counterfactual`` (B, k, L)); otherwise they come from ``rng``.
        """
        c = self.config
        b = len(batch)
        masked = self.masked_actions(batch.actions)
        k = masked.shape[1]
        if noise is None:
            if rng is None:
                raise ValueError("need rng or explicit noise")
            noise = {FULL: rng.standard_normal((b, c.latent_dim)),
                     COUNTERFACTUAL: rng.standard_normal((b, k, c.latent_dim))}

        h = self._trunk("psi", batch.states, batch.actions)
        p_full, q_full = self._prior("psi", h), self._posterior("psi", h, batch.next_states)
        kl_full = kl_diag_gaussian(q_full, p_full)
        z_full = reparameterize(q_full, noise[FULL])
        rec_full = gaussian_log_likelihood(batch.next_states, self.decode(z_full, "psi"))

        s_rep = np.repeat(batch.states, k, axis=0)
        sn_rep = np.repeat(batch.next_states, k, axis=0)
        h_cf = self._trunk("phi", s_rep, masked.reshape(b * k, -1))
        p_cf, q_cf = self._prior("phi", h_cf), self._posterior("phi", h_cf, sn_rep)
        kl_cf = kl_diag_gaussian(q_cf, p_cf)
        z_cf = reparameterize(q_cf, noise[COUNTERFACTUAL].reshape(b * k, -1))
        rec_cf = gaussian_log_likelihood(sn_rep, self.decode(z_cf, "phi"))
        return {
            "kl_full": kl_full,
            "rec_full": rec_full,
            "kl_cf": T.mean(T.reshape(kl_cf, (b, k)), axis=1),
            "rec_cf": T.mean(T.reshape(rec_cf, (b, k)), axis=1),
        }

    def elbo_loss(self, batch: ScaffoldBatch, rng: np.random.Generator | None = None,
                  noise: dict[str, np.ndarray] | None = None) -> Tensor:
        """Negative lower bound, averaged over transitions (and masked agents)."""
        return self._loss_and_terms(batch, rng, noise)[0]

    def _loss_and_terms(self, batch, rng, noise) -> tuple[Tensor, dict[str, Tensor]]:
        if len(batch) == 0:
            raise ValueError("empty scaffold batch")
        t = self.elbo_terms(batch, rng, noise)
        loss = T.mean(t["kl_full"] + t["kl_cf"] - t["rec_full"] - t["rec_cf"])
        if not np.isfinite(loss.data):
            raise NumericError(f"non-finite ELBO loss {loss.data}")
        return loss, t

    def train_step(self, batch: ScaffoldBatch, rng: np.random.Generator) -> dict[str, float]:
        """One clipped Adam step on the ELBO loss.

        Besides the loss, reports the mean reconstruction log-likelihood and
        KL of both branches and the pre-clip gradient norm.
        """
        self.store.zero_grad()
        with Tape() as tape:
            loss, t = self._loss_and_terms(batch, rng, None)
            tape.backward(loss)
        norm = self.optimizer.step()
        self.store.zero_grad()
        return {
            "loss_elbo": float(loss.data),
            "log_likelihood": float(np.mean(t["rec_full"].data + t["rec_cf"].data)),
            "kl": float(np.mean(t["kl_full"].data + t["kl_cf"].data)),
            "grad_norm": norm,
        }

    # -- scaffolds ---------------------------------------------------------------------
    def intrinsic_scaffold(self, states, actions, agent=None) -> np.ndarray:
        """KL[p_psi(z'|s,u) || p_phi(z'|s,u^{-i})] for one agent, or (B, n) for all."""
        states, actions = _batch(states, actions)
        p = self.prior_full(states, actions)
        if agent is not None:
            return kl_diag_gaussian(p, self.prior_counterfactual(states, actions, agent)).data
        b, n = actions.shape
        masked = np.repeat(actions[:, None, :], n, axis=1)
        masked[:, np.arange(n), np.arange(n)] = self.mask_index
        q = self._prior("phi", self._trunk("phi", np.repeat(states, n, axis=0), masked.reshape(b * n, -1)))
        p_rep = LatentGaussian(Tensor(np.repeat(p.mean.data, n, axis=0)),
                               Tensor(np.repeat(p.log_var.data, n, axis=0)))
        return kl_diag_gaussian(p_rep, q).data.reshape(b, n)

    def global_contribution(self, states, actions) -> np.ndarray:
        """KL between the full prior and the prior with every action masked; one value per row."""
        states, actions = _batch(states, actions)
        return kl_diag_gaussian(self.prior_full(states, actions),
                                self.prior_counterfactual(states, actions, None)).data

    def euclidean_contribution(self, states, actions, next_states) -> np.ndarray:
        """||s' - decoder(mean of the counterfactual prior)|| per agent, (B, n)."""
        states, actions = _batch(states, actions)
        next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
        b, n = actions.shape
        out = np.zeros((b, n))
        for i in range(n):
            mean = self.prior_counterfactual(states, actions, i).mean
            pred = self.decode(mean, "phi").data
            out[:, i] = np.linalg.norm(next_states - pred, axis=-1)
        return out

    def rewards(self, states, actions, next_states=None) -> np.ndarray:
        """Per-agent scaffold rewards for this model's variant, clipped to [0, reward_clip]."""
        states, actions = _batch(states, actions)
        mode = self.config.variant
        if mode in ("ices", "two_cvaes"):
            raw = self.intrinsic_scaffold(states, actions)
        elif mode == "global_con":
            raw = np.repeat(self.global_contribution(states, actions)[:, None], actions.shape[1], axis=1)
        elif mode == "euclidean":
            if next_states is None:
                raise ConfigError("euclidean scaffold needs next states")
            raw = self.euclidean_contribution(states, actions, next_states)
        else:  # pragma: no cover - guarded by ScaffoldConfig
            raise ConfigError(mode)
        return np.clip(raw, 0.0, self.config.reward_clip)


def _batch(states, actions) -> tuple[np.ndarray, np.ndarray]:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
    if len(states) != len(actions):
        raise ValueError("states and actions must share their leading length")
    return states, actions


# -- functional surface -----------------------------------------------------------------
def prior_full(model: ScaffoldModel, s, u) -> LatentGaussian:
    return model.prior_full(s, u)


def prior_counterfactual(model: ScaffoldModel, s, u, i) -> LatentGaussian:
    return model.prior_counterfactual(s, u, i)


def posterior(model: ScaffoldModel, branch: str, s, u, s_next, i=None) -> LatentGaussian:
    return model.posterior(branch, s, u, s_next, i)


def decode(model: ScaffoldModel, z) -> Tensor:
    return model.decode(z)


def elbo_loss(model: ScaffoldModel, batch: ScaffoldBatch, rng=None, noise=None) -> Tensor:
    return model.elbo_loss(batch, rng, noise)


def intrinsic_scaffold(model: ScaffoldModel, s, u, i=None) -> np.ndarray:
    return model.intrinsic_scaffold(s, u, i)


def train_scaffolds(model: ScaffoldModel, batch: ScaffoldBatch, rng: np.random.Generator) -> dict[str, float]:
    return model.train_step(batch, rng)


def variant_scaffold(mode: str, model: ScaffoldModel, s, u, s_next=None) -> np.ndarray:
    """Unclipped ablation scaffolds, (B, n)."""
    s, u = _batch(s, u)
    if mode == "global_con":
        return np.repeat(model.global_contribution(s, u)[:, None], u.shape[1], axis=1)
    if mode == "euclidean":
        if s_next is None:
            raise ConfigError("euclidean scaffold needs next states")
        return model.euclidean_contribution(s, u, s_next)
    if mode == "two_cvaes":
        if not model.independent:
            raise ConfigError("two_cvaes needs a model built with variant='two_cvaes'")
        return model.intrinsic_scaffold(s, u)
    raise ConfigError(f"unknown variant mode {mode!r}")
