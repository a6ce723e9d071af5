"""Fully enumerable cooperative Markov game with an exact contribution oracle."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .base import EnvSpec, MultiAgentEnv


@dataclass(frozen=True)
class MatrixGameTable:
    """``transitions[s, u_1, ..., u_n]`` is a distribution over next states."""

    transitions: np.ndarray
    rewards: np.ndarray
    absorbing_state: int

    def __post_init__(self):
        p = self.transitions
        n_states = p.shape[0]
        if p.shape[-1] != n_states or self.rewards.shape != p.shape[:-1]:
            raise ValueError("table shapes are inconsistent")
        if np.any(p < 0):
            raise ValueError("negative transition probability")
        if not np.allclose(p.sum(axis=-1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("transition rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_agents(self) -> int:
        return self.transitions.ndim - 2

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    def row(self, s: int, joint_action) -> np.ndarray:
        return self.transitions[(s,) + tuple(int(a) for a in joint_action)]

    def joint_actions(self):
        return itertools.product(range(self.n_actions), repeat=self.n_agents)


def shipped_table() -> MatrixGameTable:
    """The 4-state, 2-agent, 3-action game used for oracle comparisons.

    state 0  agent 0 alone picks the next state (0 -> s1, 1 -> s2, 2 -> stay)
    state 1  matching actions reach the goal w.p. 0.8, otherwise drift back
    state 2  agent 1's action 2 leads to s1; anything else scatters uniformly
    state 3  absorbing goal paying +1 per step
    """
    p = np.zeros((4, 3, 3, 4))
    for a0, a1 in itertools.product(range(3), repeat=2):
        p[0, a0, a1, {0: 1, 1: 2, 2: 0}[a0]] = 1.0
        p[1, a0, a1] = [0.2, 0.0, 0.0, 0.8] if a0 == a1 else [0.5, 0.5, 0.0, 0.0]
        p[2, a0, a1] = [0.0, 1.0, 0.0, 0.0] if a1 == 2 else [1 / 3, 1 / 3, 1 / 3, 0.0]
        p[3, a0, a1, 3] = 1.0
    r = np.zeros((4, 3, 3))
    r[3] = 1.0
    return MatrixGameTable(p, r, absorbing_state=3)


class CooperativeMatrixGame(MultiAgentEnv):
    """Agents observe the one-hot state; episodes run to ``episode_limit``."""

    def __init__(self, table: MatrixGameTable | None = None, episode_limit: int = 10,
                 seed: int | None = None):
        super().__init__(seed)
        self.table = table or shipped_table()
        n = self.table.n_states
        self.spec = EnvSpec(self.table.n_agents, self.table.n_actions, n, n, episode_limit)
        self.s = 0

    def _reset(self) -> None:
        self.s = 0

    def _transition(self, joint_action):
        row = self.table.row(self.s, joint_action)
        reward = float(self.table.rewards[(self.s,) + tuple(int(a) for a in joint_action)])
        self.s = int(min(np.searchsorted(np.cumsum(row), self.rng.random(), side="right"), len(row) - 1))
        return reward, False

    def won(self) -> bool:
        return self.s == self.table.absorbing_state

    def encode(self, s: int) -> np.ndarray:
        return np.eye(self.table.n_states)[s]

    def state(self) -> np.ndarray:
        return self.encode(self.s)

    def observation(self, agent: int) -> np.ndarray:
        return self.encode(self.s)


def counterfactual_row(table: MatrixGameTable, s: int, joint_action, agent: int,
                       action_prior: np.ndarray | None = None) -> np.ndarray:
    """P(s' | s, u^{-i}) with agent ``agent``'s action marginalized out."""
    prior = np.full(table.n_actions, 1.0 / table.n_actions) if action_prior is None else np.asarray(action_prior)
    u = list(joint_action)
    out = np.zeros(table.n_states)
    for a, w in enumerate(prior):
        u[agent] = a
        out += w * table.row(s, u)
    return out


def oracle_scaffold(table: MatrixGameTable, s: int, joint_action, agent: int,
                    action_prior: np.ndarray | None = None) -> float:
    """Exact KL[P(s'|s,u) || P(s'|s,u^{-i})]; ``inf`` when supports mismatch."""
    actual = table.row(s, joint_action)
    cf = counterfactual_row(table, s, joint_action, agent, action_prior)
    total = 0.0
    for p, q in zip(actual, cf):
        if p == 0.0:
            continue
        if q == 0.0:
            return math.inf
        total += p * math.log(p / q)
    return max(total, 0.0)


def oracle_table(table: MatrixGameTable) -> np.ndarray:
    """Oracle values for every (state, joint action, agent); shape (S, U, ..., U, n)."""
    shape = (table.n_states,) + (table.n_actions,) * table.n_agents + (table.n_agents,)
    out = np.zeros(shape)
    for s in range(table.n_states):
        for u in table.joint_actions():
            for i in range(table.n_agents):
                out[(s,) + u + (i,)] = oracle_scaffold(table, s, u, i)
    return out
