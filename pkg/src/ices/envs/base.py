from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np


class ProtocolError(RuntimeError):
    """Raised when an environment is driven out of order (e.g. stepped after done)."""


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    episode_limit: int

    def __post_init__(self):
        for name in ("n_agents", "n_actions", "obs_dim", "state_dim", "episode_limit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.obs_dim > self.state_dim:
            raise ValueError("obs_dim must not exceed state_dim")


@dataclass
class StepResult:
    next_state: np.ndarray
    next_obs: np.ndarray  # (n_agents, obs_dim)
    reward_ext: float
    done: bool
    won: bool
    # done because episode_limit was hit rather than a terminal event
    truncated: bool = False


class MultiAgentEnv(ABC):
    """Dec-POMDP interface shared by the built-in environments."""

    spec: EnvSpec

    def __init__(self, seed: int | None = None):
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = True

    @abstractmethod
    def _reset(self) -> None: ...

    @abstractmethod
    def _transition(self, joint_action: np.ndarray) -> tuple[float, bool]:
        """Advance internal state; return (reward, terminal)."""

    @abstractmethod
    def state(self) -> np.ndarray: ...

    @abstractmethod
    def observation(self, agent: int) -> np.ndarray: ...

    def won(self) -> bool:
        return False

    def avail_actions(self) -> np.ndarray:
        return np.ones((self.spec.n_agents, self.spec.n_actions), dtype=bool)

    def observations(self) -> np.ndarray:
        return np.stack([self.observation(i) for i in range(self.spec.n_agents)])

    def reset(self, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        if rng is not None:
            self.rng = rng
        self.t = 0
        self.done = False
        self._reset()
        return self.state(), self.observations()

    def step(self, joint_action, rng: np.random.Generator | None = None) -> StepResult:
        if self.done:
            raise ProtocolError("step() called on a finished episode; call reset() first")
        if rng is not None:
            self.rng = rng
        u = np.asarray(joint_action, dtype=np.int64)
        if u.shape != (self.spec.n_agents,):
            raise ValueError(f"joint action must have length {self.spec.n_agents}, got {u.shape}")
        if np.any(u < 0) or np.any(u >= self.spec.n_actions):
            raise ValueError(f"actions must lie in [0, {self.spec.n_actions}), got {u.tolist()}")
        reward, terminal = self._transition(u)
        self.t += 1
        truncated = not terminal and self.t >= self.spec.episode_limit
        self.done = terminal or truncated
        won = self.done and self.won()
        return StepResult(self.state(), self.observations(), float(reward), self.done, won, truncated)
