"""Whole-episode storage and padding into training batches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EpisodeBatch:
    """Padded episodes; ``B`` episodes of at most ``T`` steps.

    states      (B, T+1, S)     s_0 .. s_T (index ``length`` is the final next state)
    obs         (B, T+1, n, O)
    avail       (B, T+1, n, U)  bool
    actions     (B, T, n)       int
    rewards     (B, T)
    terminated  (B, T)          1 only on a true terminal step (not a time-limit cut)
    mask        (B, T)          1 on real steps, 0 on padding
    won         (B,)
    """

    states: np.ndarray
    obs: np.ndarray
    avail: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    mask: np.ndarray
    won: np.ndarray
    lengths: np.ndarray = field(init=False)

    def __post_init__(self):
        b, t = self.actions.shape[:2]
        if self.states.shape[:2] != (b, t + 1) or self.obs.shape[:2] != (b, t + 1):
            raise ValueError("states/obs must have one more step than actions")
        for name in ("rewards", "terminated", "mask"):
            if getattr(self, name).shape != (b, t):
                raise ValueError(f"{name} must have shape {(b, t)}")
        self.lengths = self.mask.sum(axis=1).astype(np.int64)

    @property
    def batch_size(self) -> int:
        return self.actions.shape[0]

    @property
    def max_t(self) -> int:
        return self.actions.shape[1]

    @property
    def n_agents(self) -> int:
        return self.actions.shape[2]

    def transitions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat (s, u, s') over real steps, in episode-major order."""
        m = self.mask.astype(bool)
        return self.states[:, :-1][m], self.actions[m], self.states[:, 1:][m]


class EpisodeRecorder:
    """Accumulates one episode step by step, then freezes it into a 1-episode batch."""

    def __init__(self, state: np.ndarray, obs: np.ndarray, avail: np.ndarray):
        self.states = [np.asarray(state, dtype=float)]
        self.obs = [np.asarray(obs, dtype=float)]
        self.avail = [np.asarray(avail, dtype=bool)]
        self.actions: list[np.ndarray] = []
        self.rewards: list[float] = []
        self.terminal = False
        self.won = False

    def add(self, actions, reward: float, next_state, next_obs, next_avail, terminal: bool) -> None:
        if self.terminal:
            raise RuntimeError("episode already ended")
        self.actions.append(np.asarray(actions, dtype=np.int64))
        self.rewards.append(float(reward))
        self.states.append(np.asarray(next_state, dtype=float))
        self.obs.append(np.asarray(next_obs, dtype=float))
        self.avail.append(np.asarray(next_avail, dtype=bool))
        self.terminal = bool(terminal)

    def __len__(self) -> int:
        return len(self.actions)

    def finish(self, won: bool) -> EpisodeBatch:
        t = len(self.actions)
        if t == 0:
            raise ValueError("cannot store an empty episode")
        terminated = np.zeros((1, t))
        terminated[0, -1] = float(self.terminal)
        return EpisodeBatch(
            states=np.stack(self.states)[None],
            obs=np.stack(self.obs)[None],
            avail=np.stack(self.avail)[None],
            actions=np.stack(self.actions)[None],
            rewards=np.asarray(self.rewards)[None],
            terminated=terminated,
            mask=np.ones((1, t)),
            won=np.array([bool(won)]),
        )


def collate(episodes: list[EpisodeBatch]) -> EpisodeBatch:
    """Stack 1-episode batches, zero-padding to the longest one."""
    if not episodes:
        raise ValueError("no episodes to collate")
    t = max(e.max_t for e in episodes)

    def pad(arrays, steps, fill=0.0):
        out = []
        for a in arrays:
            extra = steps - a.shape[1]
            if extra:
                widths = [(0, 0), (0, extra)] + [(0, 0)] * (a.ndim - 2)
                a = np.pad(a, widths, constant_values=fill)
            out.append(a)
        return np.concatenate(out, axis=0)

    return EpisodeBatch(
        states=pad([e.states for e in episodes], t + 1),
        obs=pad([e.obs for e in episodes], t + 1),
        avail=pad([e.avail for e in episodes], t + 1, fill=True),
        actions=pad([e.actions for e in episodes], t).astype(np.int64),
        rewards=pad([e.rewards for e in episodes], t),
        terminated=pad([e.terminated for e in episodes], t),
        mask=pad([e.mask for e in episodes], t),
        won=np.concatenate([e.won for e in episodes]),
    )
