"""Sparse-reward gridworld with flickering "noisy TV" tiles.

Every agent must stand on the goal cell at the same time for the team to earn
its single +1.  A handful of floor tiles re-randomize their value each step
regardless of what anyone does, which is the classic trap for curiosity
signals built on prediction error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import EnvSpec, MultiAgentEnv

UP, DOWN, LEFT, RIGHT, STAY = range(5)
MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0), STAY: (0, 0)}
ACTION_NAMES = ("up", "down", "left", "right", "stay")
OBS_CHANNELS = 4  # blocked, other agent, tv value, goal


@dataclass(frozen=True)
class CorridorConfig:
    length: int = 8
    width: int = 4
    n_agents: int = 2
    noisy_cells: tuple[tuple[int, int], ...] = ((2, 1), (4, 2), (5, 0))
    walls: tuple[tuple[int, int], ...] = ()
    starts: tuple[tuple[int, int], ...] = ((0, 0), (0, 3))
    goal: tuple[int, int] = (7, 2)
    episode_limit: int = 30
    step_penalty: float = 0.0

    def __post_init__(self):
        if self.length < 2 or self.width < 1:
            raise ValueError("corridor must be at least 2x1")
        if len(self.starts) != self.n_agents:
            raise ValueError(f"need {self.n_agents} start cells, got {len(self.starts)}")
        cells = list(self.noisy_cells) + list(self.walls) + list(self.starts) + [self.goal]
        for x, y in cells:
            if not (0 <= x < self.length and 0 <= y < self.width):
                raise ValueError(f"cell {(x, y)} outside the {self.length}x{self.width} grid")
        blocked = set(self.walls)
        if self.goal in blocked or blocked & set(self.starts):
            raise ValueError("goal and start cells must not be walls")
        if blocked & set(self.noisy_cells):
            raise ValueError("noisy cells are floor tiles and cannot be walls")


class NoisyCorridor(MultiAgentEnv):
    def __init__(self, config: CorridorConfig | None = None, seed: int | None = None):
        super().__init__(seed)
        self.config = config = config or CorridorConfig()
        cells = config.length * config.width
        self.spec = EnvSpec(
            n_agents=config.n_agents,
            n_actions=len(MOVES),
            obs_dim=9 * OBS_CHANNELS + 2,
            state_dim=(config.n_agents + 1) * cells,
            episode_limit=config.episode_limit,
        )
        self._wall = np.zeros((config.length, config.width), dtype=bool)
        for x, y in config.walls:
            self._wall[x, y] = True
        self._noisy = np.zeros_like(self._wall)
        for x, y in config.noisy_cells:
            self._noisy[x, y] = True
        self._noisy_idx = tuple(np.array(config.noisy_cells, dtype=np.int64).T) if config.noisy_cells else None
        self.positions = np.array(config.starts, dtype=np.int64)
        self.tv = np.zeros((config.length, config.width))

    # -- dynamics --------------------------------------------------------------
    def _resample_tv(self) -> None:
        self.tv = np.zeros_like(self.tv)
        if self._noisy_idx is not None:
            self.tv[self._noisy_idx] = self.rng.random(len(self.config.noisy_cells))

    def _reset(self) -> None:
        self.positions = np.array(self.config.starts, dtype=np.int64)
        self._resample_tv()

    def blocked(self, x: int, y: int) -> bool:
        c = self.config
        return not (0 <= x < c.length and 0 <= y < c.width) or bool(self._wall[x, y])

    def _transition(self, joint_action):
        for i, a in enumerate(joint_action):
            dx, dy = MOVES[int(a)]
            nx, ny = self.positions[i, 0] + dx, self.positions[i, 1] + dy
            if not self.blocked(nx, ny):
                self.positions[i] = (nx, ny)
        self._resample_tv()
        if self.won():
            return 1.0, True
        return self.config.step_penalty, False

    def won(self) -> bool:
        gx, gy = self.config.goal
        return bool(np.all((self.positions[:, 0] == gx) & (self.positions[:, 1] == gy)))

    def is_walled_in(self, agent: int) -> bool:
        """True when no action of ``agent`` can change its position."""
        x, y = self.positions[agent]
        return all(self.blocked(x + dx, y + dy) for a, (dx, dy) in MOVES.items() if a != STAY)

    # -- views -----------------------------------------------------------------
    def state(self) -> np.ndarray:
        c = self.config
        grids = np.zeros((c.n_agents + 1, c.length, c.width))
        for i, (x, y) in enumerate(self.positions):
            grids[i, x, y] = 1.0
        grids[-1] = self.tv
        return grids.reshape(-1)

    def observation(self, agent: int) -> np.ndarray:
        c = self.config
        x0, y0 = self.positions[agent]
        window = np.zeros((OBS_CHANNELS, 3, 3))
        others = {tuple(p) for j, p in enumerate(self.positions) if j != agent}
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                x, y = x0 + dx, y0 + dy
                cell = (dx + 1, dy + 1)
                if self.blocked(x, y):
                    window[(0,) + cell] = 1.0
                    continue
                window[(1,) + cell] = float((x, y) in others)
                window[(2,) + cell] = self.tv[x, y]
                window[(3,) + cell] = float((x, y) == tuple(c.goal))
        coords = np.array([x0 / (c.length - 1), y0 / max(c.width - 1, 1)])
        return np.concatenate([window.reshape(-1), coords])

    def noisy_tv_mask(self, state: np.ndarray | None = None) -> np.ndarray:
        """Boolean (length, width) grid of cells that re-randomize every step."""
        return self._noisy.copy()

    def render(self) -> str:
        c = self.config
        rows = []
        for y in range(c.width):
            row = []
            for x in range(c.length):
                here = [str(i) for i, p in enumerate(self.positions) if tuple(p) == (x, y)]
                if here:
                    row.append(here[0] if len(here) == 1 else "*")
                elif self._wall[x, y]:
                    row.append("#")
                elif (x, y) == tuple(c.goal):
                    row.append("G")
                elif self._noisy[x, y]:
                    row.append("~")
                else:
                    row.append(".")
            rows.append("".join(row))
        return "\n".join(rows)


def noisy_tv_mask(corridor: NoisyCorridor, state: np.ndarray | None = None) -> np.ndarray:
    return corridor.noisy_tv_mask(state)
