import numpy as np
import pytest

from ices.envs import shipped_table
from ices.scaffolds import ScaffoldBatch


class MatrixGameData:
    """Every (state, joint action) pair of the shipped game, with sampled next states."""

    def __init__(self, reps: int = 4):
        self.table = shipped_table()
        self.pairs = [(s, u) for s in range(self.table.n_states) for u in self.table.joint_actions()]
        self.states = np.eye(self.table.n_states)[[s for s, _ in self.pairs]]
        self.actions = np.array([u for _, u in self.pairs], dtype=np.int64)
        self.rows = np.stack([self.table.row(s, u) for s, u in self.pairs])
        self.reps = reps

    def batch(self, rng: np.random.Generator) -> ScaffoldBatch:
        idx = np.tile(np.arange(len(self.pairs)), self.reps)
        cdf = np.cumsum(self.rows[idx], axis=1)
        nxt = np.minimum((cdf <= rng.random((len(idx), 1))).sum(axis=1), self.table.n_states - 1)
        return ScaffoldBatch(self.states[idx], self.actions[idx], np.eye(self.table.n_states)[nxt])


@pytest.fixture(scope="session")
def matrix_data() -> MatrixGameData:
    return MatrixGameData()


def smoothed(values, window: int = 100) -> np.ndarray:
    """Means over consecutive non-overlapping windows."""
    v = np.asarray(values, dtype=float)
    k = len(v) // window
    return v[: k * window].reshape(k, window).mean(axis=1)


# -- acceptance summary ----------------------------------------------------------------
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> bool:
    """Remember a criterion outcome for the end-of-run summary and echo it immediately."""
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}: {detail}")
