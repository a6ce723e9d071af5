"""Adam and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .layers import ParamStore
from .tensor import NumericError, Tensor


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale ``grads`` so their joint L2 norm is at most ``max_norm``.

    Returns the (possibly) scaled gradients and the norm before clipping.
    """
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if norm <= max_norm or norm == 0.0:
        return [np.array(g, copy=True) for g in grads], norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


@dataclass
class Adam:
    """Bias-corrected Adam over the tensors of a store whose names share ``prefix``."""

    store: ParamStore
    lr: float
    prefix: str = ""
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    max_grad_norm: float | None = None
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        params = self.store.tensors(self.prefix)
        self.state = OptimizerState([np.zeros_like(p.data) for p in params],
                                    [np.zeros_like(p.data) for p in params])

    def step(self) -> float:
        """Apply one update from the accumulated ``.grad`` fields; returns the pre-clip norm."""
        params = self.store.tensors(self.prefix)
        grads = self.store.grads(self.prefix)
        for g in grads:
            if not np.isfinite(g).all():
                raise NumericError("non-finite gradient")
        norm = global_norm(grads)
        if self.max_grad_norm is not None:
            grads, norm = clip_grad_norm(grads, self.max_grad_norm)
        adam_step(params, grads, self.state, self.lr, self.betas, self.eps)
        return norm


def adam_step(params, grads: Sequence[np.ndarray], state: OptimizerState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update of ``params`` (tensors or arrays)."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != g.shape:
            raise ValueError(f"accumulator shape {m.shape} != grad shape {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if isinstance(p, Tensor):
            p.data = p.data - update
        else:
            p -= update
