"""Central finite-difference oracle for tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import ParamStore
from .tensor import Tape, Tensor


def analytic_grads(store: ParamStore, loss_fn: Callable[[], Tensor], prefix: str = "") -> dict[str, np.ndarray]:
    store.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    out = {n: (store[n].grad.copy() if store[n].grad is not None else np.zeros_like(store[n].data))
           for n in store.names(prefix)}
    store.zero_grad()
    return out


def numeric_grads(store: ParamStore, loss_fn: Callable[[], Tensor], prefix: str = "",
                  step: float = 1e-5) -> dict[str, np.ndarray]:
    out = {}
    for name in store.names(prefix):
        t = store[name]
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = float(loss_fn().data)
            flat[k] = orig - step
            down = float(loss_fn().data)
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * step)
        out[name] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """``||a - b|| / max(||a|| + ||b||, floor)``.

    The floor keeps near-zero gradient blocks from turning finite-difference
    round-off (about 1e-11 per entry at step 1e-5) into a large ratio.
    """
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(store: ParamStore, loss_fn: Callable[[], Tensor], prefix: str = "",
                    step: float = 1e-5) -> float:
    """Max over parameter tensors of the analytic-vs-numeric relative error."""
    ana = analytic_grads(store, loss_fn, prefix)
    num = numeric_grads(store, loss_fn, prefix, step)
    both = np.concatenate([ana[n].ravel() for n in ana]), np.concatenate([num[n].ravel() for n in num])
    per_tensor = [relative_error(ana[n], num[n]) for n in ana]
    return max(per_tensor + [relative_error(*both)])
