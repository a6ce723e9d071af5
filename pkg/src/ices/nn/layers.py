"""Parameter store, dense stacks and the gated recurrent cell."""

from __future__ import annotations

import hashlib
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh, "elu": T.elu, "none": None}


class ParamStore:
    """Ordered mapping of name -> trainable :class:`Tensor`.

    Networks are plain functions over a store and a name prefix, so copying a
    target network or checkpointing is just a walk over named arrays.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=T.DTYPE), requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._tensors if n.startswith(prefix)]

    def tensors(self, prefix: str = "") -> list[Tensor]:
        return [t for n, t in self._tensors.items() if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def grads(self, prefix: str = "") -> list[np.ndarray]:
        return [
            t.grad if t.grad is not None else np.zeros_like(t.data)
            for n, t in self._tensors.items()
            if n.startswith(prefix)
        ]

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def load(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) ^ set(state)
        if missing:
            raise KeyError(f"parameter name mismatch: {sorted(missing)}")
        for n, t in self._tensors.items():
            if state[n].shape != t.data.shape:
                raise DimensionError(f"{n}: {state[n].shape} != {t.data.shape}")
            t.data = np.array(state[n], dtype=T.DTYPE)

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for n, t in self._tensors.items():
            other.add(n, t.data)
        return other

    def num_params(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for n, t in self._tensors.items():
            h.update(n.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def init_linear(store: ParamStore, name: str, fan_in: int, fan_out: int, rng: np.random.Generator,
                scale: float = 1.0) -> None:
    bound = scale / np.sqrt(fan_in)
    store.add(f"{name}.w", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    store.add(f"{name}.b", rng.uniform(-bound, bound, size=(fan_out,)))


def init_mlp(store: ParamStore, name: str, sizes: Sequence[int], rng: np.random.Generator) -> list[str]:
    """Create ``len(sizes) - 1`` dense layers named ``{name}.0``, ``{name}.1``, ..."""
    layers = []
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(store, f"{name}.{k}", a, b, rng)
        layers.append(f"{name}.{k}")
    return layers


def linear(store: ParamStore, name: str, x) -> Tensor:
    w = store[f"{name}.w"]
    x = T.as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"{name}: input dim {x.shape[-1]} != fan-in {w.shape[0]}")
    if x.ndim == 1:
        return T.reshape(T.affine(T.reshape(x, (1, -1)), w, store[f"{name}.b"]), (-1,))
    if x.ndim == 2:
        return T.affine(x, w, store[f"{name}.b"])
    return T.matmul(x, w) + store[f"{name}.b"]


def mlp_forward(store: ParamStore, layers: Sequence[str], x, activation: str = "relu",
                final_activation: str = "none") -> Tensor:
    act = ACTIVATIONS[activation]
    out = T.as_tensor(x)
    for k, name in enumerate(layers):
        out = linear(store, name, out)
        fn = act if k < len(layers) - 1 else ACTIVATIONS[final_activation]
        if fn is not None:
            out = fn(out)
    return out


def mlp_layers(store: ParamStore, name: str) -> list[str]:
    layers, k = [], 0
    while f"{name}.{k}.w" in store:
        layers.append(f"{name}.{k}")
        k += 1
    return layers


def init_gru(store: ParamStore, name: str, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> None:
    bound = 1.0 / np.sqrt(hidden_dim)
    store.add(f"{name}.wx", rng.uniform(-bound, bound, size=(input_dim, 3 * hidden_dim)))
    store.add(f"{name}.wh", rng.uniform(-bound, bound, size=(hidden_dim, 3 * hidden_dim)))
    store.add(f"{name}.bx", rng.uniform(-bound, bound, size=(3 * hidden_dim,)))
    store.add(f"{name}.bh", rng.uniform(-bound, bound, size=(3 * hidden_dim,)))


def gru_cell(store: ParamStore, name: str, x, h) -> Tensor:
    """One GRU step with reset/update/candidate gates (PyTorch gate layout)."""
    wx, wh = store[f"{name}.wx"], store[f"{name}.wh"]
    x, h = T.as_tensor(x), T.as_tensor(h)
    hidden = wh.shape[0]
    if h.shape[-1] != hidden:
        raise DimensionError(f"{name}: hidden dim {h.shape[-1]} != {hidden}")
    if x.shape[-1] != wx.shape[0]:
        raise DimensionError(f"{name}: input dim {x.shape[-1]} != {wx.shape[0]}")
    squeeze = x.ndim == 1 and h.ndim == 1
    if squeeze:
        x, h = T.reshape(x, (1, -1)), T.reshape(h, (1, -1))
    out = T.gru(x, h, wx, wh, store[f"{name}.bx"], store[f"{name}.bh"])
    return T.reshape(out, (-1,)) if squeeze else out
