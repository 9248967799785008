"""Named parameter storage and the Adam update rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


def init_params(rows: int, cols: int, seed: int) -> np.ndarray:
    """Uniform Glorot-style initialization in +-sqrt(6/(rows+cols))."""
    if rows <= 0 or cols <= 0:
        raise ValueError(f"init_params: dimensions must be positive, got ({rows}, {cols})")
    bound = np.sqrt(6.0 / (rows + cols))
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=(rows, cols))


class ParamStore:
    """Ordered map of parameter name -> leaf Tensor.

    Gradients live on the tensors themselves and always match the
    parameter shape.  Insertion order is the canonical iteration order,
    which keeps optimizer sweeps and checkpoints deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def register(self, name: str, rows: int, cols: int, seed: int) -> Tensor:
        return self.add(name, init_params(rows, cols, seed))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self):
        for p in self._params.values():
            p.zero_grad()

    def gradients(self):
        """Current gradient array per parameter (None if not populated)."""
        return {name: p.grad for name, p in self._params.items()}


@dataclass
class AdamState:
    """Per-parameter moment estimates plus step count and hyperparameters."""

    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 0.01

    @classmethod
    def for_params(cls, params: ParamStore, learning_rate: float = 0.01) -> "AdamState":
        state = cls(learning_rate=learning_rate)
        for name, p in params.items():
            state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        return state


def adam_step(params: ParamStore, state: AdamState):
    """One bias-corrected Adam update over every parameter, in place."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ValueError(f"missing gradient for parameter '{name}'")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
