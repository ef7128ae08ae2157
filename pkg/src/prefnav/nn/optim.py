from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Param


@dataclass
class AdamW:
    """Adam with decoupled weight decay and bias correction.

    ``state`` maps each :class:`Param` to its ``(m, v)`` moment arrays; the
    step counter is shared, as every parameter is updated every step.
    """

    params: list[Param]
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    t: int = 0
    state: dict = field(default_factory=dict)

    def step(self, grads: dict[Param, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.value)
            elif g.shape != p.value.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter {p.value.shape}")
            if p not in self.state:
                self.state[p] = (np.zeros_like(p.value), np.zeros_like(p.value))
            m, v = self.state[p]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.state[p] = (m, v)
            dtype = p.value.dtype
            value = p.value * (1.0 - self.lr * self.weight_decay)
            value = value - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.value = value.astype(dtype, copy=False)


def adamw_step(params, grads, state: AdamW) -> AdamW:
    """Functional spelling of :meth:`AdamW.step` (updates ``params`` in place)."""
    state.params = list(params)
    state.step(grads)
    return state
