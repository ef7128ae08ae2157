"""Sequential networks and the recording tape used for reverse mode.

The three topologies in this package (CNN encoder, MLP encoder, utility
head) are all plain stacks, so reverse mode only needs a linear tape: a
list of ``(layer, cache)`` entries replayed backwards. Several networks can
record onto one tape (e.g. an encoder followed by a utility head), and
``Tape.stop_gradient`` inserts a barrier past which no gradient flows.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .layers import Layer, LayerSpec, Param, build_layer

_BARRIER = object()


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    def shapes(self):
        """Output shape after each layer."""
        out, shape = [], tuple(self.input_shape)
        for spec in self.layers:
            shape = build_layer(spec, shape).output_shape(shape)
            out.append(shape)
        return out


@dataclass
class Tape:
    entries: list = field(default_factory=list)

    def record(self, layer: Layer, cache) -> None:
        self.entries.append((layer, cache))

    def stop_gradient(self) -> None:
        self.entries.append((_BARRIER, None))

    def __len__(self):
        return len(self.entries)


class Network:
    """A stack of layers built from a :class:`NetworkSpec`.

    ``seed=None`` builds zero-initialized parameters (used when loading a
    checkpoint); otherwise weights are Kaiming-uniform from ``seed``.
    """

    def __init__(self, spec: NetworkSpec, seed=None, dtype=np.float32, name="net"):
        self.spec = spec
        self.name = name
        rng = None if seed is None else np.random.default_rng(seed)
        self.layers: list[Layer] = []
        shape = tuple(spec.input_shape)
        for layer_spec in spec.layers:
            layer = build_layer(layer_spec, shape, rng, dtype)
            self.layers.append(layer)
            shape = layer.output_shape(shape)
        self.output_shape = shape

    @property
    def dtype(self):
        for p in self.parameters():
            return p.value.dtype
        return np.dtype(np.float32)

    def parameters(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params]

    def n_parameters(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        if flat.size != self.n_parameters():
            raise ValueError(f"expected {self.n_parameters()} values, got {flat.size}")
        i = 0
        for p in self.parameters():
            n = p.value.size
            p.value = flat[i:i + n].reshape(p.value.shape).astype(p.value.dtype)
            i += n

    def astype(self, dtype) -> "Network":
        other = copy.deepcopy(self)
        for p in other.parameters():
            p.value = p.value.astype(dtype)
        return other

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def __call__(self, x, tape: Tape | None = None):
        return forward(self, x, tape)


def forward(net: Network, x, tape: Tape | None = None) -> np.ndarray:
    """Run ``net`` on a batch. With a tape, every layer's cache is recorded."""
    x = np.asarray(x, dtype=net.dtype)
    expected = tuple(net.spec.input_shape)
    if x.shape[1:] != expected:
        raise ValueError(f"{net.name}: input shape {x.shape[1:]} != {expected}")
    for layer in net.layers:
        x, cache = layer.forward(x)
        if tape is not None:
            tape.record(layer, cache)
    return x


def backward(tape: Tape, upstream: np.ndarray, expected_shape=None) -> dict[Param, np.ndarray]:
    """Propagate ``upstream`` (dLoss/dOutput of the last recorded layer)
    back through the tape. Returns accumulated gradients per parameter.
    Parameters recorded before a stop-gradient barrier receive nothing."""
    upstream = np.asarray(upstream)
    if expected_shape is not None and upstream.shape != tuple(expected_shape):
        raise ValueError(f"upstream shape {upstream.shape} != output {tuple(expected_shape)}")
    grads: dict[Param, np.ndarray] = {}
    g = upstream
    entries = tape.entries
    for pos in range(len(entries) - 1, -1, -1):
        layer, cache = entries[pos]
        if layer is _BARRIER:
            break
        first = pos == 0 or entries[pos - 1][0] is _BARRIER
        g, pgrads = layer.backward(cache, g, need_input_grad=not first)
        for p, pg in pgrads.items():
            if p in grads:
                grads[p] = grads[p] + pg
            else:
                grads[p] = pg
    return grads


def stop_gradient(x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    """Identity on values; on the tape it blocks the backward pass."""
    if tape is not None:
        tape.stop_gradient()
    return x


def full_grads(net: Network, grads: dict[Param, np.ndarray]) -> list[np.ndarray]:
    """Gradients for every parameter of ``net`` (zeros where absent)."""
    return [grads.get(p, np.zeros_like(p.value)) for p in net.parameters()]
