"""Small parameterized layers shared by the encoders, adapters, and fusion stack."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Layer:
    """Base: anything owning named parameter tensors."""

    def params(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def load(self, flat: dict[str, np.ndarray], strict: bool = True) -> None:
        own = self.params()
        for name, t in own.items():
            if name in flat:
                src = flat[name]
                if src.shape != t.data.shape:
                    raise ValueError(f"parameter {name}: snapshot shape {src.shape} != model shape {t.data.shape}")
                t.data = src.astype(np.float64).copy()
            elif strict:
                raise KeyError(f"parameter {name} missing from snapshot")

    def freeze(self) -> None:
        for t in self.params().values():
            t.requires_grad = False
            t.grad = None


class Linear(Layer):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, name: str, zero_init: bool = False, bias: bool = True):
        self.name = name
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            std = np.sqrt(2.0 / (d_in + d_out))
            w = rng.normal(0.0, std, size=(d_in, d_out))
        self.w = T.param(w, f"{name}.w")
        self.b = T.param(np.zeros(d_out), f"{name}.b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)

    def params(self):
        out = {self.w.name: self.w}
        if self.b is not None:
            out[self.b.name] = self.b
        return out


class LayerNorm(Layer):
    def __init__(self, d: int, name: str, eps: float = 1e-5):
        self.name = name
        self.eps = eps
        self.gain = T.param(np.ones(d), f"{name}.gain")
        self.bias = T.param(np.zeros(d), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)

    def params(self):
        return {self.gain.name: self.gain, self.bias.name: self.bias}


class MLP(Layer):
    """Stack of linear layers with an activation between them."""

    def __init__(self, rng, dims: list[int], name: str, activation=T.relu):
        self.activation = activation
        self.layers = [Linear(rng, dims[i], dims[i + 1], f"{name}.fc{i}") for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        return x

    def params(self):
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out


def merge_params(*layers: Layer) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for layer in layers:
        for name, t in layer.params().items():
            if name in out and out[name] is not t:
                raise ValueError(f"duplicate parameter name {name}")
            out[name] = t
    return out
