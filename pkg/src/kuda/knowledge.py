"""Adapter-based sentiment-knowledge injection and unimodal sentiment decoders.

Each tapped encoder layer feeds one adapter block (bottleneck: down-FC, GELU,
up-FC, residual). Block 1 consumes the embedded/projected unimodal input plus
the first tap; block i consumes the previous block output plus tap i. The
last block output K concatenated with the encoder output H gives the
knowledge-enhanced representation U = [K ; H], which the decoder pools and
maps to a scalar sentiment score.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Layer, Linear, MLP, merge_params
from .tensor import Tensor


class AdapterBlock(Layer):
    """Down-project, GELU, up-project, residual.

    The up-projection is zero-initialized so a fresh block is an identity
    perturbation.
    """

    def __init__(self, rng, d: int, d_adapter: int, name: str):
        self.down = Linear(rng, d, d_adapter, f"{name}.down")
        self.up = Linear(rng, d_adapter, d, f"{name}.up", zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(x, self.up(T.gelu(self.down(x))))

    def params(self):
        return merge_params(self.down, self.up)


class AdapterStack(Layer):
    """One block per tapped encoder layer."""

    def __init__(self, rng, d: int, n_blocks: int, name: str, d_adapter: int | None = None):
        if d_adapter is None:
            d_adapter = max(1, d // 2)
        self.blocks = [AdapterBlock(rng, d, d_adapter, f"{name}.block{i}") for i in range(n_blocks)]

    def __call__(self, base: Tensor, taps: list[Tensor]) -> Tensor:
        if len(taps) != len(self.blocks):
            raise ValueError(f"{len(taps)} taps for {len(self.blocks)} adapter blocks")
        x = base
        for block, tap in zip(self.blocks, taps):
            x = block(T.add(x, tap))
        return x

    def params(self):
        out = {}
        for block in self.blocks:
            out.update(block.params())
        return out


class SentimentDecoder(Layer):
    """Mean-pool over length, then a 2-hidden-layer ReLU MLP to one scalar."""

    def __init__(self, rng, d_in: int, d_hidden: int, name: str):
        self.mlp = MLP(rng, [d_in, d_hidden, d_hidden, 1], name)

    def __call__(self, u: Tensor) -> Tensor:
        pooled = T.mean_axis(u, axis=-2)
        return self.mlp(pooled)

    def params(self):
        return self.mlp.params()


def knowledge_enhance(k: Tensor, h: Tensor) -> Tensor:
    """U = [K ; H] along the dim axis."""
    return T.concat([k, h], axis=-1)


def clamp_score(value: float, label_range: tuple[float, float]) -> float:
    """Reporting-time clamp; raw scores stay unclamped in losses."""
    lo, hi = label_range
    return float(min(max(value, lo), hi))
