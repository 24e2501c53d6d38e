"""Transformer encoders producing last-layer states plus intermediate-layer taps.

The text encoder embeds token ids with learned token + position tables; the
vision/audio encoder projects raw feature rows instead. Both return the final
hidden states H (length x dim) and the tapped intermediate states O. For
vision and audio every layer is tapped; text taps are a configurable sparse
subset of 1-based layer indices.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Layer, LayerNorm, Linear, merge_params
from .tensor import Tensor


class MultiHeadAttention(Layer):
    """Scaled dot-product attention; heads are slices of the dim axis.

    After a forward pass ``last_weights`` holds the head-averaged attention
    matrix (queries x keys), detached from the graph, for inspection.
    """

    def __init__(self, rng, d: int, n_heads: int, name: str, null_key: bool = False):
        if d % n_heads != 0:
            raise ValueError(f"model dim {d} not divisible by {n_heads} heads")
        self.d = d
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.wq = Linear(rng, d, d, f"{name}.q")
        self.wk = Linear(rng, d, d, f"{name}.k")
        self.wv = Linear(rng, d, d, f"{name}.v")
        self.wo = Linear(rng, d, d, f"{name}.out")
        # optional null slot with a zero value and a learned per-head score
        # threshold: mass routed to it drops out of the attended sum, so the
        # real-key mass acts as a soft gate on the whole branch (a
        # row-stochastic matrix over real keys alone cannot express "this
        # branch matters less")
        self.null = T.param(np.zeros(n_heads), f"{name}.null") if null_key else None
        self.last_weights: np.ndarray | None = None
        self.last_scores: np.ndarray | None = None

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        qp, kp, vp = self.wq(q), self.wk(k), self.wv(v)
        inv_sqrt = 1.0 / np.sqrt(self.d_head)
        n_keys = kp.shape[-2]
        heads = []
        weight_acc = None
        score_acc = None
        for h in range(self.n_heads):
            lo = h * self.d_head
            qh = T.narrow(qp, -1, lo, self.d_head)
            kh = T.narrow(kp, -1, lo, self.d_head)
            vh = T.narrow(vp, -1, lo, self.d_head)
            scores = T.scale(T.matmul(qh, T.transpose_last(kh)), inv_sqrt)
            if self.null is not None:
                thresh = T.reshape(T.narrow(self.null, 0, h, 1), (1, 1))
                ones = T.constant(np.ones(scores.shape[:-1] + (1,)))
                scores = T.concat([scores, T.mul(ones, thresh)], axis=-1)
            attn = T.softmax(scores, axis=-1)
            weight_acc = attn.data.copy() if weight_acc is None else weight_acc + attn.data
            score_acc = scores.data.copy() if score_acc is None else score_acc + scores.data
            real = T.narrow(attn, -1, 0, n_keys) if self.null is not None else attn
            heads.append(T.matmul(real, vh))
        self.last_weights = weight_acc / self.n_heads
        self.last_scores = score_acc / self.n_heads
        return self.wo(T.concat(heads, axis=-1))

    def params(self):
        out = merge_params(self.wq, self.wk, self.wv, self.wo)
        if self.null is not None:
            out[self.null.name] = self.null
        return out


class FeedForward(Layer):
    """Position-wise FFN, hidden width 4x, GELU."""

    def __init__(self, rng, d: int, name: str):
        self.fc1 = Linear(rng, d, 4 * d, f"{name}.fc1")
        self.fc2 = Linear(rng, 4 * d, d, f"{name}.fc2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))

    def params(self):
        return merge_params(self.fc1, self.fc2)


class EncoderLayer(Layer):
    def __init__(self, rng, d: int, n_heads: int, name: str):
        self.attn = MultiHeadAttention(rng, d, n_heads, f"{name}.attn")
        self.ffn = FeedForward(rng, d, f"{name}.ffn")
        self.ln1 = LayerNorm(d, f"{name}.ln1")
        self.ln2 = LayerNorm(d, f"{name}.ln2")

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(T.add(x, self.attn(x, x, x)))
        return self.ln2(T.add(h, self.ffn(h)))

    def params(self):
        return merge_params(self.attn, self.ffn, self.ln1, self.ln2)


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


class TextEncoder(Layer):
    """Token-id transformer with learned token and position embeddings.

    Returns (embedded, H, O): the embedding-layer output, the last-layer
    states, and the states of the tapped layers (1-based indices).
    """

    def __init__(self, rng, vocab_size: int, max_len: int, d: int, n_layers: int, n_heads: int, taps: list[int], name: str = "text_enc"):
        if not taps or list(taps) != sorted(set(taps)):
            raise ValueError(f"taps must be nonempty strictly increasing, got {taps}")
        if taps[0] < 1 or taps[-1] > n_layers:
            raise ValueError(f"taps {taps} out of range for {n_layers} layers")
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.taps = list(taps)
        self.tok = T.param(rng.normal(0.0, 0.02, size=(vocab_size, d)), f"{name}.tok")
        self.pos = T.param(rng.normal(0.0, 0.02, size=(max_len, d)), f"{name}.pos")
        self.layers = [EncoderLayer(rng, d, n_heads, f"{name}.layer{i}") for i in range(n_layers)]

    def __call__(self, ids: np.ndarray):
        ids = np.asarray(ids)
        seq_len = ids.shape[-1]
        if seq_len > self.max_len:
            raise ValueError(f"sequence length {seq_len} exceeds position table {self.max_len}")
        x = T.add(T.embedding(self.tok, ids), T.narrow(self.pos, 0, 0, seq_len))
        embedded = x
        taps = []
        for i, layer in enumerate(self.layers, start=1):
            x = layer(x)
            if i in self.taps:
                taps.append(x)
        return embedded, x, taps

    def params(self):
        out = {self.tok.name: self.tok, self.pos.name: self.pos}
        for layer in self.layers:
            out.update(layer.params())
        return out


class FeatureEncoder(Layer):
    """Vision/audio transformer over projected feature rows; every layer tapped."""

    def __init__(self, rng, d_in: int, d: int, max_len: int, n_layers: int, n_heads: int, name: str):
        self.proj = Linear(rng, d_in, d, f"{name}.proj")
        self.pos_table = sinusoidal_positions(max_len, d)
        self.max_len = max_len
        self.layers = [EncoderLayer(rng, d, n_heads, f"{name}.layer{i}") for i in range(n_layers)]

    def __call__(self, feats):
        feats = T._as_tensor(feats)
        if not np.all(np.isfinite(feats.data)):
            raise ValueError("feature encoder input contains non-finite values")
        seq_len = feats.shape[-2]
        x = T.add(self.proj(feats), self.pos_table[:seq_len])
        projected = x
        taps = []
        for layer in self.layers:
            x = layer(x)
            taps.append(x)
        return projected, x, taps

    def params(self):
        out = self.proj.params()
        for layer in self.layers:
            out.update(layer.params())
        return out
