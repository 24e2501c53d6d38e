"""Sentiment-ratio conversion and the dynamic attention fusion stack.

During training each modality's ratio is an inverse exponential of its
squared unimodal prediction error, normalized across modalities; at test time
every ratio is literally 1 and the ground-truth label is never read. Each
dynamic attention block cross-attends the running multimodal state to every
modality, rescales by the ratio, sums, and finishes with self-attention and a
feed-forward sublayer. Per-modality cross-attention weight matrices are
recorded for inspection.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoders import FeedForward, MultiHeadAttention
from .nn import Layer, LayerNorm, Linear, merge_params
from .tensor import Tensor

MODALITIES = ("text", "vision", "audio")


class SentimentRatio:
    """Per-modality contribution ratios.

    ``train`` mode ratios are detached weighting coefficients computed from
    the unimodal prediction errors; ``test`` mode ratios are the constant 1.
    """

    def __init__(self, ratios: dict[str, Tensor], mode: str):
        self.ratios = ratios
        self.mode = mode

    def values(self) -> dict[str, float | list[float]]:
        out = {}
        for m, r in self.ratios.items():
            arr = np.asarray(r.data).reshape(-1)
            out[m] = float(arr[0]) if arr.size == 1 else [float(v) for v in arr]
        return out


def sentiment_ratio(y_hat: dict[str, Tensor], y: np.ndarray, k: float) -> SentimentRatio:
    """R_m = D_m / sum(D), D_m = exp(-k * |y_hat_m - y|^2). Train mode only.

    The ratios are detached weighting coefficients, not graph nodes: letting
    the task loss differentiate through R invites it to inflate a branch's
    ratio by degrading the other unimodal predictions.
    """
    if k <= 0:
        raise ValueError(f"slope k must be positive, got {k}")
    y_arr = np.asarray(y, dtype=np.float64)
    d = {}
    for m in MODALITIES:
        err = np.asarray(y_hat[m].data, dtype=np.float64) - y_arr
        d[m] = np.exp(-k * err * err)
    total = d["text"] + d["vision"] + d["audio"]
    return SentimentRatio({m: T.constant(d[m] / total) for m in MODALITIES}, mode="train")


def test_ratio(batch_size: int = 1) -> SentimentRatio:
    """Test-time ratios fixed to 1 for every modality; reads no label."""
    one = T.constant(np.ones((batch_size, 1)))
    return SentimentRatio({m: one for m in MODALITIES}, mode="test")


class Projector(Layer):
    """Two linear layers unifying one modality's U to the fusion shape.

    A learned length-mixing map (T_m -> T_f) composes with a dim map
    (2*d_m -> d_f).
    """

    def __init__(self, rng, t_in: int, d_in: int, t_out: int, d_out: int, name: str):
        # start position-preserving (nearest-neighbour resize + small noise)
        # so early fusion sees per-position structure rather than an
        # arbitrary mix of sequence positions
        init = np.zeros((t_out, t_in))
        cols = np.rint(np.linspace(0, t_in - 1, t_out)).astype(int)
        init[np.arange(t_out), cols] = 1.0
        init += rng.normal(0.0, 0.02, size=(t_out, t_in))
        self.length_mix = T.param(init, f"{name}.len.w")
        self.dim_map = Linear(rng, d_in, d_out, f"{name}.dim")

    def __call__(self, u: Tensor) -> Tensor:
        return self.dim_map(T.matmul(self.length_mix, u))

    def params(self):
        out = {self.length_mix.name: self.length_mix}
        out.update(self.dim_map.params())
        return out


def seed_fusion(u_bars: dict[str, Tensor]) -> Tensor:
    """F0 = sum of the projected modality representations."""
    return T.add(T.add(u_bars["text"], u_bars["vision"]), u_bars["audio"])


class DynamicAttentionBlock(Layer):
    def __init__(self, rng, d: int, n_heads: int, name: str):
        self.cross = {m: MultiHeadAttention(rng, d, n_heads, f"{name}.cross.{m}", null_key=True) for m in MODALITIES}
        self.ln_cross = {m: LayerNorm(d, f"{name}.lncross.{m}") for m in MODALITIES}
        self.ln_ratio = {m: LayerNorm(d, f"{name}.lnratio.{m}") for m in MODALITIES}
        self.ln_sum = LayerNorm(d, f"{name}.lnsum")
        self.self_attn = MultiHeadAttention(rng, d, n_heads, f"{name}.self")
        self.ln_self = LayerNorm(d, f"{name}.lnself")
        self.ffn = FeedForward(rng, d, f"{name}.ffn")
        self.ln_ffn = LayerNorm(d, f"{name}.lnffn")
        self.name = name
        self.last_cross_weights: dict[str, np.ndarray] = {}

    def __call__(self, f_prev: Tensor, u_bars: dict[str, Tensor], ratio: SentimentRatio) -> Tensor:
        contributions = []
        for m in MODALITIES:
            attended = self.cross[m](f_prev, u_bars[m], u_bars[m])
            self.last_cross_weights[m] = self.cross[m].last_weights
            f_tilde = self.ln_cross[m](T.add(f_prev, attended))
            r = ratio.ratios[m]
            if r.data.ndim == 2 and f_tilde.data.ndim == 3:
                r = T.reshape(r, (r.shape[0], 1, 1))
            # ratio scaling goes after the branch LN: a per-sample scalar
            # applied before LN would cancel out (LN is scale-invariant) and
            # the ratio could never shift the modality mix
            branch = self.ln_ratio[m](f_tilde)
            contributions.append(T.add(branch, T.mul(branch, r)))
        summed = T.add(T.add(contributions[0], contributions[1]), contributions[2])
        f_f = T.add(f_prev, self.ln_sum(summed))
        h = self.ln_self(T.add(f_f, self.self_attn(f_f, f_f, f_f)))
        out = self.ln_ffn(T.add(h, self.ffn(h)))
        if not np.all(np.isfinite(out.data)):
            raise FloatingPointError(f"NaN/Inf in dynamic attention block {self.name}")
        return out

    def params(self):
        layers = list(self.cross.values()) + list(self.ln_cross.values()) + list(self.ln_ratio.values())
        layers += [self.ln_sum, self.self_attn, self.ln_self, self.ffn, self.ln_ffn]
        return merge_params(*layers)


class ConcatFuser(Layer):
    """Baseline: dim-axis concatenation re-projected to the fusion dim."""

    def __init__(self, rng, d: int, name: str = "concat_fuse"):
        self.proj = Linear(rng, 3 * d, d, f"{name}.proj")

    def __call__(self, u_bars: dict[str, Tensor]) -> Tensor:
        return self.proj(T.concat([u_bars[m] for m in MODALITIES], axis=-1))

    def params(self):
        return self.proj.params()


def baseline_fuse(strategy: str, u_bars: dict[str, Tensor], concat_fuser: ConcatFuser | None = None) -> Tensor:
    if strategy == "addition":
        return seed_fusion(u_bars)
    if strategy == "concat":
        if concat_fuser is None:
            raise ValueError("concat strategy needs a ConcatFuser")
        return concat_fuser(u_bars)
    raise ValueError(f"unknown fusion strategy {strategy!r}")
