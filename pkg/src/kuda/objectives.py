"""Training objectives: InfoNCE correlation loss, MAE regression, union loss."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .fusion import MODALITIES
from .nn import Layer
from .tensor import Tensor


def info_nce_from_scores(scores: Tensor) -> Tensor:
    """-(1/N) * sum_i log softmax(scores[i])[i] for an N x N score matrix."""
    n = scores.shape[0]
    if scores.data.ndim != 2 or scores.shape[1] != n:
        raise ValueError(f"expected square score matrix, got {scores.shape}")
    if n < 2:
        raise ValueError("InfoNCE needs at least 2 samples for negatives")
    lse = T.logsumexp(scores, axis=1)
    diag = T.sum_axis(T.mul(scores, T.constant(np.eye(n))), axis=1)
    return T.mean(T.sub(lse, diag))


class CorrelationEstimator(Layer):
    """Bilinear InfoNCE alignment between fused and unimodal representations.

    Pools both sides over length, scores pairs as (W_m f_i) . u_j with one
    learned map per modality, and sums the per-modality losses.
    """

    def __init__(self, rng, d: int, name: str = "nce"):
        std = np.sqrt(2.0 / (2 * d))
        self.maps = {m: T.param(rng.normal(0.0, std, size=(d, d)), f"{name}.{m}.w") for m in MODALITIES}

    def score_matrix(self, f_pooled: Tensor, u_pooled: Tensor, modality: str) -> Tensor:
        projected = T.matmul(f_pooled, T.transpose_last(self.maps[modality]))
        return T.matmul(projected, T.transpose_last(u_pooled))

    def __call__(self, f_final: Tensor, u_bars: dict[str, Tensor]) -> Tensor:
        f_pooled = T.mean_axis(f_final, axis=-2)
        loss = None
        for m in MODALITIES:
            u_pooled = T.mean_axis(u_bars[m], axis=-2)
            term = info_nce_from_scores(self.score_matrix(f_pooled, u_pooled, m))
            loss = term if loss is None else T.add(loss, term)
        return loss

    def params(self):
        return {t.name: t for t in self.maps.values()}


def mae_loss(y_hat: Tensor, y) -> Tensor:
    """Mean absolute error over a batch of scalars."""
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if y.size == 0:
        raise ValueError("mae_loss: empty batch")
    if y_hat.data.size != y.size:
        raise ValueError(f"mae_loss: {y_hat.data.size} predictions vs {y.size} labels")
    return T.mean(T.absolute(T.sub(y_hat, T.constant(y.reshape(y_hat.shape)))))


def union_loss(l_reg: Tensor, l_cor: Tensor, alpha: float) -> Tensor:
    """L_task = L_reg + alpha * L_cor."""
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    if alpha == 0.0:
        return l_reg
    return T.add(l_reg, T.scale(l_cor, alpha))
