"""Finite-difference verification for every differentiable op and the full model."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .fusion import DynamicAttentionBlock, test_ratio
from .nn import merge_params
from .tensor import Tensor, check_gradient


def _leaf(rng, shape, name):
    return T.param(rng.normal(size=shape), name)


def op_checks(seed: int = 0, rtol: float = 1e-4) -> list[tuple[str, callable, list[Tensor]]]:
    """(name, build_loss, leaves) triples for each differentiable op."""
    rng = np.random.default_rng(seed)
    a = _leaf(rng, (3, 4), "a")
    b = _leaf(rng, (3, 4), "b")
    w = _leaf(rng, (4, 5), "w")
    bias = _leaf(rng, (5,), "bias")
    m1 = _leaf(rng, (2, 3, 4), "m1")
    gain = _leaf(rng, (4,), "gain")
    lnb = _leaf(rng, (4,), "lnb")
    pos = T.param(np.abs(rng.normal(size=(3, 4))) + 0.5, "pos")
    sq = _leaf(rng, (4, 4), "sq")
    table = _leaf(rng, (7, 4), "table")
    ids = rng.integers(0, 7, size=(2, 3))

    def wsum(t):
        # weighted sum so the loss is sensitive to every coordinate
        w_ = np.cos(np.arange(t.data.size)).reshape(t.shape)
        return T.sum_axis(T.mul(t, T.constant(w_)))

    checks = [
        ("add", lambda: wsum(T.add(a, b)), [a, b]),
        ("sub", lambda: wsum(T.sub(a, b)), [a, b]),
        ("mul", lambda: wsum(T.mul(a, b)), [a, b]),
        ("div", lambda: wsum(T.div(a, pos)), [a, pos]),
        ("scale", lambda: wsum(T.scale(a, 1.7)), [a]),
        ("exp", lambda: wsum(T.exp(a)), [a]),
        ("log", lambda: wsum(T.log(pos)), [pos]),
        ("relu", lambda: wsum(T.relu(a)), [a]),
        ("gelu", lambda: wsum(T.gelu(a)), [a]),
        ("tanh", lambda: wsum(T.tanh(a)), [a]),
        ("abs", lambda: wsum(T.absolute(a)), [a]),
        ("matmul", lambda: wsum(T.matmul(a, w)), [a, w]),
        ("matmul_batched", lambda: wsum(T.matmul(m1, w)), [m1, w]),
        ("linear", lambda: wsum(T.linear(a, w, bias)), [a, w, bias]),
        ("transpose", lambda: wsum(T.transpose_last(a)), [a]),
        ("reshape", lambda: wsum(T.reshape(a, (4, 3))), [a]),
        ("concat", lambda: wsum(T.concat([a, b], axis=1)), [a, b]),
        ("narrow", lambda: wsum(T.narrow(a, 1, 1, 2)), [a]),
        ("mean_axis", lambda: wsum(T.mean_axis(m1, axis=1)), [m1]),
        ("sum_axis", lambda: wsum(T.sum_axis(m1, axis=2)), [m1]),
        ("softmax", lambda: wsum(T.softmax(a, axis=-1)), [a]),
        ("logsumexp", lambda: wsum(T.logsumexp(sq, axis=1)), [sq]),
        ("layer_norm", lambda: wsum(T.layer_norm(a, gain, lnb)), [a, gain, lnb]),
        ("embedding", lambda: wsum(T.embedding(table, ids)), [table]),
        ("mean", lambda: T.mean(T.mul(a, a)), [a]),
    ]
    return checks


def end_to_end_check(seed: int = 0):
    """2-block fusion stack: gradient of the output mean w.r.t. every parameter."""
    rng = np.random.default_rng(seed)
    d, t_f, batch = 4, 3, 2
    blocks = [DynamicAttentionBlock(rng, d, 2, f"gc.dab{i}") for i in range(2)]
    params = merge_params(*blocks)
    f0 = T.param(rng.normal(size=(batch, t_f, d)), "gc.f0")
    u_bars_data = {m: rng.normal(size=(batch, t_f, d)) for m in ("text", "vision", "audio")}
    ratio = test_ratio(batch)

    def build_loss():
        u_bars = {m: T.constant(v) for m, v in u_bars_data.items()}
        f = f0
        for block in blocks:
            f = block(f, u_bars, ratio)
        return T.mean(f)

    leaves = [f0] + list(params.values())
    return build_loss, leaves


def run_all(seed: int = 0, rtol: float = 1e-4) -> list[dict]:
    """Run every op check plus the end-to-end check; return a result table."""
    results = []
    for name, build, leaves in op_checks(seed=seed, rtol=rtol):
        try:
            err = check_gradient(build, leaves, rtol=rtol)
            results.append({"op": name, "passed": True, "rel_err": err})
        except AssertionError as exc:
            results.append({"op": name, "passed": False, "rel_err": float("nan"), "detail": str(exc)})
    build, leaves = end_to_end_check(seed=seed)
    try:
        err = check_gradient(build, leaves, rtol=rtol)
        results.append({"op": "dab_stack_end_to_end", "passed": True, "rel_err": err})
    except AssertionError as exc:
        results.append({"op": "dab_stack_end_to_end", "passed": False, "rel_err": float("nan"), "detail": str(exc)})
    return results
