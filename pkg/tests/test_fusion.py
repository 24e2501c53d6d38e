"""Sentiment ratios and the dynamic attention fusion stack."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kuda import tensor as T
from kuda.fusion import (
    MODALITIES,
    ConcatFuser,
    DynamicAttentionBlock,
    Projector,
    baseline_fuse,
    seed_fusion,
    sentiment_ratio,
)
from kuda.fusion import test_ratio as eval_ratio  # aliased: not a test


def rng():
    return np.random.default_rng(33)


def _ratio(errors, k=0.3, y=0.0):
    y_hat = {m: T.constant(np.array([[y + e]])) for m, e in zip(MODALITIES, errors)}
    return sentiment_ratio(y_hat, np.array([[y]]), k)


# -- sentiment ratio ---------------------------------------------------------

def test_ratio_rejects_nonpositive_k():
    for k in (0.0, -1.0):
        with pytest.raises(ValueError):
            _ratio([0.1, 0.2, 0.3], k=k)


def test_equal_errors_give_exact_thirds():
    r = _ratio([0.4, 0.4, 0.4])
    for m in MODALITIES:
        assert abs(float(r.ratios[m].data.reshape(-1)[0]) - 1.0 / 3.0) <= 1e-12


def test_worked_example_k03():
    # independent evaluation of exp(-0.3 e^2)/sum for e = (0.1, 0.5, 1.0)
    errs = (0.1, 0.5, 1.0)
    d = [math.exp(-0.3 * e * e) for e in errs]
    want = [v / sum(d) for v in d]
    got = _ratio(list(errs)).values()
    for m, w in zip(MODALITIES, want):
        assert abs(got[m] - w) <= 1e-9
    # frozen four-decimal reference values for the same case
    np.testing.assert_allclose(want, [0.3740, 0.3480, 0.2779], atol=5e-5)


@settings(max_examples=50, deadline=None)
@given(
    errs=st.lists(st.floats(min_value=-2.0, max_value=2.0), min_size=3, max_size=3),
    k=st.floats(min_value=1e-3, max_value=5.0),
)
def test_ratios_always_sum_to_one(errs, k):
    r = _ratio(errs, k=k)
    total = sum(float(r.ratios[m].data.reshape(-1)[0]) for m in MODALITIES)
    assert abs(total - 1.0) <= 1e-9


def test_larger_error_never_gets_larger_ratio():
    r = _ratio([0.05, 0.5, 1.5]).values()
    assert r["text"] > r["vision"] > r["audio"]


def test_ratio_is_detached():
    r = _ratio([0.1, 0.2, 0.3])
    for m in MODALITIES:
        t = r.ratios[m]
        assert not t.requires_grad
        assert t._parents == ()


def test_ratio_batched_shape():
    y = np.array([[0.5], [-0.5]])
    y_hat = {m: T.constant(y + 0.1 * (i + 1)) for i, m in enumerate(MODALITIES)}
    r = sentiment_ratio(y_hat, y, 0.3)
    assert r.ratios["text"].shape == (2, 1)
    total = sum(r.ratios[m].data for m in MODALITIES)
    np.testing.assert_allclose(total, 1.0, atol=1e-9)


def test_eval_ratio_is_exactly_one_and_label_free():
    r = eval_ratio(4)
    assert r.mode == "test"
    for m in MODALITIES:
        np.testing.assert_array_equal(r.ratios[m].data, np.ones((4, 1)))


# -- projection and seeding --------------------------------------------------

def test_projector_maps_to_fusion_shape():
    proj = Projector(rng(), t_in=6, d_in=10, t_out=4, d_out=8, name="p")
    u = T.constant(rng().normal(size=(3, 6, 10)))
    assert proj(u).shape == (3, 4, 8)


def test_seed_fusion_of_zeros_is_zero():
    z = {m: T.constant(np.zeros((2, 4, 8))) for m in MODALITIES}
    np.testing.assert_array_equal(seed_fusion(z).data, np.zeros((2, 4, 8)))


def test_seed_fusion_sums_modalities():
    u = {m: T.constant(rng().normal(size=(2, 4, 8))) for m in MODALITIES}
    want = sum(u[m].data for m in MODALITIES)
    np.testing.assert_allclose(seed_fusion(u).data, want, atol=1e-12)


# -- dynamic attention block -------------------------------------------------

def _block_inputs(d=8, t_f=4, batch=2, t_u=5):
    r = rng()
    f = T.constant(r.normal(size=(batch, t_f, d)))
    u = {m: T.constant(r.normal(size=(batch, t_u, d))) for m in MODALITIES}
    return f, u


def test_block_preserves_fusion_shape():
    block = DynamicAttentionBlock(rng(), 8, 2, "dab")
    f, u = _block_inputs()
    out = block(f, u, eval_ratio(2))
    assert out.shape == f.shape
    # shape is a fixed point: blocks stack
    assert block(out, u, eval_ratio(2)).shape == f.shape


def test_block_records_stochastic_cross_weights():
    block = DynamicAttentionBlock(rng(), 8, 2, "dab")
    f, u = _block_inputs(t_u=5)
    block(f, u, eval_ratio(2))
    for m in MODALITIES:
        w = block.last_cross_weights[m]
        assert w.shape == (2, 4, 6)  # 5 real keys + 1 null slot
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)


def test_block_output_depends_on_ratio():
    block = DynamicAttentionBlock(rng(), 8, 2, "dab")
    f, u = _block_inputs()
    uniform = block(f, u, eval_ratio(2)).data
    skewed = _ratio_like([0.8, 0.1, 0.1], batch=2)
    assert not np.allclose(block(f, u, skewed).data, uniform)


def _ratio_like(values, batch):
    from kuda.fusion import SentimentRatio

    return SentimentRatio(
        {m: T.constant(np.full((batch, 1), v)) for m, v in zip(MODALITIES, values)},
        mode="train",
    )


def test_block_raises_on_nonfinite_state():
    block = DynamicAttentionBlock(rng(), 8, 2, "dab")
    f, u = _block_inputs()
    u["vision"].data[0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        block(f, u, eval_ratio(2))


def test_block_gradcheck():
    block = DynamicAttentionBlock(np.random.default_rng(5), 4, 2, "dab")
    f = T.constant(np.random.default_rng(6).normal(size=(2, 3, 4)))
    u = {m: T.constant(np.random.default_rng(7 + i).normal(size=(2, 3, 4))) for i, m in enumerate(MODALITIES)}
    leaves = [t for t in block.params().values()][:6]  # spot-check a subset
    err = T.check_gradient(lambda: T.mean(block(f, u, eval_ratio(2))), leaves, rtol=1e-4)
    assert err < 1e-4


# -- baselines ---------------------------------------------------------------

def test_baseline_addition_matches_seed_fusion():
    u = {m: T.constant(rng().normal(size=(2, 4, 8))) for m in MODALITIES}
    np.testing.assert_array_equal(baseline_fuse("addition", u).data, seed_fusion(u).data)


def test_baseline_concat_needs_fuser():
    u = {m: T.constant(np.zeros((1, 4, 8))) for m in MODALITIES}
    with pytest.raises(ValueError):
        baseline_fuse("concat", u)
    fuser = ConcatFuser(rng(), 8)
    assert baseline_fuse("concat", u, fuser).shape == (1, 4, 8)


def test_baseline_unknown_strategy():
    u = {m: T.constant(np.zeros((1, 4, 8))) for m in MODALITIES}
    with pytest.raises(ValueError):
        baseline_fuse("gate", u)
