"""Adapter injection chain and unimodal sentiment decoders."""

import numpy as np
import pytest

from kuda import tensor as T
from kuda.knowledge import (
    AdapterBlock,
    AdapterStack,
    SentimentDecoder,
    clamp_score,
    knowledge_enhance,
)


def rng():
    return np.random.default_rng(21)


def test_fresh_adapter_block_is_identity():
    # zero-initialized up-projection: a fresh block must pass input through
    block = AdapterBlock(rng(), 8, 4, "b")
    x = rng().normal(size=(2, 5, 8))
    np.testing.assert_array_equal(block(T.constant(x)).data, x)


def test_adapter_block_departs_from_identity_after_update():
    block = AdapterBlock(rng(), 8, 4, "b")
    block.up.w.data += 0.1
    x = rng().normal(size=(2, 5, 8))
    assert not np.allclose(block(T.constant(x)).data, x)


def test_adapter_stack_tap_count_mismatch():
    stack = AdapterStack(rng(), 8, 2, "s")
    base = T.constant(np.zeros((1, 4, 8)))
    with pytest.raises(ValueError):
        stack(base, [base])


def test_adapter_stack_chains_taps():
    # fresh stack: K = ((base + t1) + t2) ... since each block is identity
    stack = AdapterStack(rng(), 8, 3, "s")
    base = T.constant(rng().normal(size=(2, 4, 8)))
    taps = [T.constant(rng().normal(size=(2, 4, 8))) for _ in range(3)]
    got = stack(base, taps).data
    want = base.data + sum(t.data for t in taps)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_decoder_output_shape():
    dec = SentimentDecoder(rng(), 16, 8, "d")
    u = T.constant(rng().normal(size=(5, 6, 16)))
    assert dec(u).shape == (5, 1)


def test_decoder_is_pooling_invariant_to_length_permutation():
    dec = SentimentDecoder(rng(), 16, 8, "d")
    u = rng().normal(size=(2, 6, 16))
    perm = np.random.default_rng(0).permutation(6)
    a = dec(T.constant(u)).data
    b = dec(T.constant(u[:, perm])).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_knowledge_enhance_concatenates_dim_axis():
    k = T.constant(np.ones((2, 4, 3)))
    h = T.constant(np.zeros((2, 4, 5)))
    u = knowledge_enhance(k, h)
    assert u.shape == (2, 4, 8)
    np.testing.assert_array_equal(u.data[..., :3], 1.0)
    np.testing.assert_array_equal(u.data[..., 3:], 0.0)


def test_clamp_score():
    assert clamp_score(1.7, (-1.0, 1.0)) == 1.0
    assert clamp_score(-5.0, (-3.0, 3.0)) == -3.0
    assert clamp_score(0.25, (-1.0, 1.0)) == 0.25
