"""Metric suite against an independent brute-force implementation."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kuda.metrics import bin_scores, compute_metrics, pearson_corr, weighted_f1


# -- independent oracle, written loop-wise on purpose ------------------------

def _oracle_bin(v, lo, hi, k):
    pos = (v - lo) / (hi - lo) * (k - 1)
    b = int(round(pos))
    return min(max(b, 0), k - 1)


def _oracle_f1(y_true, y_pred):
    total = 0.0
    for cls in sorted(set(y_true)):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == cls and p == cls)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != cls and p == cls)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == cls and p != cls)
        f1 = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
        total += f1 * (tp + fn)
    return total / len(y_true)


def _oracle_metrics(y_hat, y, lo, hi):
    n = len(y)
    out = {"mae": sum(abs(a - b) for a, b in zip(y_hat, y)) / n}
    mh, my = sum(y_hat) / n, sum(y) / n
    num = sum((a - mh) * (b - my) for a, b in zip(y_hat, y))
    dh = sum((a - mh) ** 2 for a in y_hat) ** 0.5
    dy = sum((b - my) ** 2 for b in y) ** 0.5
    out["corr"] = 0.0 if dh == 0 or dy == 0 else num / (dh * dy)
    ph = [a >= 0 for a in y_hat]
    py = [b >= 0 for b in y]
    out["acc2_has0"] = sum(a == b for a, b in zip(ph, py)) / n
    out["f1_has0"] = _oracle_f1([int(b) for b in py], [int(a) for a in ph])
    keep = [(a, b) for a, b in zip(y_hat, y) if b != 0]
    if keep:
        pp = [a > 0 for a, _ in keep]
        tp = [b > 0 for _, b in keep]
        out["acc2_non0"] = sum(a == b for a, b in zip(pp, tp)) / len(keep)
        out["f1_non0"] = _oracle_f1([int(b) for b in tp], [int(a) for a in pp])
    else:
        out["acc2_non0"] = 0.0
        out["f1_non0"] = 0.0
    for k in (3, 5, 7):
        hits = sum(
            1
            for a, b in zip(y_hat, y)
            if _oracle_bin(a, lo, hi, k) == _oracle_bin(b, lo, hi, k)
        )
        out[f"acc{k}"] = hits / n
    return out


@pytest.mark.parametrize("label_range", [(-1.0, 1.0), (-3.0, 3.0)])
def test_metrics_match_bruteforce_oracle(label_range):
    lo, hi = label_range
    rng = np.random.default_rng(42)
    # 1000 pairs, predictions allowed slightly out of range, labels include 0
    y = rng.uniform(lo, hi, size=1000)
    y[::50] = 0.0
    y_hat = y + rng.normal(0.0, 0.4, size=1000)
    report = compute_metrics(y_hat, y, label_range)
    want = _oracle_metrics(list(y_hat), list(y), lo, hi)
    for key, val in want.items():
        assert abs(getattr(report, key) - val) <= 1e-12, key


def test_acc7_worked_example():
    # score 2.6 on [-3, 3]: (2.6+3)/6*6 = 5.6 -> rounds to class 6
    assert bin_scores(np.array([2.6]), (-3.0, 3.0), 7)[0] == 6


def test_bin_scores_clamps_out_of_range():
    got = bin_scores(np.array([-9.0, 9.0]), (-1.0, 1.0), 5)
    np.testing.assert_array_equal(got, [0, 4])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=1, max_size=20), st.sampled_from([3, 5, 7]))
def test_bin_scores_always_in_class_range(vals, k):
    got = bin_scores(np.array(vals), (-1.0, 1.0), k)
    assert got.min() >= 0 and got.max() <= k - 1


def test_pearson_degenerate_inputs():
    assert pearson_corr(np.ones(5), np.arange(5.0)) == (0.0, True)
    corr, flag = pearson_corr(np.arange(5.0), 2 * np.arange(5.0) + 1)
    assert not flag
    assert abs(corr - 1.0) <= 1e-12


def test_weighted_f1_hand_example():
    # classes {0,1}: class 1 perfect (support 2), class 0 has one miss
    y_true = np.array([0, 0, 1, 1])
    y_pred = np.array([0, 1, 1, 1])
    f1_c0 = 2 * 1 / (2 * 1 + 0 + 1)  # tp=1 fp=0 fn=1
    f1_c1 = 2 * 2 / (2 * 2 + 1 + 0)  # tp=2 fp=1 fn=0
    want = (f1_c0 * 2 + f1_c1 * 2) / 4
    assert abs(weighted_f1(y_true, y_pred) - want) <= 1e-12


def test_compute_metrics_input_validation():
    with pytest.raises(ValueError):
        compute_metrics(np.zeros(3), np.zeros(4), (-1.0, 1.0))
    with pytest.raises(ValueError):
        compute_metrics(np.zeros(0), np.zeros(0), (-1.0, 1.0))


def test_all_zero_labels_non0_metrics_are_zero():
    report = compute_metrics(np.array([0.1, -0.1]), np.zeros(2), (-1.0, 1.0))
    assert report.acc2_non0 == 0.0
    assert report.f1_non0 == 0.0
    assert report.corr_degenerate
