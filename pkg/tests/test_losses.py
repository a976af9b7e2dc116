from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_ap, naive_smooth_ap
from segaug.losses import (
    NonFiniteError,
    ScoreBatch,
    SmoothApParams,
    TiedScoresError,
    TripletBatch,
    batch_triplet_loss,
    exact_ap,
    grad_check,
    smooth_ap_loss,
    triplet_loss,
)


def random_labels(rng, B):
    n_pos = int(rng.integers(1, min(B - 1, 8) + 1)) if B > 1 else 1
    labels = np.zeros(B, dtype=int)
    labels[rng.choice(B, n_pos, replace=False)] = 1
    return labels


def untied_scores(rng, B, spacing=0.05):
    """Distinct scores at least ``spacing - 0.02`` apart."""
    return rng.permutation(B) * spacing + rng.uniform(0, 0.02, B)


# exact AP ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "scores,labels,expected",
    [
        ([0.9, 0.1], [1, 0], 1.0),
        ([0.1, 0.9], [1, 0], 0.5),
        ([3, 2, 1], [1, 0, 1], 5 / 6),
    ],
)
def test_exact_ap_hand_cases(scores, labels, expected):
    assert exact_ap(ScoreBatch(scores, labels)) == pytest.approx(expected, abs=1e-15)


def test_exact_ap_rejects_ties():
    with pytest.raises(TiedScoresError):
        exact_ap(ScoreBatch([0.5, 0.5, 0.1], [1, 0, 0]))


def test_exact_ap_matches_naive(rng):
    for _ in range(200):
        B = int(rng.integers(2, 30))
        s, y = untied_scores(rng, B), random_labels(rng, B)
        v = exact_ap(ScoreBatch(s, y))
        assert v == pytest.approx(naive_ap(s.tolist(), y.tolist()), abs=1e-12)
        assert 0.0 <= v <= 1.0


def test_score_batch_validation():
    with pytest.raises(ValueError):
        ScoreBatch([1.0, 2.0], [0, 0])
    with pytest.raises(ValueError):
        ScoreBatch([1.0], [1, 0])
    with pytest.raises(ValueError):
        ScoreBatch([np.nan, 1.0], [1, 0])
    with pytest.raises(ValueError):
        ScoreBatch([1.0, 2.0], [2, 0])
    with pytest.raises(ValueError):
        SmoothApParams(0.0)


# smooth AP ----------------------------------------------------------------------------


def test_single_positive_no_negatives():
    loss, grad = smooth_ap_loss(ScoreBatch([0.37], [1]))
    assert loss == 0.0
    assert grad.tolist() == [0.0]


def test_sharp_limit_hand_case():
    loss, _ = smooth_ap_loss(ScoreBatch([3, 2, 1], [1, 0, 1]), SmoothApParams(1e-4))
    assert abs(loss - (1 - 5 / 6)) < 1e-3


def test_matches_naive_formula(rng):
    for tau in (0.01, 0.1, 1.0):
        for _ in range(30):
            B = int(rng.integers(2, 20))
            s = rng.normal(0, 3 * tau, B)
            y = random_labels(rng, B)
            loss, _ = smooth_ap_loss(ScoreBatch(s, y), SmoothApParams(tau))
            assert loss == pytest.approx(naive_smooth_ap(s.tolist(), y.tolist(), tau), abs=1e-12)


def test_frozen_value():
    # two positives (0.3, 0.2), negatives (0.1, 0.0), tau 0.1, written out by hand:
    # 1 - [(1+G(-.1))/(1+G(-.2)+G(-.1)+G(-.3)) + (1+G(.1))/(1+G(.1)+G(-.1)+G(-.2))] / 2
    loss, _ = smooth_ap_loss(ScoreBatch([0.3, 0.1, 0.2, 0.0], [1, 0, 1, 0]), SmoothApParams(0.1))
    assert loss == pytest.approx(0.1496136610644304, abs=1e-14)


@pytest.mark.parametrize("tau", [0.01, 0.1, 1.0])
@pytest.mark.parametrize("B", [4, 16, 64])
def test_gradient_matches_finite_differences(tau, B):
    rng = np.random.default_rng(B * 1000 + int(tau * 100))
    for _ in range(5):
        y = random_labels(rng, B)
        s = rng.normal(0, 2 * tau, B)
        params = SmoothApParams(tau)
        err = grad_check(lambda x: smooth_ap_loss(ScoreBatch(x, y), params), s, 1e-5)
        assert err < 1e-4


def test_shift_invariance(rng):
    for _ in range(50):
        B = int(rng.integers(2, 40))
        s, y = rng.normal(0, 0.05, B), random_labels(rng, B)
        c = rng.uniform(-5, 5)
        l0, g0 = smooth_ap_loss(ScoreBatch(s, y))
        l1, g1 = smooth_ap_loss(ScoreBatch(s + c, y))
        assert l1 == pytest.approx(l0, abs=1e-12)
        np.testing.assert_allclose(g1, g0, atol=1e-9)


def test_range(rng):
    for _ in range(100):
        B = int(rng.integers(2, 40))
        s, y = rng.normal(0, 1, B), random_labels(rng, B)
        loss, _ = smooth_ap_loss(ScoreBatch(s, y), SmoothApParams(float(rng.choice([0.01, 0.1, 1]))))
        assert -1e-9 < loss <= 1.0


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    bump=st.floats(0.0, 1.0),
    tau=st.sampled_from([0.01, 0.1, 1.0]),
)
def test_raising_a_negative_never_lowers_loss(seed, bump, tau):
    rng = np.random.default_rng(seed)
    B = int(rng.integers(2, 20))
    y = random_labels(rng, B)
    s = rng.normal(0, 2 * tau, B)
    k = int(rng.choice(np.flatnonzero(y == 0)))
    l0, g0 = smooth_ap_loss(ScoreBatch(s, y), SmoothApParams(tau))
    s2 = s.copy()
    s2[k] += bump
    l1, _ = smooth_ap_loss(ScoreBatch(s2, y), SmoothApParams(tau))
    assert l1 >= l0 - 1e-15
    assert g0[k] >= 0.0


def test_negative_order_irrelevant(rng):
    # permuting scores among negatives only changes nothing
    s = np.array([0.5, 0.2, 0.45, 0.1, 0.3])
    y = np.array([1, 0, 1, 0, 0])
    l0, _ = smooth_ap_loss(ScoreBatch(s, y), SmoothApParams(0.05))
    s2 = s.copy()
    s2[[1, 3, 4]] = s[[4, 1, 3]]
    l1, _ = smooth_ap_loss(ScoreBatch(s2, y), SmoothApParams(0.05))
    assert l1 == pytest.approx(l0, abs=1e-15)


def test_gradient_sums_to_zero(rng):
    # shift invariance implies the gradient components cancel
    for _ in range(20):
        B = int(rng.integers(2, 30))
        _, g = smooth_ap_loss(ScoreBatch(rng.normal(0, 0.02, B), random_labels(rng, B)))
        assert abs(g.sum()) < 1e-9


# triplet ---------------------------------------------------------------------------------


def test_triplet_inactive():
    assert triplet_loss(TripletBatch(0.2, 0.9, 0.2)) == (0.0, (0.0, 0.0))


def test_triplet_active():
    loss, grad = triplet_loss(TripletBatch(0.8, 0.3, 0.2))
    assert loss == pytest.approx(0.7, abs=1e-15)
    assert grad == (1.0, -1.0)


def test_triplet_kink():
    assert triplet_loss(TripletBatch(0.5, 0.5, 0.0)) == (0.0, (0.0, 0.0))


@settings(max_examples=200, deadline=None)
@given(
    d_ap=st.floats(0, 10),
    d_an=st.floats(0, 10),
    margin=st.floats(0, 2),
)
def test_triplet_zero_iff_separated(d_ap, d_an, margin):
    loss, grad = triplet_loss(TripletBatch(d_ap, d_an, margin))
    exact = Fraction(d_ap) - Fraction(d_an) + Fraction(margin)
    if exact > 1e-12:
        assert loss > 0.0 and grad == (1.0, -1.0)
    elif exact < -1e-12:
        assert loss == 0.0 and grad == (0.0, 0.0)
    assert loss >= 0.0
    assert grad in ((0.0, 0.0), (1.0, -1.0))


@settings(max_examples=100, deadline=None)
@given(
    a=st.tuples(st.floats(0, 5), st.floats(0, 5)),
    b=st.tuples(st.floats(0, 5), st.floats(0, 5)),
    t=st.floats(0, 1),
)
def test_triplet_convex(a, b, t):
    f = lambda d: triplet_loss(TripletBatch(d[0], d[1], 0.2))[0]  # noqa: E731
    mid = (t * a[0] + (1 - t) * b[0], t * a[1] + (1 - t) * b[1])
    assert f(mid) <= t * f(a) + (1 - t) * f(b) + 1e-12


def test_triplet_validation():
    with pytest.raises(ValueError):
        TripletBatch(-0.1, 0.2)
    with pytest.raises(ValueError):
        TripletBatch(0.1, float("inf"))


def test_batch_triplet_enumeration():
    labels = np.array([1, 1, 0, 0])
    d = np.array(
        [
            [0.0, 0.5, 0.6, 0.1],
            [0.5, 0.0, 1.0, 0.9],
            [0.6, 1.0, 0.0, 0.3],
            [0.1, 0.9, 0.3, 0.0],
        ]
    )
    loss, grad = batch_triplet_loss(d, labels, margin=0.2)
    # triplets (a,p,n): (0,1,2) 0.1, (0,1,3) 0.6, (1,0,2) 0, (1,0,3) 0 -> mean 0.175
    assert loss == pytest.approx(0.175)
    expected = np.zeros((4, 4))
    expected[0, 1] = 2 / 4
    expected[0, 2] = -1 / 4
    expected[0, 3] = -1 / 4
    np.testing.assert_allclose(grad, expected)


def test_batch_triplet_gradient_check(rng):
    B = 8
    labels = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    d0 = rng.uniform(0, 1, (B, B))

    def f(x):
        loss, g = batch_triplet_loss(x.reshape(B, B), labels, 0.2)
        return loss, g.ravel()

    assert grad_check(f, d0.ravel(), 1e-6) < 1e-4


def test_batch_triplet_without_triplets():
    assert batch_triplet_loss(np.zeros((3, 3)), [1, 0, 0])[0] == 0.0


# grad_check harness --------------------------------------------------------------------


def test_grad_check_quadratic():
    err = grad_check(lambda x: (float(np.sum(x**2)), 2 * x), [1.0, 2.0], 1e-5)
    assert err < 1e-8


def test_grad_check_detects_wrong_gradient():
    err = grad_check(lambda x: (float(np.sum(x**2)), 3 * x), [1.0, 2.0], 1e-5)
    assert err > 1e-2


def test_grad_check_non_finite():
    with pytest.raises(NonFiniteError), np.errstate(all="ignore"):
        grad_check(lambda x: (float(np.sum(np.log(x))), 1 / x), [0.0, 1.0], 1e-5)
