import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from idian.losses import (DegenerateLossWarning, cross_entropy, loss_adv, loss_ae, loss_cls,
                          loss_contrastive, loss_total, pair_mask)


def val(t):
    return float(t.value)


# --- reconstruction -------------------------------------------------------


def test_identity_autoencoders_cost_nothing():
    x = np.random.default_rng(0).random((4, 3))
    assert val(loss_ae(x, x, x[:2], x[:2])) == 0.0


def test_single_source_residual():
    got = val(loss_ae([[1.1, 0.9]], [[1.0, 1.0]], [[0.5]], [[0.5]]))
    assert got == pytest.approx(0.02, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), arrays(np.float64, (2, 4), elements=st.floats(-5, 5)))
def test_doubling_residuals_quadruples(rs, rt):
    x_s, x_t = np.zeros((3, 4)), np.zeros((2, 4))
    one = val(loss_ae(rs, x_s, rt, x_t))
    two = val(loss_ae(2 * rs, x_s, 2 * rt, x_t))
    assert two == pytest.approx(4 * one, rel=1e-12, abs=1e-12)


# --- contrastive ----------------------------------------------------------


def test_identical_same_class_pair():
    assert val(loss_contrastive([[0.2, 0.4], [0.2, 0.4]], [1, 1])) == 0.0


def test_far_different_class_pair():
    f = [[0.0, 0.0], [math.sqrt(3.0), 0.0]]
    assert val(loss_contrastive(f, [0, 1], rho=1.0)) == pytest.approx(0.0, abs=1e-12)


def test_close_different_class_pair():
    assert val(loss_contrastive([[0.0], [0.5]], [0, 1], rho=1.0)) == pytest.approx(0.75, abs=1e-12)


def test_mean_over_pairs():
    # three points: one same-class pair at distance^2 1, two cross pairs at distance^2 0.25
    f = [[0.0], [1.0], [0.5]]
    got = val(loss_contrastive(f, [0, 0, 1], rho=1.0))
    assert got == pytest.approx((1.0 + 0.75 + 0.75) / 3)


def test_single_embedding_warns_and_returns_zero():
    with pytest.warns(DegenerateLossWarning):
        assert val(loss_contrastive([[1.0, 2.0]], [0])) == 0.0


def test_cross_only_pairs():
    mask = pair_mask([0, 0, 1], domains=[0, 1, 1], pairs="cross-only")
    np.testing.assert_array_equal(mask, [[0, 1, 1], [0, 0, 0], [0, 0, 0]])
    with pytest.raises(ValueError):
        pair_mask([0, 1], pairs="cross-only")


def test_margin_must_be_positive():
    with pytest.raises(ValueError):
        loss_contrastive([[0.0], [1.0]], [0, 1], rho=0.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-3, 3)), st.lists(st.integers(0, 2), min_size=5, max_size=5))
def test_contrastive_is_non_negative(f, labels):
    assert val(loss_contrastive(f, labels)) >= 0.0


# --- adversarial ----------------------------------------------------------


def test_undecided_discriminator():
    assert val(loss_adv(np.full((3, 1), 0.5), np.full((5, 1), 0.5))) == pytest.approx(2 * math.log(2), abs=1e-9)


def test_perfect_discriminator():
    assert val(loss_adv(np.ones((2, 1)), np.zeros((2, 1)))) == pytest.approx(0.0, abs=1e-12)


def test_hand_evaluated_adversarial():
    got = val(loss_adv([[0.9]], [[0.2]]))
    assert got == pytest.approx(-math.log(0.9) - math.log(0.8), abs=1e-12)
    assert round(got, 4) == 0.3285


def test_saturated_discriminator_is_finite():
    assert np.isfinite(val(loss_adv([[0.0]], [[1.0]])))


# --- classification -------------------------------------------------------


def test_perfect_classifier():
    assert val(loss_cls(np.eye(3), [0, 1, 2], np.eye(3), [0, 1, 2])) == 0.0


def test_uniform_classifier_two_instances():
    u = np.full((1, 10), 0.1)
    assert val(loss_cls(u, [3], u, [7], alpha=1.0)) == pytest.approx(2 * math.log(10), abs=1e-9)


def test_alpha_zero_drops_source():
    rng = np.random.default_rng(0)
    pt = rng.dirichlet(np.ones(4), 5)
    ps = rng.dirichlet(np.ones(4), 5)
    assert val(loss_cls(pt, [0, 1, 2, 3, 0], ps, [1] * 5, alpha=0.0)) == val(cross_entropy(pt, [0, 1, 2, 3, 0]))


@pytest.mark.parametrize("n_c", [2, 3, 10, 57])
def test_uniform_cross_entropy(n_c):
    assert val(cross_entropy(np.full((4, n_c), 1.0 / n_c), [0, 1, 0, 1])) == pytest.approx(math.log(n_c), abs=1e-9)


# --- total ----------------------------------------------------------------


def test_weighted_total():
    assert loss_total(1.0, 0.2, 0.3, 0.5, 10, 10, 10) == pytest.approx(1.0, abs=1e-12)


def test_total_of_zeros():
    assert loss_total(0.0, 0.0, 0.0, 0.0, 10, 10, 10) == 0.0


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_zero_weights_reduce_to_classification(c, a, k, d):
    assert loss_total(c, a, k, d, 0, 0, 0) == c
