"""Tape-based reverse-mode differentiation."""
import math

import numpy as np
import pytest

from src.numerics import autodiff as ad
from src.tests.fd import check_grad, tape_grad
from src.utils.errors import DomainError, UsageError


def test_square_gradient():
    assert tape_grad(lambda w: ad.sum(w * w), np.array([3.0]))[0] == pytest.approx(6.0)


def test_softplus_gradient_at_zero_is_half():
    assert tape_grad(lambda w: ad.sum(ad.softplus(w)), np.array([0.0]))[0] == pytest.approx(0.5)


@pytest.mark.parametrize("fn", [ad.exp, ad.tanh, ad.sigmoid, ad.softplus, ad.log_sigmoid, ad.gelu, ad.square])
def test_unary_primitives_match_finite_differences(fn):
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert check_grad(lambda v: ad.sum(fn(v)), x) < 1e-6


def test_positive_domain_primitives_match_finite_differences():
    x = np.random.default_rng(1).uniform(0.5, 2.0, size=5)
    assert check_grad(lambda v: ad.sum(ad.log(v) + ad.sqrt(v) + ad.power(v, 1.5)), x) < 1e-6


def test_broadcasting_is_undone_in_backward_pass():
    tape = ad.Tape()
    a = tape.leaf(np.arange(6.0).reshape(3, 2), name="a")
    b = tape.leaf(np.array([2.0, -1.0]), name="b")
    g = ad.grad(tape, ad.sum(a * b))
    np.testing.assert_allclose(g[b], np.arange(6.0).reshape(3, 2).sum(axis=0))
    np.testing.assert_allclose(g[a], np.tile([2.0, -1.0], (3, 1)))


def test_two_layer_mlp_matches_finite_differences():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 3))
    w1 = rng.normal(size=(3, 8))
    w2 = rng.normal(size=(8, 2))

    def loss(w):
        h = ad.gelu(x @ w)
        return ad.sum(ad.square(h @ w2))

    assert check_grad(loss, w1, eps=1e-5) < 1e-4


def test_structure_ops_match_finite_differences():
    x = np.random.default_rng(3).normal(size=(4, 3))

    def loss(v):
        parts = ad.concat([v[:, :1], ad.exp(v[:, 1:])], axis=1)
        stacked = ad.stack([parts, v], axis=0)
        return ad.sum(ad.logsumexp(ad.reshape(stacked, (8, 3)), axis=1)) + ad.mean(ad.clip(v, -0.5, 0.5))

    assert check_grad(loss, x) < 1e-6


def test_gaussian_logpdf_examples():
    assert ad.gaussian_logpdf(np.array([0.0]), np.array([0.0]), np.array([1.0])) == pytest.approx(-0.9189385332)
    assert ad.gaussian_logpdf(np.zeros(2), np.zeros(2), np.ones(2)) == pytest.approx(-1.8378770664)
    expected = -(0.5 * math.log(4.0 * math.pi) + 0.25)
    assert ad.gaussian_logpdf(np.array([1.0]), np.array([0.0]), np.array([2.0])) == pytest.approx(expected)


def test_gaussian_logpdf_gradients_in_all_arguments():
    rng = np.random.default_rng(4)
    x, m = rng.normal(size=(3, 2)), rng.normal(size=2)
    var = rng.uniform(0.5, 2.0, size=2)
    assert check_grad(lambda v: ad.sum(ad.gaussian_logpdf(v, m, var)), x) < 1e-6
    assert check_grad(lambda v: ad.sum(ad.gaussian_logpdf(x, v, var)), m) < 1e-6
    assert check_grad(lambda v: ad.sum(ad.gaussian_logpdf(x, m, v)), var) < 1e-6


def test_gaussian_logpdf_names_bad_variance_index():
    with pytest.raises(DomainError) as err:
        ad.gaussian_logpdf(np.zeros(3), np.zeros(3), np.array([1.0, 0.0, 1.0]))
    assert err.value.index == 1


def test_logsumexp_examples():
    assert ad.logsumexp(np.zeros(2)) == pytest.approx(math.log(2.0))
    assert ad.logsumexp(np.array([5.0])) == 5.0
    assert ad.logsumexp(np.array([1000.0, 1000.0])) == pytest.approx(1000.0 + math.log(2.0))
    with pytest.raises(UsageError):
        ad.logsumexp(np.array([]))


def test_logsumexp_shifts_with_a_constant():
    v = np.random.default_rng(2).normal(scale=4.0, size=50)
    for c in (-700.0, -3.5, 0.0, 12.0, 900.0):
        assert float(ad.logsumexp(v + c)) == pytest.approx(float(ad.logsumexp(v)) + c, rel=1e-12, abs=1e-9)


def test_gaussian_logpdf_ignores_coordinate_order():
    rng = np.random.default_rng(6)
    x, m = rng.normal(size=(4, 5)), rng.normal(size=5)
    var = rng.uniform(0.2, 3.0, size=5)
    perm = rng.permutation(5)
    np.testing.assert_allclose(ad.gaussian_logpdf(x[:, perm], m[perm], var[perm]),
                               ad.gaussian_logpdf(x, m, var), rtol=1e-12)


def test_plain_arrays_stay_plain_and_mixed_ops_record():
    assert isinstance(ad.exp(np.ones(2)), np.ndarray)
    tape = ad.Tape()
    w = tape.leaf(np.ones(2), name="w")
    assert ad.is_node(np.ones(2) * w)
    assert ad.is_node(np.ones((1, 2)) @ ad.reshape(w, (2, 1)))


def test_unreached_leaf_gets_zero_gradient():
    tape = ad.Tape()
    a = tape.leaf(np.array([1.0, 2.0]), name="a")
    b = tape.leaf(np.array([5.0]), name="b")
    g = ad.grad(tape, ad.sum(a))
    np.testing.assert_array_equal(g[b], np.zeros(1))


def test_grad_rejects_bad_outputs():
    tape, other = ad.Tape(), ad.Tape()
    a = tape.leaf(np.ones(2), name="a")
    c = other.leaf(np.ones(1), name="c")
    with pytest.raises(UsageError):
        ad.grad(tape, ad.sum(c))
    with pytest.raises(UsageError):
        ad.grad(tape, a * 2.0)
    with pytest.raises(UsageError):
        ad.add(a, c)


def test_detach_cuts_gradient():
    tape = ad.Tape()
    a = tape.leaf(np.array([2.0]), name="a")
    out = ad.sum(a * ad.detach(a))
    assert ad.grad(tape, out)[a][0] == pytest.approx(2.0)
