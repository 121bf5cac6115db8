"""Constrained hyperparameters and schedules."""
import math

import numpy as np
import pytest

from src.engine import params as pm
from src.numerics import autodiff as ad
from src.numerics.rng import RngStream
from src.tests.fd import numeric_grad, relative_error
from src.utils.errors import UsageError


def _make_hp(d=2, n_steps=4, a=0.01, **kw):
    return pm.HyperParams.initial(d, n_steps, a=a, **kw)


def test_initial_values_are_identity():
    hp = _make_hp(d=3, a=0.05, sigma=2.0)
    np.testing.assert_allclose(ad.value(hp.sigma), 2.0)
    np.testing.assert_allclose(ad.value(hp.mass), 1.0)
    np.testing.assert_allclose(ad.value(hp.prior_var), 1.0)
    np.testing.assert_array_equal(hp.prior_mean, np.zeros(3))
    assert float(ad.value(hp.step_scale)) == pytest.approx(0.05)
    assert hp.b.shape == (3,)


def test_cosine_step_sizes():
    dts = ad.value(pm.step_sizes(_make_hp(n_steps=4, a=0.01), 4))
    assert dts[0] == pytest.approx(0.01)
    assert dts[2] == pytest.approx(0.005)
    np.testing.assert_allclose(ad.value(pm.step_sizes(_make_hp(n_steps=2, a=0.1), 2)), [0.1, 0.05])
    assert np.all(np.diff(dts) < 0)


def test_uniform_schedule_and_terminal_time():
    hp = _make_hp(n_steps=8, a=0.02, schedule="uniform")
    np.testing.assert_allclose(ad.value(pm.step_sizes(hp, 8)), 0.02)
    assert pm.terminal_time(hp, 8) == pytest.approx(0.16)
    with pytest.raises(UsageError):
        pm.step_sizes(hp, 0)


def test_anneal_schedule_examples():
    np.testing.assert_allclose(ad.value(pm.anneal_schedule(_make_hp(n_steps=4), 4)), [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_array_equal(ad.value(pm.anneal_schedule(_make_hp(n_steps=1), 1)), [0.0, 1.0])
    hp = _make_hp(n_steps=3).with_arrays({"b": np.array([math.log(math.e - 1), math.log(math.e ** 2 - 1)])})
    beta = ad.value(pm.anneal_schedule(hp, 3))
    s3 = math.log(2.0)
    np.testing.assert_allclose(beta, [0.0, 1 / (3 + s3), 3 / (3 + s3), 1.0])
    assert beta[0] == 0.0 and beta[-1] == 1.0


def test_anneal_schedule_is_monotone_for_random_b():
    rng = np.random.default_rng(0)
    for _ in range(20):
        hp = _make_hp(n_steps=9).with_arrays({"b": rng.normal(scale=3.0, size=8)})
        beta = ad.value(pm.anneal_schedule(hp, 9))
        assert np.all(np.diff(beta) >= 0)
        assert beta[-1] == 1.0


def test_two_step_schedule_follows_both_increments():
    hp = _make_hp(n_steps=2)
    assert ad.value(pm.anneal_schedule(hp, 2))[1] == pytest.approx(0.5)
    low = ad.value(pm.anneal_schedule(hp.with_arrays({"b": np.array([-20.0]), "b_last": np.array([5.0])}), 2))
    high = ad.value(pm.anneal_schedule(hp.with_arrays({"b": np.array([5.0]), "b_last": np.array([-20.0])}), 2))
    assert low[1] < 1e-6
    assert high[1] > 1.0 - 1e-6

    tape = ad.Tape()
    bound, leaves = hp.bind(tape)
    out = pm.anneal_schedule(bound, 2)[1]
    grads = ad.grad(tape, out, wrt=[leaves["hp.b"], leaves["hp.b_last"]])
    assert grads[leaves["hp.b"]][0] == pytest.approx(1.0 / (8.0 * math.log(2.0)))
    assert grads[leaves["hp.b_last"]][0] == pytest.approx(-1.0 / (8.0 * math.log(2.0)))


def test_late_schedule_can_stay_below_one_half():
    hp = _make_hp(n_steps=4).with_arrays({"b": np.array([-30.0, -30.0, -30.0]), "b_last": np.array([3.0])})
    beta = ad.value(pm.anneal_schedule(hp, 4))
    assert beta[3] < 1e-6


def test_anneal_schedule_rejects_wrong_length():
    with pytest.raises(UsageError):
        pm.anneal_schedule(_make_hp(n_steps=4), 5)


def test_anneal_schedule_gradient_matches_finite_differences():
    hp = _make_hp(n_steps=5).with_arrays({"b": np.array([0.3, -0.2, 1.1, 0.4])})
    weights = np.array([0.0, 1.0, -2.0, 0.5, 3.0, 0.0])

    def loss_from(b):
        return float(np.sum(ad.value(pm.anneal_schedule(hp.with_arrays({"b": b}), 5)) * weights))

    tape = ad.Tape()
    bound, leaves = hp.bind(tape)
    out = ad.sum(pm.anneal_schedule(bound, 5) * weights)
    analytic = ad.grad(tape, out, wrt=[leaves["hp.b"]])[leaves["hp.b"]]
    assert relative_error(analytic, numeric_grad(loss_from, hp.b)) < 1e-6


def test_prior_logpdf_and_sampling():
    hp = _make_hp(d=2)
    assert pm.prior_logpdf(hp, np.zeros((1, 2)))[0] == pytest.approx(-math.log(2 * math.pi))
    np.testing.assert_array_equal(pm.prior_sample(hp, RngStream(3, 4)), pm.prior_sample(hp, RngStream(3, 4)))


def test_reparameterized_mean_slope_wrt_mu():
    hp = _make_hp(d=3)
    xi = np.random.default_rng(1).normal(size=(10_000, 3))
    tape = ad.Tape()
    bound, leaves = hp.bind(tape)
    out = ad.sum(ad.mean(pm.prior_transform(bound, xi), axis=0))
    slope = ad.grad(tape, out, wrt=[leaves["hp.eta_mu"]])[leaves["hp.eta_mu"]]
    np.testing.assert_allclose(slope, 1.0, atol=0.05)


def test_frozen_groups_are_not_bound():
    hp = _make_hp(learn_flags={"sigma": False, "prior": False})
    tape = ad.Tape()
    _, leaves = hp.bind(tape)
    assert "hp.eta_sigma" not in leaves
    assert "hp.eta_mu" not in leaves
    assert "hp.eta_M" not in leaves
    assert {"hp.eta_delta", "hp.b"} <= set(leaves)
    assert pm.trainable_fields(hp) == ["eta_delta", "b", "b_last"]


def test_dict_round_trip_preserves_flags():
    hp = _make_hp(d=2, learn_flags={"M": True}, schedule="uniform")
    back = pm.HyperParams.from_dict(hp.to_dict())
    assert back.learn_flags == hp.learn_flags
    assert back.schedule == "uniform"
    for name, value in hp.arrays().items():
        np.testing.assert_array_equal(back.arrays()[name], value)
