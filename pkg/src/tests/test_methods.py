"""Sampler families: networks, drifts, preconditioning and extended densities."""
import math

import numpy as np
import pytest

from src.engine.controls import N_TIME_FEATURES
from src.engine.dynamics import State
from src.engine.methods import MethodSpec, configure
from src.engine.params import HyperParams, grad_log_prior
from src.engine.sampler import init_params, simulate
from src.engine.targets import funnel, gmm, standard_gaussian
from src.numerics import autodiff as ad
from src.utils.errors import UsageError

SQRT2 = math.sqrt(2.0)


def _make_setup(kind="DBS", regime="overdamped", integrator="em", drift="grad_log_nu_learned",
                precondition=True, proposal="forward", sigma=SQRT2, d=2, n_steps=8):
    spec = MethodSpec(kind=kind, regime=regime, integrator=integrator, drift=drift,
                      precondition=precondition, proposal=proposal)
    params = init_params(spec, d, n_steps, sigma=sigma, width=8)
    return spec, params, configure(spec, standard_gaussian(d), params.hp, params.nets, n_steps)


def _state(d=2, batch=3, underdamped=False, seed=0):
    rng = np.random.default_rng(seed)
    return State(rng.normal(size=(batch, d)), rng.normal(size=(batch, d)) if underdamped else None)


@pytest.mark.parametrize("kwargs", [
    {"kind": "SMC"},
    {"regime": "overdamped", "integrator": "obabo"},
    {"regime": "sideways"},
    {"drift": "grad_log_unknown"},
    {"proposal": "reverse"},
])
def test_invalid_method_combinations(kwargs):
    with pytest.raises(UsageError):
        MethodSpec(**kwargs)


def test_labels_and_network_sets():
    assert MethodSpec().label == "DBS-UD-OBABO"
    assert MethodSpec(kind="ULA", regime="overdamped", integrator="em").label == "ULA-OD-EM"
    assert MethodSpec(kind="ULA").networks == ()
    assert MethodSpec(kind="MCD").networks == ("v",)
    assert MethodSpec(kind="CMCD").networks == ("u",)
    assert MethodSpec(kind="DIS").networks == ("u",)
    assert MethodSpec(kind="DBS").networks == ("u", "v")


def test_annealing_usage():
    assert MethodSpec(kind="MCD").uses_annealing
    assert not MethodSpec(kind="DIS").uses_annealing
    assert not MethodSpec(kind="DBS", drift="grad_log_target").uses_annealing
    _, _, setup = _make_setup(kind="ULA", regime="underdamped", integrator="obab", n_steps=6)
    beta = np.asarray(ad.value(setup.beta))
    assert beta.shape == (7,)
    assert beta[0] == pytest.approx(0.0) and beta[-1] == pytest.approx(1.0)


def test_overdamped_precondition_flips_target_drift():
    _, params, setup = _make_setup(drift="grad_log_target")
    z = _state()
    sigma = ad.value(params.hp.sigma)
    np.testing.assert_allclose(setup.drift.f(z.x, 0), -z.x)
    np.testing.assert_allclose(ad.value(setup.drift.v(z, 0)), 2.0 * z.x / sigma, atol=1e-12)


def test_cmcd_backward_control_is_score_minus_forward():
    _, params, setup = _make_setup(kind="CMCD")
    z = _state()
    sigma = ad.value(params.hp.sigma)
    # at t = 0 the annealed density is the N(0, I) prior and the fresh u is zero
    np.testing.assert_allclose(ad.value(setup.drift.v(z, 0)), -sigma * z.x, atol=1e-12)
    np.testing.assert_allclose(setup.drift.f(z.x, 0), -0.5 * sigma * sigma * z.x, atol=1e-12)


def test_underdamped_precondition_adds_velocity():
    _, params, setup = _make_setup(regime="underdamped", integrator="obabo")
    z = _state(underdamped=True)
    sigma = ad.value(params.hp.sigma)
    np.testing.assert_allclose(sigma * ad.value(setup.drift.v(z, 3)), 2.0 * z.y, atol=1e-12)


def test_overdamped_dis_drift_after_preconditioning():
    _, params, setup = _make_setup(kind="DIS")
    z = _state()
    sigma = ad.value(params.hp.sigma)
    total = setup.drift.f(z.x, 0) + sigma * ad.value(setup.drift.u(z, 0))
    np.testing.assert_allclose(total, -2.0 * sigma * sigma * z.x, atol=1e-12)
    assert setup.drift.v is None


def test_underdamped_extended_densities_include_velocity():
    _, _, setup = _make_setup(regime="underdamped", integrator="obab")
    z = _state(underdamped=True)
    still = State(z.x, np.zeros_like(z.y))
    np.testing.assert_allclose(setup.log_pi(z) - setup.log_pi(still), -0.5 * np.sum(z.y ** 2, axis=1), atol=1e-12)
    np.testing.assert_allclose(setup.log_tau(z) - setup.log_tau(still), -0.5 * np.sum(z.y ** 2, axis=1), atol=1e-12)


def test_initial_sample_uses_prior_and_mass():
    _, params, setup = _make_setup(regime="underdamped", integrator="obabo")
    noise = np.stack([np.ones((2, 2)), -np.ones((2, 2))])
    z0 = setup.sample_initial(noise)
    np.testing.assert_allclose(ad.value(z0.x), np.sqrt(ad.value(params.hp.prior_var)) * np.ones((2, 2)))
    np.testing.assert_allclose(ad.value(z0.y), -np.sqrt(ad.value(params.hp.mass)) * np.ones((2, 2)))


def test_uncontrolled_proposal_moves_without_network():
    _, _, setup = _make_setup(regime="underdamped", integrator="obabo", proposal="uncontrolled")
    z = _state(underdamped=True)
    assert setup.drift.w is not None
    assert np.all(np.asarray(ad.value(setup.drift.w(z, 0))) == 0.0)


def test_network_set_must_match():
    spec = MethodSpec(kind="DBS")
    hp = HyperParams.initial(2, 4)
    with pytest.raises(UsageError):
        configure(spec, standard_gaussian(2), hp, {}, 4)
    ula = MethodSpec(kind="ULA")
    nets = init_params(spec, 2, 4, width=4).nets
    with pytest.raises(UsageError):
        configure(ula, standard_gaussian(2), hp, nets, 4)


def test_annealed_score_matches_prior_and_target_at_the_ends():
    target = gmm([[1.0, 0.5], [-1.0, -0.5]], [0.3, 0.7], 0.6)
    spec = MethodSpec(kind="DBS", regime="overdamped", integrator="em", drift="grad_log_nu_learned")
    params = init_params(spec, 2, 6, width=8)
    params = params.with_arrays({"hp.b": np.array([0.4, -1.0, 2.0, 0.3, -0.2]), "hp.b_last": np.array([0.9]),
                                 "hp.eta_mu": np.array([0.5, -0.25]), "hp.eta_Sigma": np.array([0.1, 1.7])})
    setup = configure(spec, target, params.hp, params.nets, 6)
    x = np.random.default_rng(9).normal(size=(5, 2))
    np.testing.assert_array_equal(setup.drift.f(x.copy(), 0), grad_log_prior(params.hp, x))
    np.testing.assert_array_equal(setup.drift.f(x.copy(), 6), target.grad_log_rho(x))
    beta = ad.value(setup.beta)
    mixed = (1.0 - beta[3]) * grad_log_prior(params.hp, x) + beta[3] * target.grad_log_rho(x)
    np.testing.assert_allclose(setup.drift.f(x.copy(), 3), mixed, rtol=1e-12)


@pytest.mark.parametrize("kind,networks", [("ULA", 0), ("MCD", 1), ("CMCD", 1), ("DIS", 1), ("DBS", 2)])
def test_network_parameter_count_per_kind(kind, networks):
    d, width = 3, 8
    per_net = {}
    for regime, integrator in (("overdamped", "em"), ("underdamped", "obab")):
        state_dim = 2 * d if regime == "underdamped" else d
        expected = (state_dim + N_TIME_FEATURES) * width + width + width * width + width + width * d + d
        counts = []
        for pre in (True, False):
            spec = MethodSpec(kind=kind, regime=regime, integrator=integrator, precondition=pre)
            params = init_params(spec, d, 4, width=width)
            assert len(params.nets) == networks
            counts.append(params.network_parameter_count())
        assert counts[0] == counts[1] == networks * expected
        per_net[regime] = counts[0]
    if kind == "ULA":
        assert per_net == {"overdamped": 0, "underdamped": 0}


@pytest.mark.parametrize("kind,regime,integrator", [
    ("DBS", "underdamped", "obabo"),
    ("DBS", "overdamped", "em"),
    ("DIS", "overdamped", "em"),
    ("MCD", "underdamped", "obab"),
    ("ULA", "overdamped", "em"),
])
def test_preconditioned_funnel_rollouts_stay_finite(kind, regime, integrator):
    spec = MethodSpec(kind=kind, regime=regime, integrator=integrator, precondition=True)
    params = init_params(spec, 10, 128, a=0.01, width=16)
    sim = simulate(spec, funnel(10), params, 128, seed=0, first_stream=0, batch=1000)
    assert np.all(np.isfinite(ad.value(sim.rnd)))
    assert np.all(np.isfinite(ad.value(sim.trajectory.final.x)))
