import math

import numpy as np
import pytest

from ctrldiffuse import rngs
from ctrldiffuse.diffusion import (CostEstimate, OuParams, SamplingScheme,
                                   const_model, discounted_cost_estimate,
                                   grid_policy, ou_exact_moments, ou_model,
                                   rollout, sample_transition,
                                   sample_transition_exact_ou,
                                   sample_transitions, step_euler,
                                   tail_horizon, validate_model, with_discount)
from ctrldiffuse.errors import ModelEvaluationError, ValidationError
from ctrldiffuse.grids import build_action_grid, build_uniform_state_grid

DOMAIN = (-2.0, 2.0)
ACTIONS = (-1.0, 1.0)


def make_ou(theta=1.0, sigma0=1.0, r=0.0, beta=1.0):
    return ou_model(OuParams(theta=theta, sigma0=sigma0, cost_weight_r=r),
                    DOMAIN, ACTIONS, beta=beta)


def test_step_euler_degenerate_dynamics():
    m = const_model(0.0, 0.0, 1.0, DOMAIN)
    assert step_euler(m, 0.3, 0.0, 0.1, 1.7) == 0.3


def test_step_euler_pure_drift():
    m = const_model(1.0, 0.0, 1.0, DOMAIN)
    assert step_euler(m, 0.0, 0.0, 0.1, 0.0) == pytest.approx(0.1, abs=1e-15)


def test_step_euler_ou_hand_value():
    m = make_ou(theta=1.0, sigma0=1.0)
    # 0 + (-1*0 + 0)*0.01 + 1*sqrt(0.01)*1 = 0.1
    assert step_euler(m, 0.0, 0.0, 0.01, 1.0) == pytest.approx(0.1, abs=1e-15)


def test_step_euler_clamps_to_domain():
    m = const_model(100.0, 0.0, 1.0, DOMAIN)
    assert step_euler(m, 1.9, 0.0, 1.0, 0.0) == 2.0


def test_step_euler_validation():
    m = make_ou()
    with pytest.raises(ValidationError):
        step_euler(m, 0.0, 0.0, -0.1, 0.0)
    bad = const_model(0.0, 0.0, 1.0, DOMAIN)
    object.__setattr__(bad, "drift", lambda x, u: math.inf)
    with pytest.raises(ModelEvaluationError):
        step_euler(bad, 0.0, 0.0, 0.1, 0.0)


def test_sample_transition_deterministic_fixed_point():
    m = const_model(0.0, 0.0, 1.0, DOMAIN)
    scheme = SamplingScheme(h=0.3, substeps_m=4, seed=0)
    g = np.random.default_rng(0)
    assert sample_transition(m, 0.7, 0.0, scheme, g) == 0.7


def test_sample_transition_brownian_with_drift_mean():
    # theta = 0: exact law is x + u*h + sigma0*sqrt(h)*Z for any substep count
    m = make_ou(theta=0.0, sigma0=1.0)
    scheme = SamplingScheme(h=0.25, substeps_m=4, seed=0)
    g = rngs.stream(17, rngs.PURPOSE_PAIR, 0)
    x0, u = -0.2, 0.8
    finals = sample_transitions(m, np.full(100_000, x0), u, scheme, g)
    want_mean = x0 + u * scheme.h
    se = finals.std(ddof=1) / math.sqrt(finals.size)
    assert abs(finals.mean() - want_mean) <= 4 * se


def test_sample_transition_ou_moments():
    theta, sigma0, h, x0 = 1.0, 1.0, 0.1, 0.5
    m = make_ou(theta=theta, sigma0=sigma0)
    scheme = SamplingScheme(h=h, substeps_m=64, seed=0)
    g = rngs.stream(23, rngs.PURPOSE_PAIR, 0)
    finals = sample_transitions(m, np.full(100_000, x0), 0.0, scheme, g)
    mean, var = ou_exact_moments(OuParams(theta, sigma0), x0, 0.0, h)
    assert mean == pytest.approx(x0 * math.exp(-0.1), abs=1e-12)
    assert var == pytest.approx((1 - math.exp(-0.2)) / 2, abs=1e-12)
    n = finals.size
    se_mean = finals.std(ddof=1) / math.sqrt(n)
    se_var = finals.var(ddof=1) * math.sqrt(2.0 / (n - 1))
    # 4-standard-error bands plus the (tiny) m=64 Euler bias
    assert abs(finals.mean() - mean) <= 4 * se_mean + 2e-4
    assert abs(finals.var(ddof=1) - var) <= 4 * se_var + 2e-4


def test_exact_ou_noiseless_limit():
    g = np.random.default_rng(0)
    v = sample_transition_exact_ou(OuParams(0.0, 1e-300), 1.0, 2.0, 0.5, g)
    assert v == pytest.approx(2.0, abs=1e-9)


def test_exact_ou_matches_brownian_limit():
    p0 = OuParams(0.0, 1.3)
    mean, var = ou_exact_moments(p0, 0.4, -0.5, 0.8)
    assert mean == pytest.approx(0.4 - 0.5 * 0.8, abs=1e-15)
    assert var == pytest.approx(1.3**2 * 0.8, abs=1e-15)


def test_exact_ou_pinned_mean():
    mean, _ = ou_exact_moments(OuParams(1.0, 1.0), 1.0, 0.0, 0.1)
    assert mean == pytest.approx(0.90483741803595957, abs=1e-15)


def test_euler_bias_halves_with_substeps():
    # deterministic part of the Euler chain: E X_{k+1} = E X_k (1-theta*d) + u*d
    theta, h, x0, u = 1.0, 0.2, 1.0, 0.3
    exact_mean, _ = ou_exact_moments(OuParams(theta, 1.0), x0, u, h)

    def euler_mean(m):
        d = h / m
        mean = x0
        for _ in range(m):
            mean = mean * (1 - theta * d) + u * d
        return mean

    b1 = abs(euler_mean(8) - exact_mean)
    b2 = abs(euler_mean(16) - exact_mean)
    assert 0.4 <= b2 / b1 <= 0.6
    # and the simulated mean matches the Euler-chain mean within noise
    m = make_ou(theta=theta, sigma0=0.5)
    g = rngs.stream(5, rngs.PURPOSE_PAIR, 0)
    finals = sample_transitions(m, np.full(200_000, x0), u,
                                SamplingScheme(h=h, substeps_m=8, seed=0), g)
    se = finals.std(ddof=1) / math.sqrt(finals.size)
    assert abs(finals.mean() - euler_mean(8)) <= 4 * se


def test_rollout_single_step_shape_and_determinism():
    m = make_ou(sigma0=0.5)
    scheme = SamplingScheme(h=0.2, substeps_m=4, seed=0)
    tr = rollout(m, lambda k, x: 0.0, 0.3, scheme, 1, np.random.default_rng(3))
    assert tr.sample_states.shape == (2,)
    assert tr.applied_actions.shape == (1,)
    assert tr.stage_costs.shape == (4,)


def test_rollout_frozen_dynamics_constant():
    m = const_model(0.0, 0.0, 2.0, DOMAIN)
    scheme = SamplingScheme(h=0.2, substeps_m=3, seed=0)
    tr = rollout(m, lambda k, x: 0.5, 0.4, scheme, 10, np.random.default_rng(1))
    assert (tr.sample_states == 0.4).all()
    assert (tr.stage_costs == 2.0).all()


def test_rollout_ou_lag_one_autocorrelation():
    # ensemble average of per-path lag-1 ACF of the sampled states
    theta, h = 1.0, 0.2
    m = make_ou(theta=theta, sigma0=0.5)
    scheme = SamplingScheme(h=h, substeps_m=16, seed=0)
    acfs = []
    for r in range(200):
        g = rngs.stream(99, rngs.PURPOSE_ROLLOUT, r)
        tr = rollout(m, lambda k, x: 0.0, 0.0, scheme, 100, g)
        s = tr.sample_states - tr.sample_states.mean()
        acfs.append(float(np.sum(s[1:] * s[:-1]) / np.sum(s * s)))
    acfs = np.array(acfs)
    se = acfs.std(ddof=1) / math.sqrt(acfs.size)
    # small per-path bias of the ACF estimator at K=100 is within the band
    assert abs(acfs.mean() - math.exp(-theta * h)) <= 4 * se + 0.03


def test_discounted_cost_zero_cost():
    m = const_model(0.5, 0.3, 0.0, DOMAIN)
    scheme = SamplingScheme(h=0.1, substeps_m=2, seed=7)
    est = discounted_cost_estimate(m, lambda k, x: 0.0, 0.0, scheme, 8, 20)
    assert est.estimate == 0.0 and est.std_error == 0.0


def test_discounted_cost_unit_cost_quadrature():
    # c == 1, sigma == 0: estimate -> (1 - e^{-beta*K*h})/beta within 2*delta*C
    beta, h, msub, k = 1.0, 0.1, 50, 100
    m = const_model(0.0, 0.0, 1.0, DOMAIN, beta=beta)
    scheme = SamplingScheme(h=h, substeps_m=msub, seed=7)
    est = discounted_cost_estimate(m, lambda k_, x: 0.0, 0.0, scheme, 2, k)
    want = (1 - math.exp(-beta * k * h)) / beta
    assert est.std_error == 0.0  # deterministic dynamics
    assert abs(est.estimate - want) <= 2 * scheme.delta * 1.0


def test_discounted_cost_tail_bound_value():
    m = const_model(0.0, 0.0, 1.0, DOMAIN, beta=1.0)
    scheme = SamplingScheme(h=0.1, substeps_m=1, seed=7)
    est = discounted_cost_estimate(m, lambda k, x: 0.0, 0.0, scheme, 1, 100)
    assert est.tail_bound == pytest.approx(4.5399929762484854e-05, rel=1e-12)


def test_discounted_cost_horizon_flag():
    m = const_model(0.0, 0.0, 1.0, DOMAIN, beta=1.0)
    scheme = SamplingScheme(h=0.1, substeps_m=1, seed=7)
    est = discounted_cost_estimate(m, lambda k, x: 0.0, 0.0, scheme, 1, 5,
                                   tail_tol=1e-6)
    assert not est.horizon_ok
    assert tail_horizon(m, 0.1, 1e-6) > 5


def test_discounted_cost_doubles_exactly_with_cost():
    scheme = SamplingScheme(h=0.2, substeps_m=4, seed=11)
    m1 = const_model(0.1, 0.4, 1.0, DOMAIN)
    m2 = const_model(0.1, 0.4, 2.0, DOMAIN)
    e1 = discounted_cost_estimate(m1, lambda k, x: 0.0, 0.5, scheme, 32, 30)
    e2 = discounted_cost_estimate(m2, lambda k, x: 0.0, 0.5, scheme, 32, 30)
    assert e2.estimate == 2.0 * e1.estimate  # exact, same noise per rollout


def test_seed_determinism_bit_identical():
    m = make_ou(sigma0=0.5, r=0.25)
    scheme = SamplingScheme(h=0.2, substeps_m=8, seed=123)
    tr1 = rollout(m, lambda k, x: 0.1, 0.5, scheme, 50, rngs.stream(123, 2, 0))
    tr2 = rollout(m, lambda k, x: 0.1, 0.5, scheme, 50, rngs.stream(123, 2, 0))
    assert np.array_equal(tr1.sample_states, tr2.sample_states)
    assert np.array_equal(tr1.stage_costs, tr2.stage_costs)


def test_states_stay_in_domain():
    m = make_ou(theta=0.0, sigma0=3.0)
    scheme = SamplingScheme(h=0.5, substeps_m=4, seed=0)
    g = rngs.stream(3, rngs.PURPOSE_PAIR, 0)
    finals = sample_transitions(m, np.full(20_000, 1.9), 1.0, scheme, g)
    assert finals.min() >= DOMAIN[0] and finals.max() <= DOMAIN[1]
    assert (finals == DOMAIN[1]).any()  # clamping actually engaged


def test_fast_and_generic_paths_agree_bitwise():
    # grid-policy batch kernel vs the per-rollout callable path
    m = make_ou(sigma0=0.5, r=0.25)
    sgrid = build_uniform_state_grid(-2.0, 2.0, 6)
    agrid = build_action_grid(-1.0, 1.0, 3)
    policy = np.array([2, 2, 1, 1, 0, 0])
    control = grid_policy(sgrid, agrid, policy)
    scheme = SamplingScheme(h=0.2, substeps_m=4, seed=31)
    fast = discounted_cost_estimate(m, control, 0.7, scheme, 40, 25)
    generic = discounted_cost_estimate(
        m, lambda k, x: control(k, x), 0.7, scheme, 40, 25)
    assert fast.estimate == generic.estimate
    assert fast.std_error == generic.std_error


def test_validate_model_accepts_builtins_and_rejects_liars():
    m = make_ou(sigma0=0.5, r=0.25)
    validate_model(m, ACTIONS)
    validate_model(const_model(0.3, 0.2, 1.5, DOMAIN), ACTIONS)
    liar = with_discount(m, 1.0)
    object.__setattr__(liar, "lipschitz_K", 0.5)  # true constant is 4
    with pytest.raises(ValidationError):
        validate_model(liar, ACTIONS)


def test_scheme_validation():
    with pytest.raises(ValidationError):
        SamplingScheme(h=0.0, substeps_m=1, seed=0)
    with pytest.raises(ValidationError):
        SamplingScheme(h=0.1, substeps_m=0, seed=0)
    with pytest.raises(ValidationError):
        OuParams(theta=-1.0, sigma0=1.0)


def test_cost_estimate_is_frozen_record():
    est = CostEstimate(estimate=1.0, std_error=0.1, tail_bound=0.0)
    assert est.horizon_ok
