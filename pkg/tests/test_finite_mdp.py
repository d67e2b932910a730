import math

import numpy as np
import pytest

from ctrldiffuse.diffusion import OuParams, SamplingScheme, const_model, ou_model
from ctrldiffuse.errors import NonConvergenceError, ValidationError
from ctrldiffuse.finite_mdp import (FiniteMdp, QMatrix, bellman_backup,
                                    bellman_residual, estimate_finite_mdp,
                                    evaluate_mdp_policy, greedy_policy,
                                    q_value_iteration, random_ergodic_mdp)
from ctrldiffuse.grids import build_action_grid, build_uniform_state_grid
from ctrldiffuse.serialize import load_mdp, save_mdp


def two_state_mdp(beta_h=0.9):
    """Fixed 2-state/2-action table used against the brute-force oracle."""
    kernel = np.array([
        [[0.9, 0.1], [0.2, 0.8]],
        [[0.3, 0.7], [0.6, 0.4]],
    ])
    cost = np.array([[1.0, 0.5], [0.25, 2.0]])
    return FiniteMdp(kernel=kernel, cost=cost, beta_h=beta_h, n_samples=0)


def bruteforce_fixed_point(mdp):
    """Independent oracle: plain-loop synchronous sweeps to bit-stability
    (the millionth sweep at double precision)."""
    m, n = mdp.cost.shape
    q = [[0.0] * n for _ in range(m)]
    while True:
        vmin = [min(row) for row in q]
        nxt = [[mdp.cost[i][a]
                + mdp.beta_h * sum(mdp.kernel[i][a][j] * vmin[j]
                                   for j in range(m))
                for a in range(n)] for i in range(m)]
        if nxt == q:
            return np.array(q)
        q = nxt


def test_frozen_dynamics_gives_identity_kernel():
    m = const_model(0.0, 0.0, 1.0, (-1.0, 1.0))
    sg = build_uniform_state_grid(-1.0, 1.0, 5)
    ag = build_action_grid(-1.0, 1.0, 2)
    mdp = estimate_finite_mdp(m, sg, ag, SamplingScheme(h=0.2, seed=3), 100)
    for a in range(2):
        assert np.array_equal(mdp.kernel[:, a, :], np.eye(5))


def test_unit_cost_rows_equal_h():
    m = const_model(0.1, 0.2, 1.0, (-1.0, 1.0))
    sg = build_uniform_state_grid(-1.0, 1.0, 4)
    ag = build_action_grid(-1.0, 1.0, 3)
    mdp = estimate_finite_mdp(m, sg, ag, SamplingScheme(h=0.2, seed=3), 200)
    assert np.allclose(mdp.cost, 0.2, atol=1e-15)
    mdp.validate()


def test_estimated_kernel_rows_are_distributions():
    m = ou_model(OuParams(1.0, 0.5, 0.25), (-2, 2), (-1, 1))
    sg = build_uniform_state_grid(-2, 2, 8)
    ag = build_action_grid(-1, 1, 3)
    mdp = estimate_finite_mdp(m, sg, ag, SamplingScheme(h=0.2, substeps_m=8, seed=5), 500)
    mdp.validate()
    assert np.abs(mdp.kernel.sum(axis=2) - 1.0).max() <= 1e-9
    assert (mdp.cost >= 0).all() and (mdp.cost <= 0.2 * m.cost_bound_C).all()
    assert mdp.beta_h == pytest.approx(math.exp(-0.2), abs=1e-15)


def test_bincount_aggregation_is_order_free():
    # permuting the draws permutes landing bins but not the counted row
    g = np.random.default_rng(0)
    idx = g.integers(0, 7, size=5000)
    row = np.bincount(idx, minlength=7) / idx.size
    perm = g.permutation(idx)
    assert np.array_equal(row, np.bincount(perm, minlength=7) / idx.size)


def test_value_iteration_single_state_geometric_series():
    mdp = FiniteMdp(kernel=np.ones((1, 1, 1)), cost=np.array([[1.0]]),
                    beta_h=0.5, n_samples=0)
    q = q_value_iteration(mdp, tol=1e-10)
    assert q.values[0, 0] == pytest.approx(2.0, abs=1e-9)


def test_value_iteration_zero_cost():
    mdp = FiniteMdp(kernel=np.ones((1, 2, 1)) * np.array([[[1.0]], [[1.0]]]).reshape(1, 2, 1),
                    cost=np.zeros((1, 2)), beta_h=0.9, n_samples=0)
    q = q_value_iteration(mdp, tol=1e-12)
    assert (q.values == 0).all()


def test_value_iteration_matches_bruteforce_oracle():
    mdp = two_state_mdp()
    want = bruteforce_fixed_point(mdp)
    got = q_value_iteration(mdp, tol=1e-9)
    assert np.abs(got.values - want).max() <= 1e-8


def test_value_iteration_contraction_per_sweep():
    mdp = two_state_mdp()
    q = np.zeros_like(mdp.cost)
    prev_delta = None
    for _ in range(60):
        nxt = bellman_backup(mdp, q)
        delta = np.abs(nxt - q).max()
        if prev_delta is not None and prev_delta > 0:
            assert delta <= mdp.beta_h * prev_delta * (1 + 1e-12) + 1e-300
        prev_delta = delta
        q = nxt


def test_value_iteration_nonconvergence_error():
    mdp = two_state_mdp()
    with pytest.raises(NonConvergenceError) as exc:
        q_value_iteration(mdp, tol=1e-12, max_iter=3)
    assert exc.value.last_delta > 0


def test_greedy_policy_ties_and_argmin():
    q = QMatrix(values=np.array([[1.0, 1.0, 1.0], [3.0, 1.0, 2.0]]))
    assert greedy_policy(q).tolist() == [0, 1]
    shifted = QMatrix(values=q.values + 5.0)
    assert greedy_policy(shifted).tolist() == [0, 1]


def test_bellman_residual_examples():
    mdp = two_state_mdp()
    q = q_value_iteration(mdp, tol=1e-6)
    assert bellman_residual(mdp, q) <= 2e-6
    zero = QMatrix(values=np.zeros((2, 2)))
    flat = FiniteMdp(kernel=mdp.kernel, cost=np.full((2, 2), 0.25),
                     beta_h=mdp.beta_h, n_samples=0)
    assert bellman_residual(flat, zero) == pytest.approx(0.25, abs=1e-15)


def test_residual_perturbation_sensitivity():
    mdp = two_state_mdp()
    qstar = q_value_iteration(mdp, tol=1e-12).values
    base = bellman_residual(mdp, QMatrix(values=qstar))
    for eps in (1e-3, 1e-2, 0.1):
        pert = qstar.copy()
        pert[0, 1] += eps
        res = bellman_residual(mdp, QMatrix(values=pert))
        assert res - base <= (1 + mdp.beta_h) * eps + 1e-12


def test_evaluate_policy_single_state():
    mdp = FiniteMdp(kernel=np.ones((1, 1, 1)), cost=np.array([[0.7]]),
                    beta_h=0.8, n_samples=0)
    j = evaluate_mdp_policy(mdp, np.array([0]))
    assert j[0] == pytest.approx(0.7 / 0.2, abs=1e-12)


def test_evaluate_policy_zero_cost():
    mdp = two_state_mdp()
    zero = FiniteMdp(kernel=mdp.kernel, cost=np.zeros((2, 2)),
                     beta_h=0.9, n_samples=0)
    assert np.allclose(evaluate_mdp_policy(zero, np.array([0, 1])), 0.0)


def test_evaluate_policy_matches_series_oracle():
    mdp = two_state_mdp()
    policy = np.array([1, 0])
    got = evaluate_mdp_policy(mdp, policy)
    # truncated geometric series; beta^5000 is zero at double precision,
    # so this equals the million-term sum exactly
    rows = np.arange(2)
    p = mdp.kernel[rows, policy]
    c = mdp.cost[rows, policy]
    acc = np.zeros(2)
    disc = np.ones(2)
    dist = np.eye(2)
    for _ in range(5000):
        acc = acc + dist @ c * disc[0]
        dist = dist @ p
        disc *= mdp.beta_h
    assert np.abs(got - acc).max() <= 1e-8


def test_greedy_policy_value_matches_row_min():
    mdp = two_state_mdp()
    q = q_value_iteration(mdp, tol=1e-10)
    pol = greedy_policy(q)
    j = evaluate_mdp_policy(mdp, pol)
    assert np.abs(j - q.values.min(axis=1)).max() <= 2e-10


def test_cost_monotonicity_of_fixed_point():
    mdp = two_state_mdp()
    base = q_value_iteration(mdp, tol=1e-10).values
    bumped = FiniteMdp(kernel=mdp.kernel, cost=mdp.cost + np.array([[0.3, 0], [0, 0]]),
                       beta_h=mdp.beta_h, n_samples=0)
    up = q_value_iteration(bumped, tol=1e-10).values
    assert (up >= base - 1e-9).all()


def test_validate_rejects_bad_kernels():
    bad = FiniteMdp(kernel=np.array([[[0.6, 0.3]]]), cost=np.array([[1.0]]),
                    beta_h=0.9, n_samples=0)
    with pytest.raises(ValidationError):
        bad.validate()
    neg = FiniteMdp(kernel=np.array([[[1.2, -0.2]]]), cost=np.array([[1.0]]),
                    beta_h=0.9, n_samples=0)
    with pytest.raises(ValidationError):
        neg.validate()


def test_policy_validation():
    mdp = two_state_mdp()
    with pytest.raises(ValidationError):
        evaluate_mdp_policy(mdp, np.array([0]))
    with pytest.raises(ValidationError):
        evaluate_mdp_policy(mdp, np.array([0, 5]))


def test_mdp_container_roundtrip_bit_exact(tmp_path):
    mdp = random_ergodic_mdp(4, 3, 0.85, seed=10)
    path = tmp_path / "mdp.bin"
    save_mdp(path, mdp)
    back = load_mdp(path)
    assert np.array_equal(back.kernel, mdp.kernel)
    assert np.array_equal(back.cost, mdp.cost)
    assert back.beta_h == mdp.beta_h and back.n_samples == mdp.n_samples
    # identical write twice: byte-identical container
    p2 = tmp_path / "mdp2.bin"
    save_mdp(p2, mdp)
    assert path.read_bytes() == p2.read_bytes()
