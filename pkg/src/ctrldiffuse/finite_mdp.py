"""Finite MDP built from the sampled diffusion by state aggregation.

Transition rows and costs are Monte Carlo averages over bin-uniform starting
points (the normalized weighting measure); the resulting model is solved
exactly by contraction iteration and serves as the oracle the learner must
reach.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import rngs
from .diffusion import DiffusionModel, SamplingScheme, evolve_states, _eval_on
from .errors import ExplorationWarning, NonConvergenceError, ValidationError
from .grids import ActionGrid, StateGrid, quantize_batch

KERNEL_ROW_SUM_TOL = 1e-9


@dataclass
class FiniteMdp:
    """Estimated aggregate model: kernel[i, a, j], cost[i, a], per-step
    discount beta_h, and the draw count behind each (i, a) row."""

    kernel: np.ndarray
    cost: np.ndarray
    beta_h: float
    n_samples: int

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[1]

    def validate(self) -> None:
        if not 0.0 < self.beta_h < 1.0:
            raise ValidationError(f"per-step discount must be in (0,1), got {self.beta_h}")
        if self.kernel.min() < 0:
            raise ValidationError("kernel entries must be nonnegative")
        rowsum = self.kernel.sum(axis=2)
        if np.abs(rowsum - 1.0).max() > KERNEL_ROW_SUM_TOL:
            raise ValidationError("kernel rows must sum to one")
        if self.cost.min() < 0:
            raise ValidationError("cost entries must be nonnegative")


@dataclass
class QMatrix:
    values: np.ndarray


def estimate_finite_mdp(model: DiffusionModel, state_grid: StateGrid,
                        action_grid: ActionGrid, scheme: SamplingScheme,
                        n_samples_per_pair: int,
                        base_seed: int | None = None) -> FiniteMdp:
    """Estimate kernel rows and costs pair by pair.

    Each (state, action) pair draws starting points uniformly from its bin
    with its own derived stream, simulates one sampling interval, and counts
    landing bins; costs average c(start, action)*h over the same draws.
    Results are independent of pair execution order.
    """
    if n_samples_per_pair < 1:
        raise ValidationError("need at least one draw per pair")
    seed = scheme.seed if base_seed is None else base_seed
    m_states = state_grid.size
    n_actions = action_grid.size
    kernel = np.empty((m_states, n_actions, m_states))
    cost = np.empty((m_states, n_actions))
    edges = state_grid.bin_edges
    n = n_samples_per_pair
    h = scheme.h
    for i in range(m_states):
        lo, hi = edges[i], edges[i + 1]
        width = hi - lo
        for a in range(n_actions):
            g = rngs.stream(seed, rngs.PURPOSE_PAIR, i * n_actions + a)
            x0 = lo + g.random(n) * width
            u = float(action_grid.points[a])
            finals = evolve_states(model, x0, u,
                                   g.standard_normal((n, scheme.substeps_m)),
                                   scheme.delta)
            idx = quantize_batch(state_grid, finals)
            kernel[i, a] = np.bincount(idx, minlength=m_states) / n
            cost[i, a] = np.mean(_eval_on(model.cost, x0, u)) * h
    never_hit = np.flatnonzero(kernel.sum(axis=(0, 1)) == 0.0)
    if never_hit.size:
        warnings.warn(
            f"{never_hit.size} grid bins were never reached by any estimated "
            f"transition (first: {never_hit[:5].tolist()})", ExplorationWarning)
    beta_h = math.exp(-model.discount_beta * h)
    return FiniteMdp(kernel=kernel, cost=cost, beta_h=beta_h, n_samples=n)


def bellman_backup(mdp: FiniteMdp, q_values: np.ndarray) -> np.ndarray:
    """One synchronous sweep of the optimality operator."""
    v = q_values.min(axis=1)
    m, n = mdp.cost.shape
    pv = (mdp.kernel.reshape(m * n, m) @ v).reshape(m, n)
    return mdp.cost + mdp.beta_h * pv


def q_value_iteration(mdp: FiniteMdp, tol: float = 1e-8,
                      max_iter: int = 100_000) -> QMatrix:
    """Iterate the optimality operator to within sup-distance tol of the
    fixed point (contraction stopping rule)."""
    if tol <= 0:
        raise ValidationError(f"tolerance must be positive, got {tol}")
    beta_h = mdp.beta_h
    threshold = tol * (1.0 - beta_h) / (2.0 * beta_h)
    q = np.zeros_like(mdp.cost)
    for _ in range(max_iter):
        q_next = bellman_backup(mdp, q)
        delta = float(np.abs(q_next - q).max())
        q = q_next
        if delta <= threshold:
            return QMatrix(values=q)
    raise NonConvergenceError(
        f"value iteration did not reach {threshold:g} in {max_iter} sweeps",
        last_delta=delta)


def greedy_policy(q: QMatrix) -> np.ndarray:
    """Per-state argmin over actions; ties go to the lower action index."""
    return np.argmin(q.values, axis=1).astype(np.int64)


def bellman_residual(mdp: FiniteMdp, q: QMatrix) -> float:
    """Sup-norm distance of q from one application of the optimality operator."""
    return float(np.abs(q.values - bellman_backup(mdp, q.values)).max())


def evaluate_mdp_policy(mdp: FiniteMdp, policy: np.ndarray) -> np.ndarray:
    """Exact discounted value of a stationary policy on the finite model."""
    policy = np.asarray(policy, dtype=np.int64)
    m = mdp.n_states
    if policy.shape[0] != m:
        raise ValidationError("policy must cover every state")
    if policy.min() < 0 or policy.max() >= mdp.n_actions:
        raise ValidationError("policy indexes actions outside the model")
    rows = np.arange(m)
    p_gamma = mdp.kernel[rows, policy]
    c_gamma = mdp.cost[rows, policy]
    a = np.eye(m) - mdp.beta_h * p_gamma
    try:
        return np.linalg.solve(a, c_gamma)
    except np.linalg.LinAlgError as exc:  # unreachable for beta_h < 1
        raise NonConvergenceError(f"singular policy system: {exc}",
                                  last_delta=math.nan)


def random_ergodic_mdp(n_states: int, n_actions: int, beta_h: float,
                       seed: int, cost_low: float = 0.0,
                       cost_high: float = 1.0) -> FiniteMdp:
    """Random strictly-positive-kernel model; every policy is ergodic."""
    g = np.random.default_rng(seed)
    kernel = g.uniform(0.1, 1.0, (n_states, n_actions, n_states))
    kernel /= kernel.sum(axis=2, keepdims=True)
    cost = g.uniform(cost_low, cost_high, (n_states, n_actions))
    return FiniteMdp(kernel=kernel, cost=cost, beta_h=beta_h,
                     n_samples=0)
