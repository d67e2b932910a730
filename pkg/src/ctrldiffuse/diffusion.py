"""Controlled scalar diffusion models and their sampled simulation.

A model is dX = b(X,u) dt + sigma(X,u) dB with running cost c(X,u) and
discount beta, truncated to a closed interval. Transitions are simulated
with Euler substeps under actions frozen over each sampling interval;
discounted costs are estimated by Monte Carlo with a left-endpoint
quadrature at substep resolution.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import backend, rngs
from .errors import ModelEvaluationError, ValidationError
from .grids import ActionGrid, StateGrid, quantize_batch, quantize_state


@dataclass(frozen=True)
class DiffusionModel:
    """Dynamics, cost, and the declared constants they obey.

    ``bound_B`` bounds |b| and |sigma| uniformly, ``lipschitz_K`` is a joint
    Lipschitz constant of b, sigma and c in (x, u), ``cost_bound_C`` bounds
    |c|; all three are declared by the constructor and spot-checked by
    :func:`validate_model`. ``family`` is the compiled-kernel descriptor for
    built-in families (None for custom callables).
    """

    drift: Callable
    diffusion: Callable
    cost: Callable
    bound_B: float
    lipschitz_K: float
    cost_bound_C: float
    discount_beta: float
    domain: tuple[float, float]
    family: Optional[tuple[int, tuple[float, ...]]] = field(default=None)

    def __post_init__(self):
        lo, hi = self.domain
        if not lo < hi:
            raise ValidationError(f"empty domain: [{lo}, {hi}]")
        if self.discount_beta <= 0:
            raise ValidationError("discount rate must be positive")
        for name in ("bound_B", "lipschitz_K", "cost_bound_C"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")

    @property
    def x_min(self) -> float:
        return self.domain[0]

    @property
    def x_max(self) -> float:
        return self.domain[1]


@dataclass(frozen=True)
class OuParams:
    """Mean-reverting test family: b = -theta*x + u, constant noise sigma0,
    cost min(x^2 + r*u^2, cap)."""

    theta: float
    sigma0: float
    cost_weight_r: float = 0.0

    def __post_init__(self):
        if self.theta < 0:
            raise ValidationError("mean reversion must be nonnegative")
        if self.sigma0 <= 0:
            raise ValidationError("noise level must be positive")
        if self.cost_weight_r < 0:
            raise ValidationError("control cost weight must be nonnegative")


@dataclass(frozen=True)
class SamplingScheme:
    """Sampling interval h split into m Euler substeps, plus the master seed."""

    h: float
    substeps_m: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.h <= 0:
            raise ValidationError(f"sampling interval must be positive, got {self.h}")
        if self.substeps_m < 1:
            raise ValidationError(f"need at least one substep, got {self.substeps_m}")

    @property
    def delta(self) -> float:
        return self.h / self.substeps_m


@dataclass
class Trajectory:
    """One sampled path: states at sampling instants, the frozen actions,
    and the cost evaluations at every substep."""

    sample_states: np.ndarray     # K+1 entries
    applied_actions: np.ndarray   # K entries
    stage_costs: np.ndarray       # K*m entries (left endpoints)
    horizon_K: int

    def __post_init__(self):
        k = self.horizon_K
        if (self.sample_states.shape[0] != k + 1
                or self.applied_actions.shape[0] != k
                or self.stage_costs.shape[0] % k != 0):
            raise ValidationError("inconsistent trajectory lengths")


@dataclass(frozen=True)
class CostEstimate:
    """Monte Carlo discounted-cost estimate with its error diagnostics.

    ``tail_bound`` bounds the discarded infinite-horizon tail; ``horizon_ok``
    is False when that bound exceeds the requested tolerance.
    """

    estimate: float
    std_error: float
    tail_bound: float
    horizon_ok: bool = True
    n_rollouts: int = 0


class GridPolicy:
    """Piecewise-constant control source: quantize the sampled state, look up
    the action value for its bin."""

    def __init__(self, state_grid: StateGrid, action_values):
        self.state_grid = state_grid
        self.action_values = np.asarray(action_values, dtype=np.float64)
        if self.action_values.shape[0] != state_grid.size:
            raise ValidationError("one action value per grid point required")

    def __call__(self, k: int, x: float) -> float:
        return float(self.action_values[quantize_state(self.state_grid, x)])


def grid_policy(state_grid: StateGrid, action_grid: ActionGrid,
                policy_indices) -> GridPolicy:
    """Bind a state-index -> action-index policy to concrete action values."""
    idx = np.asarray(policy_indices, dtype=np.int64)
    if idx.shape[0] != state_grid.size:
        raise ValidationError("policy must cover every state")
    if idx.min() < 0 or idx.max() >= action_grid.size:
        raise ValidationError("policy indexes actions outside the grid")
    return GridPolicy(state_grid, action_grid.points[idx])


def ou_model(params: OuParams, domain: tuple[float, float],
             action_range: tuple[float, float],
             beta: float = 1.0) -> DiffusionModel:
    """Wrap the mean-reverting family with constants derived from the
    truncated domain and the action interval."""
    x_abs = max(abs(domain[0]), abs(domain[1]))
    u_abs = max(abs(action_range[0]), abs(action_range[1]))
    theta, s0, r = params.theta, params.sigma0, params.cost_weight_r
    cap = x_abs * x_abs + r * u_abs * u_abs
    bound_b = max(theta * x_abs + u_abs, s0)
    lip = max(theta, 1.0, 2.0 * x_abs, 2.0 * r * u_abs)
    return DiffusionModel(
        drift=lambda x, u: -theta * x + u,
        diffusion=lambda x, u: s0,
        cost=lambda x, u: np.minimum(x * x + r * u * u, cap),
        bound_B=bound_b,
        lipschitz_K=lip,
        cost_bound_C=cap,
        discount_beta=beta,
        domain=domain,
        family=(backend.FAMILY_OU, (theta, s0, r, cap)),
    )


def with_discount(model: DiffusionModel, beta: float) -> DiffusionModel:
    """Copy of the model with a different discount rate."""
    return DiffusionModel(
        drift=model.drift, diffusion=model.diffusion, cost=model.cost,
        bound_B=model.bound_B, lipschitz_K=model.lipschitz_K,
        cost_bound_C=model.cost_bound_C, discount_beta=beta,
        domain=model.domain, family=model.family,
    )


def const_model(b0: float, s0: float, c0: float, domain: tuple[float, float],
                beta: float = 1.0) -> DiffusionModel:
    """Constant-coefficient family; handy for exact-answer tests."""
    if c0 < 0:
        raise ValidationError("cost must be nonnegative")
    return DiffusionModel(
        drift=lambda x, u: b0 + 0.0 * x,
        diffusion=lambda x, u: s0,
        cost=lambda x, u: c0 + 0.0 * x,
        bound_B=max(abs(b0), abs(s0)) or 1.0,
        lipschitz_K=1e-12,  # constants are 0-Lipschitz; keep the field positive
        cost_bound_C=c0 or 1.0,
        discount_beta=beta,
        domain=domain,
        family=(backend.FAMILY_CONST, (b0, s0, c0)),
    )


def _eval_on(fn, x, u):
    """Evaluate a model callable on arrays, broadcasting scalar returns."""
    x = np.asarray(x, dtype=np.float64)
    out = np.asarray(fn(x, u), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ModelEvaluationError("model callable returned a non-finite value")
    return np.broadcast_to(out, np.broadcast(x, np.asarray(u)).shape)


def validate_model(model: DiffusionModel, action_range: tuple[float, float],
                   n_grid: int = 201, slack: float = 0.01) -> None:
    """Spot-check the declared constants on a dense (x, u) grid.

    Bounds are checked exactly; sampled difference quotients may exceed the
    declared Lipschitz constant by at most ``slack`` (relative).
    """
    xs = np.linspace(model.x_min, model.x_max, n_grid)
    us = np.linspace(action_range[0], action_range[1], n_grid)
    xg, ug = np.meshgrid(xs, us, indexing="ij")
    b = _eval_on(model.drift, xg, ug)
    s = _eval_on(model.diffusion, xg, ug)
    c = _eval_on(model.cost, xg, ug)
    if np.abs(b).max() > model.bound_B or np.abs(s).max() > model.bound_B:
        raise ValidationError("drift or noise exceeds the declared bound B")
    if np.abs(c).max() > model.cost_bound_C:
        raise ValidationError("cost exceeds the declared bound C")
    if c.min() < 0:
        raise ValidationError("cost must be nonnegative")
    kmax = model.lipschitz_K * (1.0 + slack)
    dx = xs[1] - xs[0]
    du = us[1] - us[0]
    for arr in (b, s, c):
        qx = np.abs(np.diff(arr, axis=0)).max() / dx
        qu = np.abs(np.diff(arr, axis=1)).max() / du
        if max(qx, qu) > kmax:
            raise ValidationError(
                "sampled difference quotient exceeds the declared Lipschitz "
                f"constant: {max(qx, qu):.6g} > {kmax:.6g}"
            )


def step_euler(model: DiffusionModel, x: float, u: float, delta: float,
               z: float) -> float:
    """One Euler increment, clamped to the domain (the truncation policy)."""
    if delta <= 0:
        raise ValidationError(f"substep must be positive, got {delta}")
    b = float(model.drift(x, u))
    s = float(model.diffusion(x, u))
    out = (x + b * delta) + (s * math.sqrt(delta)) * z
    if not math.isfinite(out):
        raise ModelEvaluationError(
            f"non-finite Euler step at x={x}, u={u}", x=x, u=u)
    return min(max(out, model.x_min), model.x_max)


def _evolve_generic(model: DiffusionModel, x0, u, normals, delta: float):
    """Fallback chain evolution for models without a compiled family."""
    x = np.array(x0, dtype=np.float64, copy=True)
    sq = math.sqrt(delta)
    lo, hi = model.domain
    for j in range(normals.shape[1]):
        b = _eval_on(model.drift, x, u)
        s = _eval_on(model.diffusion, x, u)
        x = (x + b * delta) + (s * sq) * normals[:, j]
        x = np.minimum(np.maximum(x, lo), hi)
    if not np.all(np.isfinite(x)):
        raise ModelEvaluationError("non-finite state during evolution")
    return x


def evolve_states(model: DiffusionModel, x0, u, normals, delta: float):
    """Evolve n chains for m substeps under frozen actions.

    ``x0`` and ``u`` are (n,) arrays (scalars broadcast), ``normals`` is
    (n, m). Dispatches to the compiled kernel for built-in families.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    normals = np.asarray(normals, dtype=np.float64)
    u_arr = np.broadcast_to(np.asarray(u, dtype=np.float64), x0.shape)
    if model.family is not None:
        code, fp = model.family
        return backend.evolve_batch(code, np.asarray(fp), x0,
                                    np.ascontiguousarray(u_arr), normals,
                                    delta, model.x_min, model.x_max)
    return _evolve_generic(model, x0, u_arr, normals, delta)


def sample_transition(model: DiffusionModel, x: float, u: float,
                      scheme: SamplingScheme, rng: np.random.Generator) -> float:
    """Draw the state one sampling interval ahead under a frozen action."""
    if not model.x_min <= x <= model.x_max:
        raise ValidationError(f"initial state {x} outside the domain")
    z = rng.standard_normal((1, scheme.substeps_m))
    return float(evolve_states(model, [x], u, z, scheme.delta)[0])


def sample_transitions(model: DiffusionModel, x0s, u: float,
                       scheme: SamplingScheme, rng: np.random.Generator):
    """Vector version of :func:`sample_transition` with one shared action."""
    x0s = np.asarray(x0s, dtype=np.float64)
    z = rng.standard_normal((x0s.shape[0], scheme.substeps_m))
    return evolve_states(model, x0s, u, z, scheme.delta)


def ou_exact_moments(params: OuParams, x: float, u: float, h: float):
    """Mean and variance of the exact transition law of the untruncated
    mean-reverting family."""
    th = params.theta
    if th == 0.0:
        return x + u * h, params.sigma0**2 * h
    decay = math.exp(-th * h)
    mean = x * decay + (u / th) * (1.0 - decay)
    var = params.sigma0**2 * (1.0 - math.exp(-2.0 * th * h)) / (2.0 * th)
    return mean, var


def sample_transition_exact_ou(params: OuParams, x: float, u: float, h: float,
                               rng: np.random.Generator) -> float:
    """Exact Gaussian transition draw; the oracle the Euler scheme must match."""
    if h <= 0:
        raise ValidationError(f"sampling interval must be positive, got {h}")
    mean, var = ou_exact_moments(params, x, u, h)
    return mean + math.sqrt(var) * rng.standard_normal()


def rollout(model: DiffusionModel, control, x0: float, scheme: SamplingScheme,
            horizon_K: int, rng: np.random.Generator) -> Trajectory:
    """Simulate one path under a piecewise-constant control source.

    ``control(k, x)`` returns the action value frozen over the k-th interval;
    costs are evaluated at every substep state with that frozen action.
    """
    if horizon_K < 1:
        raise ValidationError(f"horizon must be at least 1, got {horizon_K}")
    m = scheme.substeps_m
    delta = scheme.delta
    states = np.empty(horizon_K + 1)
    actions = np.empty(horizon_K)
    costs = np.empty(horizon_K * m)
    x = float(x0)
    states[0] = x
    for k in range(horizon_K):
        u = float(control(k, x))
        actions[k] = u
        z = rng.standard_normal(m)
        for j in range(m):
            costs[k * m + j] = float(model.cost(x, u))
            x = step_euler(model, x, u, delta, z[j])
        states[k + 1] = x
    return Trajectory(sample_states=states, applied_actions=actions,
                      stage_costs=costs, horizon_K=horizon_K)


def tail_horizon(model: DiffusionModel, h: float, tail_tol: float = 1e-6) -> int:
    """Smallest K with discarded-tail bound C*exp(-beta*K*h)/beta <= tail_tol."""
    beta = model.discount_beta
    target = model.cost_bound_C / (beta * tail_tol)
    if target <= 1.0:
        return 1
    return max(1, math.ceil(math.log(target) / (beta * h)))


def _discount_factors(beta: float, delta: float, total: int) -> np.ndarray:
    return np.exp(-beta * delta * np.arange(total))


_ROLLOUT_BATCH = 512


def discounted_cost_estimate(model: DiffusionModel, control, x0: float,
                             scheme: SamplingScheme, n_rollouts: int,
                             horizon_K: int, base_seed: Optional[int] = None,
                             tail_tol: Optional[float] = None) -> CostEstimate:
    """Average the discounted substep quadrature over independent rollouts.

    Each rollout owns the derived stream (seed, rollout-index), so estimates
    are independent of batching and execution order. The reported estimate
    excludes the infinite tail; its bound is returned separately.
    """
    if n_rollouts < 1:
        raise ValidationError(f"need at least one rollout, got {n_rollouts}")
    if horizon_K < 1:
        raise ValidationError(f"horizon must be at least 1, got {horizon_K}")
    seed = scheme.seed if base_seed is None else base_seed
    m = scheme.substeps_m
    delta = scheme.delta
    beta = model.discount_beta
    total = horizon_K * m
    disc = _discount_factors(beta, delta, total)
    lo, hi = model.domain

    fast = model.family is not None and isinstance(control, GridPolicy)
    costs = np.empty(n_rollouts)
    if fast:
        code, fp = model.family
        fpa = np.asarray(fp)
        points = control.state_grid.points
        pol = control.action_values
        for start in range(0, n_rollouts, _ROLLOUT_BATCH):
            stop = min(start + _ROLLOUT_BATCH, n_rollouts)
            normals = np.empty((stop - start, total))
            for r in range(start, stop):
                g = rngs.stream(seed, rngs.PURPOSE_ROLLOUT, r)
                normals[r - start] = g.standard_normal(total)
            x0s = np.full(stop - start, float(x0))
            c, _ = backend.rollout_cost_batch(code, fpa, x0s, pol, points, m,
                                              normals, disc, delta, lo, hi)
            costs[start:stop] = c
    else:
        for r in range(n_rollouts):
            g = rngs.stream(seed, rngs.PURPOSE_ROLLOUT, r)
            x = float(x0)
            acc = 0.0
            for k in range(horizon_K):
                u = float(control(k, x))
                z = g.standard_normal(m)
                for j in range(m):
                    t = k * m + j
                    sc = float(model.cost(x, u))
                    acc = acc + disc[t] * (sc * delta)
                    x = step_euler(model, x, u, delta, z[j])
            costs[r] = acc

    estimate = float(np.mean(costs))
    se = float(np.std(costs, ddof=1) / math.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    tail = model.cost_bound_C * math.exp(-beta * horizon_K * scheme.h) / beta
    ok = True if tail_tol is None else tail <= tail_tol
    return CostEstimate(estimate=estimate, std_error=se, tail_bound=tail,
                        horizon_ok=ok, n_rollouts=n_rollouts)
