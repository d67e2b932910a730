"""Asynchronous tabular Q-learning on the sampled, quantized diffusion.

One continuous exploration trajectory; actions drawn uniformly from the
finite action set at every sampling instant; visit-count learning rates
1/(1+n). The same update loop can run against an explicit finite model,
which isolates stochastic-approximation convergence from simulation.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backend, rngs
from .diffusion import DiffusionModel, SamplingScheme, _eval_on, step_euler
from .errors import ExplorationWarning, ValidationError
from .finite_mdp import FiniteMdp, QMatrix, bellman_residual
from .grids import ActionGrid, StateGrid, quantize_state

CHUNK_STEPS = 1 << 16


class ExplorationError(RuntimeError):
    """Exploration terminated with state-action pairs never visited."""


@dataclass
class QTable:
    """Live learner state: table values plus per-pair visit counts."""

    values: np.ndarray
    visits: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def make_qtable(n_states: int, n_actions: int, q_init: float = 0.0) -> QTable:
    return QTable(values=np.full((n_states, n_actions), float(q_init)),
                  visits=np.zeros((n_states, n_actions), dtype=np.int64))


@dataclass(frozen=True)
class LearnConfig:
    """Exploration run length and diagnostics knobs.

    Exploration is uniform over the action grid. ``cost_from_raw_state``
    keeps the cost realization evaluated at the unquantized sampled state
    (the faithful form); switching it off is the aggregation ablation.
    ``reference_q`` enables sup-distance diagnostics at checkpoints.
    """

    total_steps: int
    q_init: float = 0.0
    burn_in: int = 0
    reference_q: Optional[np.ndarray] = field(default=None)
    cost_from_raw_state: bool = True

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValidationError("need at least one learning step")
        if self.burn_in < 0:
            raise ValidationError("burn-in must be nonnegative")


@dataclass
class LearnHistory:
    """Checkpoint diagnostics on a geometric schedule.

    ``value_min``/``value_max`` track the running envelope of every table
    value seen so far (including the initial fill), which is what the
    boundedness invariant is asserted against.
    """

    steps: np.ndarray
    sup_dist: np.ndarray
    residual: np.ndarray
    min_visits: np.ndarray
    value_min: np.ndarray
    value_max: np.ndarray
    unvisited_pairs: int = 0


def learning_rate(visits_at_pair: int) -> float:
    """Visit-count schedule 1/(1+n); the first update replaces the entry."""
    if visits_at_pair < 0:
        raise ValidationError("visit count must be nonnegative")
    return 1.0 / (1.0 + visits_at_pair)


def q_update(q: QTable, i: int, a: int, cost_realization: float,
             next_i: int, beta_h: float) -> float:
    """Apply one tabular update at (i, a); returns the new entry value."""
    target = cost_realization + beta_h * float(q.values[next_i].min())
    if not math.isfinite(target):
        raise ValidationError(
            f"non-finite update target at ({i}, {a}): {target}")
    alpha = learning_rate(int(q.visits[i, a]))
    newv = (1.0 - alpha) * float(q.values[i, a]) + alpha * target
    q.values[i, a] = newv
    q.visits[i, a] += 1
    return newv


def greedy_from_table(q: QTable) -> np.ndarray:
    """Greedy policy from a learned table, ignoring never-visited entries.

    Unvisited entries still hold the initial fill, not estimates, and with
    nonnegative costs the zero init makes them spuriously attractive to a
    plain argmin. States with no visited action at all fall back to the
    lowest action index (no information either way).
    """
    masked = np.where(q.visits > 0, q.values, np.inf)
    policy = np.argmin(masked, axis=1).astype(np.int64)
    none_visited = ~(q.visits > 0).any(axis=1)
    policy[none_visited] = 0
    return policy


def checkpoint_steps(total_steps: int) -> list[int]:
    """Geometric checkpoint schedule: powers of two, plus the final step."""
    steps = []
    s = 1
    while s < total_steps:
        steps.append(s)
        s *= 2
    steps.append(total_steps)
    return steps


def _qlearn_generic_chunk(model, points, act_values, q, visits, x, a_idx,
                          normals, delta, h, beta_h, raw_cost, env_min,
                          env_max, grid: StateGrid):
    """Callable-model twin of the kernel chunk (slow path)."""
    steps, m = normals.shape
    for k in range(steps):
        i = quantize_state(grid, x)
        a = int(a_idx[k])
        u = float(act_values[a])
        xc = x if raw_cost else float(points[i])
        cost_r = float(_eval_on(model.cost, np.array([xc]), u)[0]) * h
        for j in range(m):
            x = step_euler(model, x, u, delta, float(normals[k, j]))
        inext = quantize_state(grid, x)
        mn = float(q[inext].min())
        alpha = 1.0 / (1.0 + float(visits[i, a]))
        newv = (1.0 - alpha) * float(q[i, a]) + alpha * (cost_r + beta_h * mn)
        q[i, a] = newv
        visits[i, a] += 1
        env_min = min(env_min, newv)
        env_max = max(env_max, newv)
    return x, env_min, env_max


def _segments(total_steps: int):
    """Chunk boundaries aligned with the checkpoint schedule."""
    marks = checkpoint_steps(total_steps)
    prev = 0
    for mark in marks:
        start = prev
        while start < mark:
            stop = min(start + CHUNK_STEPS, mark)
            yield start, stop, stop == mark
            start = stop
        prev = mark


def run_q_learning(model: DiffusionModel, state_grid: StateGrid,
                   action_grid: ActionGrid, scheme: SamplingScheme,
                   config: LearnConfig, base_seed: Optional[int] = None,
                   x0: Optional[float] = None,
                   reference_mdp: Optional[FiniteMdp] = None
                   ) -> tuple[QTable, LearnHistory]:
    """Learn along a single exploration trajectory of the diffusion.

    Per step: quantize the sampled state, hold a uniformly random action over
    the interval, observe the next sample, update the visited entry with the
    cost realization from the raw state. ``reference_mdp`` (an estimated
    oracle) only feeds the checkpoint residual diagnostic.
    """
    seed = scheme.seed if base_seed is None else base_seed
    g = rngs.stream(seed, rngs.PURPOSE_LEARN, 0)
    n_actions = action_grid.size
    q = make_qtable(state_grid.size, n_actions, config.q_init)
    beta_h = math.exp(-model.discount_beta * scheme.h)
    x = 0.5 * (model.x_min + model.x_max) if x0 is None else float(x0)
    if not model.x_min <= x <= model.x_max:
        raise ValidationError(f"start state {x} outside the domain")
    env_min = env_max = float(config.q_init)
    fam = model.family
    rows = []
    for start, stop, at_mark in _segments(config.total_steps):
        n = stop - start
        a_idx = g.integers(0, n_actions, size=n, dtype=np.int64)
        normals = g.standard_normal((n, scheme.substeps_m))
        if fam is not None:
            code, fp = fam
            x, env_min, env_max = backend.qlearn_diffusion_chunk(
                code, np.asarray(fp), state_grid.points, action_grid.points,
                q.values, q.visits, x, a_idx, normals, scheme.delta, scheme.h,
                beta_h, model.x_min, model.x_max,
                int(config.cost_from_raw_state), env_min, env_max)
        else:
            x, env_min, env_max = _qlearn_generic_chunk(
                model, state_grid.points, action_grid.points, q.values,
                q.visits, x, a_idx, normals, scheme.delta, scheme.h, beta_h,
                config.cost_from_raw_state, env_min, env_max, state_grid)
        if at_mark and stop > config.burn_in:
            rows.append(_diagnostic_row(stop, q, config.reference_q,
                                        reference_mdp, env_min, env_max))
    history = _assemble_history(rows, q)
    if history.unvisited_pairs:
        warnings.warn(
            f"{history.unvisited_pairs} state-action pairs never visited "
            f"after {config.total_steps} steps", ExplorationWarning)
    return q, history


def uniform_mixture_reachable(mdp: FiniteMdp, start: int) -> np.ndarray:
    """States reachable from ``start`` under uniformly random actions."""
    support = (mdp.kernel > 0).any(axis=1)
    seen = np.zeros(mdp.n_states, dtype=bool)
    stack = [start]
    seen[start] = True
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(support[i]):
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return seen


def run_q_learning_on_mdp(mdp: FiniteMdp, config: LearnConfig,
                          base_seed: int = 0, start_state: int = 0
                          ) -> tuple[QTable, LearnHistory]:
    """Same update loop with transitions drawn from the explicit kernel."""
    mdp.validate()
    reachable = uniform_mixture_reachable(mdp, start_state)
    if not reachable.all():
        warnings.warn(
            f"{int((~reachable).sum())} states unreachable from state "
            f"{start_state} under uniform exploration", ExplorationWarning)
    g = rngs.stream(base_seed, rngs.PURPOSE_LEARN, 0)
    n_actions = mdp.n_actions
    q = make_qtable(mdp.n_states, n_actions, config.q_init)
    cum = np.cumsum(mdp.kernel, axis=2)
    env_min = env_max = float(config.q_init)
    state = int(start_state)
    rows = []
    for start, stop, at_mark in _segments(config.total_steps):
        n = stop - start
        a_idx = g.integers(0, n_actions, size=n, dtype=np.int64)
        unif = g.random(n)
        state, env_min, env_max = backend.qlearn_mdp_chunk(
            cum, mdp.cost, q.values, q.visits, state, a_idx, unif,
            mdp.beta_h, env_min, env_max)
        if at_mark and stop > config.burn_in:
            rows.append(_diagnostic_row(stop, q, config.reference_q, mdp,
                                        env_min, env_max))
    history = _assemble_history(rows, q)
    if history.unvisited_pairs:
        raise ExplorationError(
            f"{history.unvisited_pairs} state-action pairs never visited "
            f"after {config.total_steps} steps on the finite model")
    return q, history


def _diagnostic_row(step, q: QTable, reference_q, reference_mdp,
                    env_min, env_max):
    sup = math.nan
    if reference_q is not None:
        sup = float(np.abs(q.values - reference_q).max())
    res = math.nan
    if reference_mdp is not None:
        res = bellman_residual(reference_mdp, QMatrix(values=q.values))
    return (step, sup, res, int(q.visits.min()), env_min, env_max)


def _assemble_history(rows, q: QTable) -> LearnHistory:
    arr = np.array(rows, dtype=np.float64) if rows else np.empty((0, 6))
    return LearnHistory(
        steps=arr[:, 0].astype(np.int64),
        sup_dist=arr[:, 1],
        residual=arr[:, 2],
        min_visits=arr[:, 3].astype(np.int64),
        value_min=arr[:, 4],
        value_max=arr[:, 5],
        unvisited_pairs=int((q.visits == 0).sum()),
    )
