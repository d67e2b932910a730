"""Finite state/action grids, the nearest-neighbour quantizer, and the
worst-case quantization errors they induce."""

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ValidationError

RESOLUTION_CAP = 10**6


@dataclass(frozen=True)
class StateGrid:
    """Representative points with their quantization bins.

    ``bin_edges`` has one more entry than ``points``: interior edges sit at
    midpoints between neighbouring representatives, the outer edges at the
    domain endpoints. ``l_x`` is the worst-case distance from any point of
    the (truncated) domain to its representative.
    """

    points: np.ndarray
    bin_edges: np.ndarray
    l_x: float

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def x_min(self) -> float:
        return float(self.bin_edges[0])

    @property
    def x_max(self) -> float:
        return float(self.bin_edges[-1])


@dataclass(frozen=True)
class ActionGrid:
    """Finite action set inside [u_min, u_max] with its covering error l_u."""

    points: np.ndarray
    u_min: float
    u_max: float
    l_u: float

    @property
    def size(self) -> int:
        return self.points.shape[0]


def state_grid_from_points(points, x_min: float, x_max: float) -> StateGrid:
    """Build a (possibly non-uniform) grid from explicit representatives."""
    points = np.asarray(points, dtype=np.float64)
    if x_min >= x_max:
        raise ValidationError(f"empty domain: [{x_min}, {x_max}]")
    if points.ndim != 1 or points.size == 0:
        raise ValidationError("need at least one representative point")
    if np.any(np.diff(points) <= 0):
        raise ValidationError("representatives must be strictly increasing")
    if points[0] < x_min or points[-1] > x_max:
        raise ValidationError("representatives must lie inside the domain")
    edges = np.empty(points.size + 1)
    edges[0] = x_min
    edges[-1] = x_max
    edges[1:-1] = 0.5 * (points[:-1] + points[1:])
    l_x = float(np.maximum(points - edges[:-1], edges[1:] - points).max())
    return StateGrid(points=points, bin_edges=edges, l_x=l_x)


def build_uniform_state_grid(x_min: float, x_max: float, m: int) -> StateGrid:
    """m equal bins over [x_min, x_max], representatives at bin centers."""
    if m < 1:
        raise ValidationError(f"need at least one bin, got {m}")
    if x_min >= x_max:
        raise ValidationError(f"empty domain: [{x_min}, {x_max}]")
    width = (x_max - x_min) / m
    points = x_min + (np.arange(m) + 0.5) * width
    return state_grid_from_points(points, x_min, x_max)


def quantize_state(grid: StateGrid, x: float) -> int:
    """Index of the nearest representative; ties go to the lower index.

    Out-of-domain states map to the boundary bins.
    """
    return int(backend.nearest_index_batch(grid.points, np.array([x]))[0])


def quantize_batch(grid: StateGrid, xs) -> np.ndarray:
    return backend.nearest_index_batch(grid.points, np.asarray(xs, dtype=np.float64))


def _covering_error(points: np.ndarray, u_min: float, u_max: float) -> float:
    worst = max(points[0] - u_min, u_max - points[-1])
    if points.size > 1:
        worst = max(worst, float(np.diff(points).max()) / 2.0)
    return float(worst)


def action_grid_from_points(points, u_min: float, u_max: float) -> ActionGrid:
    points = np.asarray(points, dtype=np.float64)
    if u_min >= u_max:
        raise ValidationError(f"empty action interval: [{u_min}, {u_max}]")
    if points.ndim != 1 or points.size == 0:
        raise ValidationError("need at least one action point")
    if np.any(np.diff(points) <= 0):
        raise ValidationError("action points must be strictly increasing")
    if points[0] < u_min or points[-1] > u_max:
        raise ValidationError("action points must lie inside the interval")
    return ActionGrid(points=points, u_min=u_min, u_max=u_max,
                      l_u=_covering_error(points, u_min, u_max))


def build_action_grid(u_min: float, u_max: float, n: int) -> ActionGrid:
    """n equally spaced actions, endpoints included for n >= 2.

    A single action sits at the interval midpoint.
    """
    if n < 1:
        raise ValidationError(f"need at least one action, got {n}")
    if u_min >= u_max:
        raise ValidationError(f"empty action interval: [{u_min}, {u_max}]")
    if n == 1:
        points = np.array([0.5 * (u_min + u_max)])
    else:
        points = np.linspace(u_min, u_max, n)
    return action_grid_from_points(points, u_min, u_max)


def build_centered_action_grid(u_min: float, u_max: float, n: int) -> ActionGrid:
    """n actions at bin centers, so the covering error is (u_max-u_min)/(2n).

    This is the placement coupled resolutions use: it keeps l_u within the
    target h^p, which endpoint placement misses by the n/(n-1) factor.
    """
    if n < 1:
        raise ValidationError(f"need at least one action, got {n}")
    if u_min >= u_max:
        raise ValidationError(f"empty action interval: [{u_min}, {u_max}]")
    width = (u_max - u_min) / n
    points = u_min + (np.arange(n) + 0.5) * width
    return action_grid_from_points(points, u_min, u_max)


def coupled_resolution(h: float, p: float, state_width: float,
                       action_width: float) -> tuple[int, int]:
    """Grid sizes that keep both quantization errors within h**p.

    Used to drive the space resolution from the sampling interval so the
    errors vanish faster than h when p > 1.
    """
    if h <= 0:
        raise ValidationError(f"sampling interval must be positive, got {h}")
    if p <= 0:
        raise ValidationError(f"resolution exponent must be positive, got {p}")
    if state_width <= 0 or action_width <= 0:
        raise ValidationError("grid widths must be positive")
    target = h**p
    m = math.ceil(state_width / (2.0 * target))
    n = math.ceil(action_width / (2.0 * target))
    m, n = max(m, 1), max(n, 1)
    if m > RESOLUTION_CAP or n > RESOLUTION_CAP:
        raise ValidationError(
            f"coupled resolution exceeds cap {RESOLUTION_CAP}: M={m}, N={n}"
        )
    return m, n
