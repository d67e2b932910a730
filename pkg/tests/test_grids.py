import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrldiffuse.errors import ValidationError
from ctrldiffuse.grids import (action_grid_from_points, build_action_grid,
                               build_centered_action_grid,
                               build_uniform_state_grid, coupled_resolution,
                               quantize_batch, quantize_state,
                               state_grid_from_points)


def dense_scan_covering_error(points, lo, hi, n=20001):
    """Independent oracle: sup over a dense scan of distance to the nearest
    grid point."""
    xs = np.linspace(lo, hi, n)
    return np.abs(xs[:, None] - np.asarray(points)[None, :]).min(axis=1).max()


def test_single_bin_grid():
    g = build_uniform_state_grid(0.0, 1.0, 1)
    assert g.points.tolist() == [0.5]
    assert g.l_x == 0.5


def test_uniform_grid_four_bins():
    g = build_uniform_state_grid(-1.0, 1.0, 4)
    assert np.allclose(g.points, [-0.75, -0.25, 0.25, 0.75])
    assert g.l_x == 0.25
    assert np.allclose(g.bin_edges, [-1.0, -0.5, 0.0, 0.5, 1.0])


@pytest.mark.parametrize("m", [1, 2, 3, 7, 16, 100])
def test_uniform_grid_scaling_identity(m):
    g = build_uniform_state_grid(0.0, 1.0, m)
    assert g.l_x * m == pytest.approx(0.5, abs=1e-15)


def test_grid_validation():
    with pytest.raises(ValidationError):
        build_uniform_state_grid(0.0, 1.0, 0)
    with pytest.raises(ValidationError):
        build_uniform_state_grid(1.0, 0.0, 4)
    with pytest.raises(ValidationError):
        state_grid_from_points([0.2, 0.1], 0.0, 1.0)
    with pytest.raises(ValidationError):
        state_grid_from_points([0.2, 1.5], 0.0, 1.0)


def test_quantize_nearest_and_ties():
    g = state_grid_from_points([-1.0, 0.0, 1.0], -2.0, 2.0)
    assert quantize_state(g, 0.4) == 1
    # equidistant-to-two-representatives goes to the lower index
    assert quantize_state(g, 0.5) == 1
    assert quantize_state(g, -0.5) == 0
    # out-of-domain clamps to the boundary bins
    assert quantize_state(g, 7.3) == 2
    assert quantize_state(g, -9.0) == 0


def test_quantize_idempotent_on_representatives():
    g = build_uniform_state_grid(-2.0, 2.0, 9)
    for i, p in enumerate(g.points):
        assert quantize_state(g, float(p)) == i


def test_dense_scan_within_l_x():
    g = build_uniform_state_grid(-1.5, 2.5, 7)
    xs = np.linspace(-1.5, 2.5, 10001)
    idx = quantize_batch(g, xs)
    assert np.abs(xs - g.points[idx]).max() <= g.l_x + 1e-12


def test_bins_and_nearest_agree():
    g = state_grid_from_points([-1.0, -0.2, 0.3, 1.7], -2.0, 2.0)
    xs = np.linspace(-2.0, 2.0, 4001)
    idx = quantize_batch(g, xs)
    # bin membership: edges belong to the *left* bin (lower-index tie rule)
    for x, i in zip(xs, idx):
        left, right = g.bin_edges[i], g.bin_edges[i + 1]
        assert left <= x <= right
        if x == right and i + 1 < g.size:
            continue  # shared edge: lower index wins, consistent with bins
        assert left <= x <= right


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-640, 640), min_size=1, max_size=12, unique=True),
       st.integers(-768, 768))
def test_quantizer_matches_bruteforce_argmin(ticks, x_tick):
    # points on a 1/64 lattice: distances are exact in binary floating point,
    # so the brute-force oracle and the quantizer see the same ties
    points = sorted(t / 64.0 for t in ticks)
    x = x_tick / 64.0
    g = state_grid_from_points(points, min(points) - 1.0, max(points) + 1.0)
    got = quantize_state(g, x)
    dists = [abs(x - p) for p in points]
    want = int(np.argmin(dists))  # argmin takes the lowest index on ties
    assert got == want


def test_action_grid_two_points_covering_error():
    # dense-scan oracle: endpoints {-1, 1} leave the midpoint at distance 1
    g = build_action_grid(-1.0, 1.0, 2)
    assert g.points.tolist() == [-1.0, 1.0]
    oracle = dense_scan_covering_error(g.points, -1.0, 1.0)
    assert g.l_u == pytest.approx(oracle, abs=1e-9)
    assert g.l_u == pytest.approx(1.0, abs=1e-12)


def test_action_grid_single_point():
    g = build_action_grid(-1.0, 1.0, 1)
    assert g.points.tolist() == [0.0]
    assert g.l_u == 1.0


@pytest.mark.parametrize("n", [2, 3, 5, 9, 17, 33])
def test_action_grid_refinement_monotone(n):
    coarse = build_action_grid(-1.0, 1.0, n)
    fine = build_action_grid(-1.0, 1.0, 2 * n)
    assert fine.l_u < coarse.l_u


@pytest.mark.parametrize("n", [1, 2, 3, 8])
def test_action_grid_l_u_matches_dense_scan(n):
    for builder in (build_action_grid, build_centered_action_grid):
        g = builder(-0.7, 1.3, n)
        oracle = dense_scan_covering_error(g.points, -0.7, 1.3)
        assert g.l_u == pytest.approx(oracle, abs=1e-9)


def test_action_grid_from_points_validation():
    with pytest.raises(ValidationError):
        action_grid_from_points([0.5, 0.1], 0.0, 1.0)
    with pytest.raises(ValidationError):
        build_action_grid(1.0, -1.0, 3)
    with pytest.raises(ValidationError):
        build_action_grid(-1.0, 1.0, 0)


def test_coupled_resolution_pinned_example():
    m, n = coupled_resolution(0.25, 1.5, 2.0, 2.0)
    assert m == 8 and n == 8  # ceil(2 / (2 * 0.25^1.5)) = ceil(7.905...)


def test_coupled_resolution_single_bin():
    m, _ = coupled_resolution(1.0, 1.0, 2.0, 2.0)
    assert m == 1  # h = width/2


def test_coupled_resolution_halving_scaling():
    w = 2.0
    m1, _ = coupled_resolution(0.25, 1.5, w, w)
    m2, _ = coupled_resolution(0.125, 1.5, w, w)
    assert m2 == math.ceil(w / (2 * 0.125**1.5))
    assert abs(m2 - 2**1.5 * m1) <= 2**1.5  # rounding slack only


@pytest.mark.parametrize("h,p", [(0.4, 1.5), (0.2, 1.5), (0.1, 1.5), (0.3, 1.2)])
def test_coupled_resolution_errors_within_target(h, p):
    m, n = coupled_resolution(h, p, 4.0, 2.0)
    sgrid = build_uniform_state_grid(-2.0, 2.0, m)
    agrid = build_centered_action_grid(-1.0, 1.0, n)
    assert sgrid.l_x <= h**p + 1e-12
    assert agrid.l_u <= h**p + 1e-12


def test_coupled_resolution_cap():
    with pytest.raises(ValidationError):
        coupled_resolution(1e-9, 1.5, 2.0, 2.0)
