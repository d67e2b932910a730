"""Numpy fallback for the hot loops.

Mirrors ``_fastloops`` operation by operation: every floating expression is
written with the same grouping as the C code so both backends produce
bit-identical results from the same pre-drawn random arrays. All random
numbers are drawn by the callers; these functions are pure array compute.

Family codes describe the built-in model families the kernels can evaluate
natively:

* ``FAMILY_OU`` params ``(theta, sigma0, r, cost_cap)``:
  drift -theta*x + u, constant noise sigma0, cost min(x*x + r*u*u, cost_cap).
* ``FAMILY_CONST`` params ``(b0, s0, c0)``: constant drift/noise/cost.
"""

import math
from bisect import bisect_left

import numpy as np

FAMILY_OU = 1
FAMILY_CONST = 2

BACKEND_NAME = "python"


def nearest_index_batch(points, x):
    """Indices of the nearest grid point, ties resolved to the lower index."""
    points = np.asarray(points, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    m = points.shape[0]
    j = np.searchsorted(points, x)  # first index with points[j] >= x
    jc = np.clip(j, 1, m - 1)
    lower = points[jc - 1]
    upper = points[jc]
    pick_lower = (x - lower) <= (upper - x)
    idx = np.where(pick_lower, jc - 1, jc)
    idx = np.where(j == 0, 0, idx)
    idx = np.where(j == m, m - 1, idx)
    return idx.astype(np.int64)


def _drift(code, fp, x, u):
    if code == FAMILY_OU:
        return -fp[0] * x + u
    return fp[0] * np.ones_like(x)


def _sigma_const(code, fp):
    # both built-in families have state-independent noise
    return fp[1]


def _stagecost(code, fp, x, u):
    if code == FAMILY_OU:
        return np.minimum(x * x + fp[2] * u * u, fp[3])
    return fp[2] * np.ones_like(x)


def evolve_batch(code, fp, x0, u, normals, delta, lo, hi):
    """Run m Euler substeps for n independent chains under a frozen action.

    ``normals`` has shape (n, m); ``u`` is a scalar or an (n,) array.
    Returns the (n,) array of final states, clamped to [lo, hi].
    """
    fp = tuple(map(float, fp))
    x = np.array(x0, dtype=np.float64, copy=True)
    normals = np.asarray(normals, dtype=np.float64)
    m = normals.shape[1]
    sd = _sigma_const(code, fp) * math.sqrt(delta)
    for j in range(m):
        b = _drift(code, fp, x, u)
        x = (x + b * delta) + sd * normals[:, j]
        x = np.minimum(np.maximum(x, lo), hi)
    return x


def rollout_cost_batch(code, fp, x0, pol_actions, points, m, normals, disc,
                       delta, lo, hi):
    """Discounted-cost rollouts for a batch under a grid policy.

    ``normals`` has shape (n, K*m); ``disc[t]`` is the discount at substep t;
    costs use the left endpoint of each substep. Returns (costs, finals).
    """
    fp = tuple(map(float, fp))
    x = np.array(x0, dtype=np.float64, copy=True)
    normals = np.asarray(normals, dtype=np.float64)
    n, total = normals.shape
    steps = total // m
    cost = np.zeros(n, dtype=np.float64)
    sd = _sigma_const(code, fp) * math.sqrt(delta)
    pol_actions = np.asarray(pol_actions, dtype=np.float64)
    for k in range(steps):
        idx = nearest_index_batch(points, x)
        u = pol_actions[idx]
        for j in range(m):
            t = k * m + j
            sc = _stagecost(code, fp, x, u)
            cost = cost + disc[t] * (sc * delta)
            b = _drift(code, fp, x, u)
            x = (x + b * delta) + sd * normals[:, t]
            x = np.minimum(np.maximum(x, lo), hi)
    return cost, x


def _nearest_scalar(points, x):
    m = points.shape[0]
    j = int(np.searchsorted(points, x))
    if j == 0:
        return 0
    if j == m:
        return m - 1
    if (x - points[j - 1]) <= (points[j] - x):
        return j - 1
    return j


def qlearn_diffusion_chunk(code, fp, points, act_values, q, visits, x,
                           a_idx, normals, delta, h, beta_h, lo, hi,
                           raw_cost, env_min, env_max):
    """Sequential tabular updates along one exploration segment.

    Exactly one (state, action) entry changes per step. ``q`` and ``visits``
    are updated in place; returns (x_final, env_min, env_max) where the
    envelope folds in every intermediate table value.
    """
    fp = tuple(map(float, fp))
    theta, s0 = fp[0], fp[1]
    r = fp[2] if code == FAMILY_OU else 0.0
    cap = fp[3] if code == FAMILY_OU else 0.0
    c0 = fp[2] if code == FAMILY_CONST else 0.0
    sd = s0 * math.sqrt(delta)
    steps, m = normals.shape
    z = normals.tolist()
    actions = a_idx.tolist()
    avals = [float(v) for v in act_values]
    pts = [float(v) for v in points]
    npts = len(pts)
    x = float(x)
    for k in range(steps):
        j = bisect_left(pts, x)
        if j == 0:
            i = 0
        elif j == npts:
            i = npts - 1
        else:
            i = j - 1 if (x - pts[j - 1]) <= (pts[j] - x) else j
        a = actions[k]
        u = avals[a]
        xc = x if raw_cost else pts[i]
        if code == FAMILY_OU:
            sc = xc * xc + r * u * u
            if sc > cap:
                sc = cap
        else:
            sc = c0
        cost_r = sc * h
        zk = z[k]
        for j in range(m):
            if code == FAMILY_OU:
                b = -theta * x + u
            else:
                b = theta  # FAMILY_CONST stores b0 in slot 0
            x = (x + b * delta) + sd * zk[j]
            if x < lo:
                x = lo
            elif x > hi:
                x = hi
        j = bisect_left(pts, x)
        if j == 0:
            inext = 0
        elif j == npts:
            inext = npts - 1
        else:
            inext = j - 1 if (x - pts[j - 1]) <= (pts[j] - x) else j
        mn = float(q[inext].min())
        alpha = 1.0 / (1.0 + float(visits[i, a]))
        newv = (1.0 - alpha) * float(q[i, a]) + alpha * (cost_r + beta_h * mn)
        q[i, a] = newv
        visits[i, a] += 1
        if newv < env_min:
            env_min = newv
        if newv > env_max:
            env_max = newv
    return x, env_min, env_max


def qlearn_mdp_chunk(cum_kernel, cost, q, visits, state, a_idx, unif, beta_h,
                     env_min, env_max):
    """Same update loop but transitions drawn from an explicit finite kernel.

    ``cum_kernel[i, a]`` is the cumulative distribution of the next state.
    """
    steps = a_idx.shape[0]
    m = cum_kernel.shape[2]
    actions = a_idx.tolist()
    us = unif.tolist()
    cum = cum_kernel.tolist()
    cst = cost.tolist()
    i = int(state)
    for k in range(steps):
        a = actions[k]
        cost_r = cst[i][a]
        u = us[k]
        row = cum[i][a]
        j = 0
        while j < m - 1 and u >= row[j]:
            j += 1
        mn = float(q[j].min())
        alpha = 1.0 / (1.0 + float(visits[i, a]))
        newv = (1.0 - alpha) * float(q[i, a]) + alpha * (cost_r + beta_h * mn)
        q[i, a] = newv
        visits[i, a] += 1
        if newv < env_min:
            env_min = newv
        if newv > env_max:
            env_max = newv
        i = j
    return i, env_min, env_max
