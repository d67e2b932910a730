"""Experiment orchestration behind the CLI subcommands.

Each public ``run_*`` function validates the whole configuration first, runs
its pipeline deterministically from the master seed, writes the artifact
files plus a manifest with content hashes, and returns the in-memory
results. Sweep cells run in a process pool; cell 0 reuses the master seed
(so a single-cell sweep reproduces ``evaluate`` exactly) and later cells use
seeds derived from their index, which makes output independent of the
worker count.
"""

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__, rngs, serialize
from .bounds import ComplexityReport, compute_complexity_report, v_max_bound
from .config import ExperimentConfig, config_dict, validate_config
from .diffusion import (OuParams, SamplingScheme, const_model, ou_model)
from .errors import ValidationError
from .finite_mdp import (estimate_finite_mdp, greedy_policy,
                         q_value_iteration)
from .grids import (build_action_grid, build_centered_action_grid,
                    build_uniform_state_grid, coupled_resolution)
from .policy_eval import (check_kernel_lipschitz, compute_gap,
                          estimate_reference_optimum,
                          evaluate_learned_control, gap_bound_report)
from .qlearn import LearnConfig, greedy_from_table, run_q_learning

SWEEP_CELL_CAP = 10_000

SWEEP_COLUMNS = [
    "cell_index", "status", "h", "substeps_m", "state_bins", "action_points",
    "l_x", "l_u", "seed", "eps", "w_learned", "w_learned_se", "w_reference",
    "w_reference_se", "gap", "gap_se", "term_time", "term_quant", "term_pwc",
    "bound_total", "t_linear", "t_simplified", "t_polynomial", "v_max",
    "q_env_min", "q_env_max", "error",
]

BOUNDS_COLUMNS = ["h", "L_X", "L_U", "term_time", "term_quant", "term_pwc",
                  "total", "T_linear", "T_simplified", "T_polynomial"]


def build_model(cfg: ExperimentConfig):
    domain = (cfg.x_min, cfg.x_max)
    if cfg.model == "ou":
        params = OuParams(theta=cfg.theta, sigma0=cfg.sigma0,
                          cost_weight_r=cfg.cost_weight_r)
        return ou_model(params, domain, (cfg.u_min, cfg.u_max), beta=cfg.beta)
    return const_model(cfg.drift_b0, cfg.noise_s0, cfg.cost_c0, domain,
                       beta=cfg.beta)


def build_grids(cfg: ExperimentConfig, h=None, bins=None, points=None):
    """State/action grids for one cell; coupled resolution wins when set."""
    h = cfg.h if h is None else h
    if cfg.resolution_exponent > 0:
        m, n = coupled_resolution(h, cfg.resolution_exponent,
                                  cfg.x_max - cfg.x_min,
                                  cfg.u_max - cfg.u_min)
        sgrid = build_uniform_state_grid(cfg.x_min, cfg.x_max, m)
        agrid = build_centered_action_grid(cfg.u_min, cfg.u_max, n)
    else:
        m = cfg.state_bins if bins is None else bins
        n = cfg.action_points if points is None else points
        sgrid = build_uniform_state_grid(cfg.x_min, cfg.x_max, m)
        agrid = build_action_grid(cfg.u_min, cfg.u_max, n)
    return sgrid, agrid


def _scheme(cfg: ExperimentConfig, h=None, seed=None) -> SamplingScheme:
    return SamplingScheme(h=cfg.h if h is None else h,
                          substeps_m=cfg.substeps_m,
                          seed=cfg.seed if seed is None else seed)


def _learn_x0(cfg: ExperimentConfig):
    return None if math.isnan(cfg.learn_x0) else cfg.learn_x0


def _stage_learn(cfg: ExperimentConfig, h=None, bins=None, points=None):
    model = build_model(cfg)
    sgrid, agrid = build_grids(cfg, h=h, bins=bins, points=points)
    scheme = _scheme(cfg, h=h)
    q_init = cfg.q_init
    if cfg.q_init_at_cap:
        # pessimistic-high start: tables descend toward the fixed point,
        # which avoids the min-operator's low-bias stall on fine action grids
        q_init = v_max_bound(scheme.h, model.cost_bound_C, model.discount_beta)
    lconf = LearnConfig(total_steps=cfg.learn_steps, q_init=q_init,
                        burn_in=cfg.burn_in,
                        cost_from_raw_state=cfg.cost_from_raw_state)
    qtable, history = run_q_learning(model, sgrid, agrid, scheme, lconf,
                                     x0=_learn_x0(cfg))
    return model, sgrid, agrid, scheme, qtable, history


def _stage_reference(cfg: ExperimentConfig, model, coarse_scheme=None,
                     coarse_sgrid=None, coarse_agrid=None):
    m, n = coupled_resolution(cfg.ref_h, cfg.ref_resolution_exponent,
                              cfg.x_max - cfg.x_min, cfg.u_max - cfg.u_min)
    ref_sgrid = build_uniform_state_grid(cfg.x_min, cfg.x_max, m)
    ref_agrid = build_centered_action_grid(cfg.u_min, cfg.u_max, n)
    ref_scheme = SamplingScheme(h=cfg.ref_h, substeps_m=cfg.ref_substeps_m,
                                seed=cfg.seed)
    return estimate_reference_optimum(
        model, cfg.eval_x0, ref_scheme, ref_sgrid, ref_agrid,
        cfg.ref_samples_per_pair, cfg.ref_rollouts, tail_tol=cfg.tail_tol,
        coarse_scheme=coarse_scheme, coarse_state_grid=coarse_sgrid,
        coarse_action_grid=coarse_agrid, vi_tol=cfg.vi_tol)


def _complexity(cfg: ExperimentConfig, model, sgrid, agrid, h, eps
                ) -> ComplexityReport:
    l_cover = cfg.cover_time if cfg.cover_time > 0 else float(sgrid.size * agrid.size)
    return compute_complexity_report(
        h, model.cost_bound_C, model.discount_beta, l_cover, cfg.psi, eps,
        cfg.delta, cfg.omega, sgrid.size, agrid.size)


def _manifest(cfg, out: Path, files: dict, timings: dict) -> None:
    manifest = serialize.build_manifest(config_dict(cfg), files, timings,
                                        __version__)
    serialize.write_json(out / "manifest.json", manifest)


def run_learn(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Learn a table end to end; writes qtable.csv, history.csv, manifest."""
    validate_config(cfg)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    model, sgrid, agrid, scheme, qtable, history = _stage_learn(cfg)
    t_learn = time.perf_counter() - t0
    serialize.save_qtable(out / "qtable.csv", qtable)
    serialize.save_history(out / "history.csv", history)
    files = {"qtable.csv": out / "qtable.csv",
             "history.csv": out / "history.csv"}
    _manifest(cfg, out, files, {"learn": t_learn})
    return {"qtable": qtable, "history": history, "state_grid": sgrid,
            "action_grid": agrid, "model": model, "out": out}


def run_solve(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Estimate the aggregate model and solve it exactly; writes mdp.bin and
    qstar.csv."""
    validate_config(cfg)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    sgrid, agrid = build_grids(cfg)
    scheme = _scheme(cfg)
    t0 = time.perf_counter()
    mdp = estimate_finite_mdp(model, sgrid, agrid, scheme,
                              cfg.mdp_samples_per_pair)
    t_est = time.perf_counter() - t0
    t0 = time.perf_counter()
    qstar = q_value_iteration(mdp, tol=cfg.vi_tol, max_iter=cfg.vi_max_iter)
    t_solve = time.perf_counter() - t0
    serialize.save_mdp(out / "mdp.bin", mdp)
    serialize.save_qmatrix(out / "qstar.csv", qstar.values)
    files = {"mdp.bin": out / "mdp.bin", "qstar.csv": out / "qstar.csv"}
    _manifest(cfg, out, files, {"estimate": t_est, "solve": t_solve})
    return {"mdp": mdp, "qstar": qstar, "state_grid": sgrid,
            "action_grid": agrid, "model": model, "out": out}


def run_evaluate(cfg: ExperimentConfig, out_dir=None, qtable_path=None,
                 qstar_path=None, qvalues=None) -> dict:
    """Evaluate the greedy policy of a learned (or solved) table against the
    refinement reference; writes gap_report.json/csv."""
    validate_config(cfg)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    policy = None
    if qvalues is None:
        if qtable_path is not None:
            table = serialize.load_qtable(qtable_path)
            qvalues = table.values
            policy = greedy_from_table(table)
        elif qstar_path is not None:
            qvalues = serialize.load_qmatrix(qstar_path)
        else:
            raise ValidationError("evaluate needs a learned or solved table")
    model = build_model(cfg)
    sgrid, agrid = build_grids(cfg)
    scheme = _scheme(cfg)
    if qvalues.shape != (sgrid.size, agrid.size):
        raise ValidationError(
            f"table shape {qvalues.shape} does not match the configured "
            f"grids ({sgrid.size}, {agrid.size})")
    if policy is None:
        policy = np.argmin(qvalues, axis=1).astype(np.int64)
    timings = {}
    t0 = time.perf_counter()
    learned = evaluate_learned_control(model, sgrid, agrid, policy,
                                       cfg.eval_x0, scheme,
                                       cfg.eval_rollouts,
                                       tail_tol=cfg.tail_tol)
    timings["evaluate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    reference = _stage_reference(cfg, model, coarse_scheme=scheme,
                                 coarse_sgrid=sgrid, coarse_agrid=agrid)
    timings["reference"] = time.perf_counter() - t0
    breport, _, note = gap_bound_report(model, scheme.h, sgrid.l_x,
                                        agrid.l_u, cfg.bound_n_const,
                                        cfg.bound_regular)
    params = {"h": scheme.h, "substeps_m": scheme.substeps_m,
              "state_bins": sgrid.size, "action_points": agrid.size,
              "l_x": sgrid.l_x, "l_u": agrid.l_u, "seed": cfg.seed,
              "eval_rollouts": cfg.eval_rollouts, "eval_x0": cfg.eval_x0,
              "ref_h": cfg.ref_h, "ref_substeps_m": cfg.ref_substeps_m,
              "ref_rollouts": cfg.ref_rollouts,
              "tail_bound_learned": learned.tail_bound,
              "tail_bound_reference": reference.tail_bound}
    report = compute_gap(learned, reference, breport, note, params)
    serialize.save_gap_report(out / "gap_report.json",
                              out / "gap_report.csv", report)
    files = {"gap_report.json": out / "gap_report.json",
             "gap_report.csv": out / "gap_report.csv"}
    _manifest(cfg, out, files, timings)
    return {"report": report, "out": out}


def bounds_rows(cfg: ExperimentConfig) -> list[dict]:
    """One row per sampling interval: error-bound terms and sample sizes."""
    validate_config(cfg)
    model = build_model(cfg)
    hs = cfg.sweep_h or [cfg.h]
    rows = []
    for h in hs:
        sgrid, agrid = build_grids(cfg, h=h)
        breport, total, note = gap_bound_report(model, h, sgrid.l_x,
                                                agrid.l_u, cfg.bound_n_const,
                                                cfg.bound_regular)
        comp = _complexity(cfg, model, sgrid, agrid, h, cfg.eps)
        rows.append({
            "h": h, "L_X": sgrid.l_x, "L_U": agrid.l_u,
            "term_time": breport.term_time if breport else math.nan,
            "term_quant": breport.term_quant if breport else math.nan,
            "term_pwc": breport.term_pwc if breport else math.nan,
            "total": total if breport else math.nan,
            "T_linear": comp.t_linear,
            "T_simplified": comp.t_simplified,
            "T_polynomial": comp.t_polynomial,
            "note": note,
        })
    return rows


def run_bounds(cfg: ExperimentConfig, out_dir=None) -> dict:
    rows = bounds_rows(cfg)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    serialize.write_csv(out / "bounds.csv", BOUNDS_COLUMNS,
                        [[r[c] for c in BOUNDS_COLUMNS] for r in rows])
    _manifest(cfg, out, {"bounds.csv": out / "bounds.csv"}, {})
    lines = []
    for r in rows:
        lines.append(
            f"h={r['h']:g}  L_X={r['L_X']:.6g}  L_U={r['L_U']:.6g}\n"
            f"  error terms: time={r['term_time']:.6g}  "
            f"quant={r['term_quant']:.6g}  pwc={r['term_pwc']:.6g}  "
            f"total={r['total']:.6g}\n"
            f"  sample sizes: linear={r['T_linear']:.6g}  "
            f"simplified={r['T_simplified']:.6g}  "
            f"polynomial={r['T_polynomial']:.6g}")
        if r["note"]:
            lines.append(f"  note: {r['note']}")
    return {"rows": rows, "table": "\n".join(lines), "out": out}


def run_wcheck(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Kernel sensitivity battery at deterministic quarter-point pairs."""
    validate_config(cfg)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    scheme = _scheme(cfg)
    w = cfg.x_max - cfg.x_min
    xs = [cfg.x_min + w * t for t in (0.3, 0.5, 0.7)]
    wu = cfg.u_max - cfg.u_min
    u_lo, u_mid, u_hi = (cfg.u_min + wu * t for t in (0.25, 0.5, 0.75))
    state_pairs = [(xs[0], xs[2], u_mid), (xs[0], xs[1], u_lo),
                   (xs[1], xs[2], u_hi)]
    action_pairs = [(xs[1], u_lo, u_hi), (xs[0], u_mid, u_hi),
                    (xs[2], u_lo, u_mid)]
    rows = check_kernel_lipschitz(model, scheme, state_pairs, action_pairs,
                                  cfg.wcheck_samples)
    serialize.save_w1_rows(out / "wasserstein.json", out / "wasserstein.csv",
                           rows)
    files = {"wasserstein.json": out / "wasserstein.json",
             "wasserstein.csv": out / "wasserstein.csv"}
    _manifest(cfg, out, files, {})
    return {"rows": rows, "out": out}


def _cells(cfg: ExperimentConfig) -> list[dict]:
    hs = cfg.sweep_h or [cfg.h]
    epss = cfg.sweep_eps or [cfg.eps]
    binss = cfg.sweep_state_bins or [None]
    pointss = cfg.sweep_action_points or [None]
    cells = [
        {"h": h, "eps": e, "bins": b, "points": p}
        for h, e, b, p in product(hs, epss, binss, pointss)
    ]
    if len(cells) > SWEEP_CELL_CAP:
        raise ValidationError(
            f"sweep too large: {len(cells)} cells (cap {SWEEP_CELL_CAP})")
    return cells


def _cell_seed(master: int, index: int) -> int:
    # cell 0 reuses the master seed so a one-cell sweep equals `evaluate`
    if index == 0:
        return master
    return rngs.derive_seed(master, rngs.PURPOSE_CELL, index)


def _sweep_cell(payload):
    cfg, index, cell, ref_est, ref_se = payload
    row = {c: math.nan for c in SWEEP_COLUMNS}
    row.update(cell_index=index, status="ok", error="",
               substeps_m=cfg.substeps_m, eps=cell["eps"])
    try:
        cell_cfg = replace(cfg, seed=_cell_seed(cfg.seed, index))
        model, sgrid, agrid, scheme, qtable, history = _stage_learn(
            cell_cfg, h=cell["h"], bins=cell["bins"], points=cell["points"])
        policy = greedy_from_table(qtable)
        learned = evaluate_learned_control(model, sgrid, agrid, policy,
                                           cfg.eval_x0, scheme,
                                           cfg.eval_rollouts,
                                           tail_tol=cfg.tail_tol)
        breport, total, note = gap_bound_report(model, scheme.h, sgrid.l_x,
                                                agrid.l_u, cfg.bound_n_const,
                                                cfg.bound_regular)
        comp = _complexity(cfg, model, sgrid, agrid, scheme.h, cell["eps"])
        gap = learned.estimate - ref_est
        gap_se = math.sqrt(learned.std_error**2 + ref_se**2)
        row.update(
            h=scheme.h, state_bins=sgrid.size, action_points=agrid.size,
            l_x=sgrid.l_x, l_u=agrid.l_u, seed=cell_cfg.seed,
            w_learned=learned.estimate, w_learned_se=learned.std_error,
            w_reference=ref_est, w_reference_se=ref_se, gap=gap,
            gap_se=gap_se,
            term_time=breport.term_time if breport else math.nan,
            term_quant=breport.term_quant if breport else math.nan,
            term_pwc=breport.term_pwc if breport else math.nan,
            bound_total=total,
            t_linear=comp.t_linear, t_simplified=comp.t_simplified,
            t_polynomial=comp.t_polynomial, v_max=comp.v_max,
            q_env_min=float(history.value_min[-1]),
            q_env_max=float(history.value_max[-1]),
            error=serialize.csv_safe(note) if note else "")
    except Exception as exc:  # cell failures become rows, the sweep goes on
        row.update(status="failed", h=cell["h"],
                   error=serialize.csv_safe(f"{type(exc).__name__}: {exc}"))
    return row


def run_sweep(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Learn/evaluate/bound over the cell grid; one CSV row per cell.

    The refinement reference is shared across cells (same continuous
    problem), computed once from the master seed.
    """
    validate_config(cfg)
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = _cells(cfg)
    model = build_model(cfg)
    t0 = time.perf_counter()
    reference = _stage_reference(cfg, model)
    t_ref = time.perf_counter() - t0
    payloads = [(cfg, i, cell, reference.estimate, reference.std_error)
                for i, cell in enumerate(cells)]
    workers = cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)
    t0 = time.perf_counter()
    if workers == 1 or len(cells) == 1:
        rows = [_sweep_cell(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, payloads))
    t_cells = time.perf_counter() - t0
    rows.sort(key=lambda r: r["cell_index"])
    serialize.write_csv(out / "sweep.csv", SWEEP_COLUMNS,
                        [[r[c] for c in SWEEP_COLUMNS] for r in rows])
    _manifest(cfg, out, {"sweep.csv": out / "sweep.csv"},
              {"reference": t_ref, "cells": t_cells})
    n_failed = sum(r["status"] == "failed" for r in rows)
    return {"rows": rows, "n_failed": n_failed, "out": out,
            "reference": reference}
