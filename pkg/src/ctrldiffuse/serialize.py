"""Deterministic on-disk formats.

CSV carries floats at 17 significant digits (lossless round-trip), fixed
column order, and '\\n' newlines, so identical inputs produce byte-identical
files. The finite-model container is a small self-describing binary written
without timestamps for the same reason.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .finite_mdp import FiniteMdp
from .grids import ActionGrid, StateGrid
from .qlearn import LearnHistory, QTable

MDP_MAGIC = b"CDMDP1\n"


def fmt(x) -> str:
    return "%.17g" % float(x)


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_qtable(path, qtable: QTable) -> None:
    m, n = qtable.shape
    rows = ((i, a, qtable.values[i, a], int(qtable.visits[i, a]))
            for i in range(m) for a in range(n))
    write_csv(path, ["state_index", "action_index", "value", "visits"], rows)


def load_qtable(path) -> QTable:
    _, rows = read_csv(path)
    if not rows:
        raise ValidationError(f"empty table file: {path}")
    m = max(int(r[0]) for r in rows) + 1
    n = max(int(r[1]) for r in rows) + 1
    values = np.zeros((m, n))
    visits = np.zeros((m, n), dtype=np.int64)
    for r in rows:
        values[int(r[0]), int(r[1])] = float(r[2])
        visits[int(r[0]), int(r[1])] = int(r[3])
    return QTable(values=values, visits=visits)


def save_qmatrix(path, values: np.ndarray) -> None:
    m, n = values.shape
    rows = ((i, a, values[i, a]) for i in range(m) for a in range(n))
    write_csv(path, ["state_index", "action_index", "value"], rows)


def load_qmatrix(path) -> np.ndarray:
    _, rows = read_csv(path)
    if not rows:
        raise ValidationError(f"empty table file: {path}")
    m = max(int(r[0]) for r in rows) + 1
    n = max(int(r[1]) for r in rows) + 1
    values = np.zeros((m, n))
    for r in rows:
        values[int(r[0]), int(r[1])] = float(r[2])
    return values


def save_history(path, history: LearnHistory) -> None:
    rows = zip(history.steps.tolist(), history.sup_dist.tolist(),
               history.residual.tolist(), history.min_visits.tolist())
    write_csv(path, ["step", "sup_dist", "residual", "min_visits"], rows)


def load_history(path):
    _, rows = read_csv(path)
    return {
        "step": np.array([int(r[0]) for r in rows], dtype=np.int64),
        "sup_dist": np.array([float(r[1]) for r in rows]),
        "residual": np.array([float(r[2]) for r in rows]),
        "min_visits": np.array([int(r[3]) for r in rows], dtype=np.int64),
    }


def save_state_grid(path, grid: StateGrid) -> None:
    rows = ((i, grid.points[i], grid.bin_edges[i], grid.bin_edges[i + 1])
            for i in range(grid.size))
    write_csv(path, ["index", "representative", "left_edge", "right_edge"], rows)


def save_action_grid(path, grid: ActionGrid) -> None:
    pts = grid.points
    edges = np.empty(pts.size + 1)
    edges[0] = grid.u_min
    edges[-1] = grid.u_max
    edges[1:-1] = 0.5 * (pts[:-1] + pts[1:])
    rows = ((i, pts[i], edges[i], edges[i + 1]) for i in range(pts.size))
    write_csv(path, ["index", "representative", "left_edge", "right_edge"], rows)


def save_mdp(path, mdp: FiniteMdp) -> None:
    """Timestamp-free binary container; round-trips bit-exactly."""
    header = json.dumps({
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "beta_h": mdp.beta_h,
        "n_samples": mdp.n_samples,
    }, sort_keys=True).encode() + b"\n"
    kernel = np.ascontiguousarray(mdp.kernel, dtype="<f8")
    cost = np.ascontiguousarray(mdp.cost, dtype="<f8")
    Path(path).write_bytes(MDP_MAGIC + header + kernel.tobytes() + cost.tobytes())


def load_mdp(path) -> FiniteMdp:
    raw = Path(path).read_bytes()
    if not raw.startswith(MDP_MAGIC):
        raise ValidationError(f"not a finite-model container: {path}")
    body = raw[len(MDP_MAGIC):]
    nl = body.index(b"\n")
    meta = json.loads(body[:nl])
    m, n = meta["n_states"], meta["n_actions"]
    data = body[nl + 1:]
    kernel_bytes = m * n * m * 8
    kernel = np.frombuffer(data[:kernel_bytes], dtype="<f8").reshape(m, n, m)
    cost = np.frombuffer(data[kernel_bytes:kernel_bytes + m * n * 8],
                         dtype="<f8").reshape(m, n)
    return FiniteMdp(kernel=kernel.copy(), cost=cost.copy(),
                     beta_h=meta["beta_h"], n_samples=meta["n_samples"])


def _json_float(x):
    """Map non-representable floats to None for strict JSON."""
    x = float(x)
    if np.isnan(x) or np.isinf(x):
        return None
    return x


def gap_report_dict(report) -> dict:
    d = {
        "w_learned": _json_float(report.w_learned),
        "w_learned_se": _json_float(report.w_learned_se),
        "w_reference": _json_float(report.w_reference),
        "w_reference_se": _json_float(report.w_reference_se),
        "gap": _json_float(report.gap),
        "gap_se": _json_float(report.gap_se),
        "bound_total": _json_float(report.bound_total),
        "bound_note": report.bound_note,
        "violation": report.violation,
        "params": report.params,
    }
    if report.bound_report is not None:
        b = report.bound_report
        d["bound_terms"] = {
            "term_time": b.term_time, "term_quant": b.term_quant,
            "term_pwc": b.term_pwc, "total": _json_float(b.total),
            "alpha_t_state": b.alpha_t_state,
            "alpha_t_action": b.alpha_t_action,
            "asymptotic_c_form": b.asymptotic_c_form,
        }
    else:
        d["bound_terms"] = None
    return d


GAP_CSV_COLUMNS = ["w_learned", "w_learned_se", "w_reference",
                   "w_reference_se", "gap", "gap_se", "bound_total",
                   "violation", "bound_note"]


def csv_safe(s: str) -> str:
    """Free-text fields must not introduce extra CSV columns."""
    return str(s).replace(",", ";").replace("\n", " ")


def save_gap_report(json_path, csv_path, report) -> None:
    write_json(json_path, gap_report_dict(report))
    row = [csv_safe(v) if isinstance(v, str) else v
           for v in (getattr(report, c) for c in GAP_CSV_COLUMNS)]
    write_csv(csv_path, GAP_CSV_COLUMNS, [row])


W1_CSV_COLUMNS = ["kind", "x", "y", "u", "u_alt", "w1", "bound", "slack",
                  "passed"]


def save_w1_rows(json_path, csv_path, rows) -> None:
    write_json(json_path, rows)
    write_csv(csv_path, W1_CSV_COLUMNS,
              [[r[c] for c in W1_CSV_COLUMNS] for r in rows])


def build_manifest(config_dict, file_paths: dict, timings: dict,
                   version: str) -> dict:
    return {
        "config": config_dict,
        "files": {name: sha256_file(p) for name, p in sorted(file_paths.items())},
        "timings_seconds": {k: round(v, 6) for k, v in timings.items()},
        "version": version,
    }
