"""Flat experiment configuration: TOML file, flag overrides, validation.

Every key can be overridden by a command-line flag of the same name; the
master seed can also come from the CTRLDIFFUSE_SEED environment variable.
Configs round-trip losslessly through ``to_toml`` / ``load_config``.
"""

import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .errors import ValidationError
from .serialize import fmt

MODELS = ("ou", "const")


@dataclass
class ExperimentConfig:
    # model selection
    model: str = "ou"
    theta: float = 1.0
    sigma0: float = 0.5
    cost_weight_r: float = 0.25
    drift_b0: float = 0.0          # const family
    noise_s0: float = 0.0
    cost_c0: float = 1.0
    beta: float = 1.0
    # domain and action interval
    x_min: float = -2.0
    x_max: float = 2.0
    u_min: float = -1.0
    u_max: float = 1.0
    # sampling and grids
    h: float = 0.2
    substeps_m: int = 8
    state_bins: int = 8
    action_points: int = 3
    resolution_exponent: float = 0.0   # > 0 couples grid sizes to h**p
    # learning
    learn_steps: int = 200_000
    q_init: float = 0.0
    q_init_at_cap: bool = False        # start tables at h*C/(1-beta_h)
    burn_in: int = 0
    cost_from_raw_state: bool = True
    learn_x0: float = math.nan         # nan: start at the domain midpoint
    # evaluation
    eval_rollouts: int = 2_000
    eval_x0: float = 1.0
    tail_tol: float = 1e-6
    # finite-model estimation / solve
    mdp_samples_per_pair: int = 20_000
    vi_tol: float = 1e-8
    vi_max_iter: int = 100_000
    # refinement reference
    ref_h: float = 0.025
    ref_substeps_m: int = 2
    ref_resolution_exponent: float = 1.5
    ref_samples_per_pair: int = 400
    ref_rollouts: int = 2_000
    # bound / complexity parameters
    bound_n_const: float = 1.0
    bound_regular: bool = False
    psi: float = 0.1
    delta: float = 0.1
    eps: float = 0.1
    omega: float = 2.0 / 3.0
    cover_time: float = 0.0            # 0: use |X_h|*|U_h|
    # wasserstein checks
    wcheck_samples: int = 100_000
    # run control
    seed: int = 0
    out_dir: str = "out"
    threads: int = 0                   # 0: all physical cores
    # sweep specification
    sweep_h: list = field(default_factory=list)
    sweep_eps: list = field(default_factory=list)
    sweep_state_bins: list = field(default_factory=list)
    sweep_action_points: list = field(default_factory=list)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_LIST_ELEM = {"sweep_h": float, "sweep_eps": float,
              "sweep_state_bins": int, "sweep_action_points": int}


def _coerce(name: str, value):
    f = _FIELDS[name]
    if name in _LIST_ELEM:
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            raise ValidationError(f"{name} must be a list")
        return [_LIST_ELEM[name](v) for v in value]
    kind = f.type
    if kind == "bool" or isinstance(f.default, bool):
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValidationError(f"{name}: cannot parse boolean {value!r}")
        return bool(value)
    if isinstance(f.default, int) and not isinstance(f.default, bool):
        return int(value)
    if isinstance(f.default, float):
        return float(value)
    return str(value)


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Read a flat TOML file (optional) and apply typed overrides."""
    cfg = ExperimentConfig()
    data = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = _toml.load(fh)
    for src in (data, overrides or {}):
        for key, value in src.items():
            if key not in _FIELDS:
                raise ValidationError(f"unknown configuration key: {key}")
            setattr(cfg, key, _coerce(key, value))
    return cfg


def to_toml(cfg: ExperimentConfig) -> str:
    """Emit the flat TOML form (lossless round-trip)."""
    lines = []
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, int):
            s = str(v)
        elif isinstance(v, float):
            s = fmt(v)
        elif isinstance(v, list):
            inner = ", ".join(str(e) if isinstance(e, int) else fmt(e) for e in v)
            s = f"[{inner}]"
        else:
            s = f'"{v}"'
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(to_toml(cfg))


def config_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    # NaN is not valid JSON; the midpoint sentinel becomes null
    if math.isnan(d["learn_x0"]):
        d["learn_x0"] = None
    return d


def validate_config(cfg: ExperimentConfig) -> None:
    """Check every field against the preconditions of the module that owns
    it, before any computation starts."""
    def req(cond, msg):
        if not cond:
            raise ValidationError(msg)

    req(cfg.model in MODELS, f"model must be one of {MODELS}, got {cfg.model!r}")
    req(cfg.theta >= 0, "theta: mean reversion must be nonnegative")
    req(cfg.sigma0 > 0 or cfg.model != "ou", "sigma0 must be positive")
    req(cfg.cost_weight_r >= 0, "cost_weight_r must be nonnegative")
    req(cfg.cost_c0 >= 0, "cost_c0: costs must be nonnegative")
    req(cfg.beta > 0, "beta: discount rate must be positive")
    req(cfg.x_min < cfg.x_max, "domain requires x_min < x_max")
    req(cfg.u_min < cfg.u_max, "action interval requires u_min < u_max")
    req(cfg.h > 0, "h: sampling interval must be positive")
    req(cfg.substeps_m >= 1, "substeps_m must be at least 1")
    req(cfg.state_bins >= 1, "state_bins must be at least 1")
    req(cfg.action_points >= 1, "action_points must be at least 1")
    req(cfg.resolution_exponent >= 0, "resolution_exponent must be nonnegative")
    req(cfg.learn_steps >= 1, "learn_steps must be at least 1")
    req(cfg.burn_in >= 0, "burn_in must be nonnegative")
    req(cfg.eval_rollouts >= 1, "eval_rollouts must be at least 1")
    req(cfg.tail_tol > 0, "tail_tol must be positive")
    req(cfg.mdp_samples_per_pair >= 1, "mdp_samples_per_pair must be at least 1")
    req(cfg.vi_tol > 0, "vi_tol must be positive")
    req(cfg.vi_max_iter >= 1, "vi_max_iter must be at least 1")
    req(cfg.ref_h > 0, "ref_h must be positive")
    req(cfg.ref_substeps_m >= 1, "ref_substeps_m must be at least 1")
    req(cfg.ref_resolution_exponent > 0, "ref_resolution_exponent must be positive")
    req(cfg.ref_samples_per_pair >= 1, "ref_samples_per_pair must be at least 1")
    req(cfg.ref_rollouts >= 1, "ref_rollouts must be at least 1")
    req(cfg.bound_n_const > 0, "bound_n_const must be positive")
    req(cfg.psi > 0, "psi must be positive")
    req(0 < cfg.delta < 1, "delta: failure probability must be in (0,1)")
    req(cfg.eps > 0, "eps must be positive")
    req(0.5 < cfg.omega < 1.0,
        "omega: polynomial-rate exponent must lie strictly inside (1/2, 1)")
    req(cfg.cover_time >= 0, "cover_time must be nonnegative")
    req(cfg.wcheck_samples >= 2, "wcheck_samples must be at least 2")
    req(cfg.threads >= 0, "threads must be nonnegative")
    req(all(v > 0 for v in cfg.sweep_h), "sweep_h entries must be positive")
    req(all(v > 0 for v in cfg.sweep_eps), "sweep_eps entries must be positive")
    req(all(v >= 1 for v in cfg.sweep_state_bins),
        "sweep_state_bins entries must be at least 1")
    req(all(v >= 1 for v in cfg.sweep_action_points),
        "sweep_action_points entries must be at least 1")
