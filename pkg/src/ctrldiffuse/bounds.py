"""Closed-form approximation-error and sample-complexity expressions.

Pure functions of the model constants (B, K, C, beta) and the discretization
parameters (h, l_x, l_u, ...). Each expression is only evaluated inside the
hypothesis it was derived under; out-of-hypothesis calls raise
:class:`BoundHypothesisError` naming the violated condition rather than
extrapolating silently.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BoundHypothesisError, ValidationError


@dataclass(frozen=True)
class BoundReport:
    """Evaluated error-bound terms and their composition.

    ``total`` is exactly 2*term_time + term_quant + term_pwc. The
    ``alpha_t_*`` fields are the transition-kernel Lipschitz factors in the
    state and action arguments; ``asymptotic_c_form`` is the small-h shape
    sqrt(h) + (l_x + l_u)/h + h**0.25 with unit constant.
    """

    term_time: float
    term_quant: float
    term_pwc: float
    total: float
    alpha_t_state: float
    alpha_t_action: float
    asymptotic_c_form: float


@dataclass(frozen=True)
class ComplexityReport:
    """Sample-size expressions for eps-accurate tables, plus the value cap."""

    t_linear: float
    t_simplified: float
    t_polynomial: float
    v_max: float


def _check_positive(**kwargs) -> None:
    for name, value in kwargs.items():
        if not value > 0:
            raise ValidationError(f"{name} must be positive, got {value}")


def _check_nonnegative(**kwargs) -> None:
    for name, value in kwargs.items():
        if not value >= 0:
            raise ValidationError(f"{name} must be nonnegative, got {value}")


def time_discretization_bound(bound_b: float, lip_k: float, beta: float,
                              h: float) -> float:
    """Value-gap bound between the continuous cost and the sampled chain:
    h*B + K*B*h/(1-exp(-beta*h)) * (h + sqrt(2h/pi))."""
    _check_positive(beta=beta, h=h)
    _check_nonnegative(bound_b=bound_b, lip_k=lip_k)
    return (h * bound_b
            + (lip_k * bound_b * h / (1.0 - math.exp(-beta * h)))
            * (h + math.sqrt(2.0 * h / math.pi)))


def lipschitz_state_factor(lip_k: float, h: float) -> float:
    """Transition-kernel contraction factor in the start state:
    exp((K + K^2/2) h)."""
    _check_nonnegative(lip_k=lip_k, h=h)
    return math.exp((lip_k + lip_k * lip_k / 2.0) * h)


def lipschitz_action_factor(lip_k: float, h: float) -> float:
    """Transition-kernel sensitivity factor in the action: 2K exp(2 K^2 h).

    Only valid for sampling intervals below one.
    """
    _check_nonnegative(lip_k=lip_k)
    if not 0.0 < h < 1.0:
        raise BoundHypothesisError(
            f"action sensitivity factor requires 0 < h < 1, got h={h}")
    return 2.0 * lip_k * math.exp(2.0 * lip_k * lip_k * h)


def quantization_bound(lip_k: float, beta: float, h: float, l_x: float,
                       l_u: float) -> float:
    """Value loss of the grid policy on the sampled chain.

    Requires the contraction hypothesis beta > K + K^2/2 (otherwise the
    discounted kernel is not a contraction and no finite bound exists from
    this argument) and 0 < h < 1.
    """
    _check_positive(beta=beta)
    _check_nonnegative(lip_k=lip_k, l_x=l_x, l_u=l_u)
    if not beta > lip_k + lip_k * lip_k / 2.0:
        raise BoundHypothesisError(
            "quantization bound requires beta > K + K^2/2 "
            f"(beta={beta}, K+K^2/2={lip_k + lip_k * lip_k / 2.0})")
    if not 0.0 < h < 1.0:
        raise BoundHypothesisError(
            f"quantization bound requires 0 < h < 1, got h={h}")
    k = lip_k
    a = math.exp(h * (k + k * k / 2.0 - beta))
    b2 = math.exp(h * (2.0 * k * k - beta))
    denom = (1.0 - math.exp(-beta * h)) * (1.0 - a)
    coeff_u = (k * h - k * h * a + 2.0 * k * k * h * b2) / denom
    coeff_x = k * h / denom
    return coeff_u * l_u + coeff_x * l_x


def pwc_bound(n_const: float, h: float, regular: bool = False) -> float:
    """Loss of the best piecewise-constant control: N*h^(1/4), or N*h when
    the dynamics and cost are regular enough for the first-order rate."""
    _check_positive(n_const=n_const, h=h)
    return n_const * h if regular else n_const * h**0.25


def total_error_bound(bound_b: float, lip_k: float, beta: float, h: float,
                      l_x: float, l_u: float, n_const: float = 1.0,
                      regular: bool = False) -> BoundReport:
    """Compose the full performance-gap bound e(h, l_x, l_u).

    total = 2*term_time + term_quant + term_pwc, exactly in that arithmetic.
    """
    term_time = time_discretization_bound(bound_b, lip_k, beta, h)
    term_quant = quantization_bound(lip_k, beta, h, l_x, l_u)
    term_pwc = pwc_bound(n_const, h, regular)
    total = 2.0 * term_time + term_quant + term_pwc
    return BoundReport(
        term_time=term_time,
        term_quant=term_quant,
        term_pwc=term_pwc,
        total=total,
        alpha_t_state=lipschitz_state_factor(lip_k, h),
        alpha_t_action=lipschitz_action_factor(lip_k, h),
        asymptotic_c_form=asymptotic_bound(1.0, h, l_x, l_u),
    )


def asymptotic_bound(c_const: float, h: float, l_x: float, l_u: float) -> float:
    """Small-h shape of the total bound: C*(sqrt(h) + (l_x+l_u)/h + h^(1/4)).

    Separates the three approximation effects: chain approximation, space
    discretization, piecewise-constant controls.
    """
    _check_positive(h=h)
    _check_nonnegative(c_const=c_const, l_x=l_x, l_u=l_u)
    return c_const * (math.sqrt(h) + (l_x + l_u) / h + h**0.25)


def v_max_bound(h: float, cost_sup: float, beta: float) -> float:
    """Sup bound h*||c||_inf/(1 - exp(-beta*h)) on the aggregate value."""
    _check_positive(h=h, beta=beta)
    _check_nonnegative(cost_sup=cost_sup)
    return h * cost_sup / (1.0 - math.exp(-beta * h))


def sample_complexity_linear(l_cover: float, psi: float, eps: float,
                             delta: float, beta_h: float, size_x: int,
                             size_u: int, v_max: float) -> float:
    """Order expression for eps-accurate tables under 1/(1+n) rates.

    All hidden proportionality constants are set to one, so the value is an
    order-of-magnitude figure, not a literal step count.
    """
    _check_positive(l_cover=l_cover, psi=psi, eps=eps, v_max=v_max)
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"failure probability must be in (0,1), got {delta}")
    if not 0.0 < beta_h < 1.0:
        raise ValidationError(f"per-step discount must be in (0,1), got {beta_h}")
    if size_x < 1 or size_u < 1:
        raise ValidationError("grid sizes must be at least 1")
    if not eps < v_max:
        raise ValidationError(
            f"requires eps < v_max (eps={eps}, v_max={v_max}); the accuracy "
            "exponent ln(v_max/eps) must be positive")
    base = l_cover + psi * l_cover + 1.0
    expo = (2.0 / (1.0 - beta_h)) * math.log(v_max / eps)
    logarg = size_x * size_u * v_max / (delta * eps * psi * (1.0 - beta_h))
    with np.errstate(over="ignore"):
        first = float(np.exp(np.float64(expo * math.log(base))))
    second = v_max * v_max * math.log(logarg) / (psi * eps * (1.0 - beta_h))**2
    return first * second


def sample_complexity_simplified(l_cover: float, psi: float, eps: float,
                                 delta: float, h: float, size_x: int,
                                 size_u: int) -> float:
    """Small-h simplification: (1/eps)^(ln(L+psi*L+1)/h) *
    ln(|X||U|/(delta*eps*psi*h)) / (eps^2 h^2)."""
    _check_positive(l_cover=l_cover, psi=psi, eps=eps, h=h)
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"failure probability must be in (0,1), got {delta}")
    if size_x < 1 or size_u < 1:
        raise ValidationError("grid sizes must be at least 1")
    if eps > 1.0:
        raise ValidationError(f"requires eps <= 1, got {eps}")
    base = l_cover + psi * l_cover + 1.0
    logarg = size_x * size_u / (delta * eps * psi * h)
    if logarg <= 1.0:
        warnings.warn(
            f"log argument {logarg:g} <= 1; the simplified expression is "
            "only meaningful for smaller h", stacklevel=2)
    with np.errstate(over="ignore"):
        first = float(np.exp(np.float64(math.log(1.0 / eps) * (math.log(base) / h))))
    return first * math.log(logarg) / (eps * eps * h * h)


def sample_complexity_polynomial(omega: float, l_cover: float, eps: float,
                                 h: float, size_x: int, size_u: int) -> float:
    """Polynomial-rate alternative (rates 1/n^omega, omega in (1/2, 1)):
    (L^(1+3w) ln(|X||U|)/(h^2 eps^2))^(1/w) + ((L/h) ln(1/eps))^(1/(1-w))."""
    if not 0.5 < omega < 1.0:
        raise ValidationError(
            f"requires omega strictly inside (1/2, 1), got {omega}")
    _check_positive(l_cover=l_cover, eps=eps, h=h)
    if eps > 1.0:
        raise ValidationError(f"requires eps <= 1, got {eps}")
    if size_x < 1 or size_u < 1:
        raise ValidationError("grid sizes must be at least 1")
    first = (l_cover**(1.0 + 3.0 * omega) * math.log(size_x * size_u)
             / (h * h * eps * eps))**(1.0 / omega)
    second = ((l_cover / h) * math.log(1.0 / eps))**(1.0 / (1.0 - omega))
    return first + second


def compute_complexity_report(h: float, cost_sup: float, beta: float,
                              l_cover: float, psi: float, eps: float,
                              delta: float, omega: float, size_x: int,
                              size_u: int) -> ComplexityReport:
    """Evaluate all three sample-size expressions for one parameter set."""
    beta_h = math.exp(-beta * h)
    v_max = v_max_bound(h, cost_sup, beta)
    return ComplexityReport(
        t_linear=sample_complexity_linear(l_cover, psi, eps, delta, beta_h,
                                          size_x, size_u, v_max),
        t_simplified=sample_complexity_simplified(l_cover, psi, eps, delta,
                                                  h, size_x, size_u),
        t_polynomial=sample_complexity_polynomial(omega, l_cover, eps, h,
                                                  size_x, size_u),
        v_max=v_max,
    )
