"""Discretization parameters for timeout synthesis.

All closed forms are evaluated through their logarithms so that the
(very conservative) worst-case bounds overflow into ``math.inf`` or a
:class:`ParameterOverflow` instead of crashing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .mdp import _forward_reach, evaluate_fdctmc
from .model import DelayFunction, ModelConstants, NormalizedModel, constants

_LOG_MAX = math.log(np.finfo(float).max)
_LOG_TINY = math.log(np.finfo(float).tiny)


class ParameterOverflow(ArithmeticError):
    """A bound leaves the double range; explicit overrides are needed."""


@dataclass(frozen=True)
class DiscretizationParams:
    alpha: float
    delta: float
    d_max: float
    kappa: float
    vmax: float
    vmax_source: str
    epsilon: float
    d_min: Optional[float] = None

    def __post_init__(self):
        if not self.delta > 0 or not self.delta <= self.d_max:
            raise ValueError(f"need 0 < delta <= d_max, got delta={self.delta}, d_max={self.d_max}")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.d_min is not None and not 0 < self.d_min <= self.d_max:
            raise ValueError("need 0 < d_min <= d_max")


def _exp(log_value: float, what: str) -> float:
    if log_value > _LOG_MAX:
        raise ParameterOverflow(f"{what} overflows double precision (log = {log_value:.4g})")
    if log_value < _LOG_TINY:
        raise ParameterOverflow(
            f"{what} underflows double precision (log = {log_value:.4g}); "
            "use a larger epsilon or a heuristic vmax")
    return math.exp(log_value)


def _sizes(model: NormalizedModel) -> Tuple[int, int, int]:
    return len(model.states), len(model.mdp_states), len(model.base.fd_states)


def _consts(model: NormalizedModel, c: Optional[ModelConstants]) -> ModelConstants:
    return c if c is not None else constants(model.base, model.cost)


# --------------------------------------------------------------------------
# closed forms

def log_d1_d2(model: NormalizedModel, c: Optional[ModelConstants] = None) -> Tuple[float, float]:
    c = _consts(model, c)
    lam = model.rate
    n = len(model.states)
    log_d1 = math.log(max(lam, 2 * (lam + 1) * c.max_rate))
    log_d2 = (math.log(n) + n - n * math.log(c.min_prob)
              - math.log(min(1.0, lam)) - math.log(min(1.0, c.min_rate)))
    return log_d1, log_d2


def d1_d2(model: NormalizedModel, c: Optional[ModelConstants] = None) -> Tuple[float, float]:
    """D1 = max{λ, 2(λ+1)maxR} and D2 = |S|e^|S| / (minP^|S| min{1,λ} min{1,minR}).

    D2 is ``math.inf`` when it leaves the double range.
    """
    c = _consts(model, c)
    lam = model.rate
    _, l2 = log_d1_d2(model, c)
    return max(lam, 2 * (lam + 1) * c.max_rate), (math.exp(l2) if l2 <= _LOG_MAX else math.inf)


def log_theoretical_M(model: NormalizedModel, c: Optional[ModelConstants] = None) -> float:
    c = _consts(model, c)
    lam = model.rate
    n, n_mdp, n_fd = _sizes(model)
    return (math.log(n_mdp) + math.log(n_fd / lam + n_fd + 1) + math.log(c.max_rate)
            - n * n * (math.log(c.min_prob) - 1.0))


def theoretical_M(model: NormalizedModel, c: Optional[ModelConstants] = None) -> float:
    """Worst-case value bound |S′|(|S_fd|/λ + |S_fd| + 1) maxR / (minP/e)^(|S|²); may be inf."""
    lm = log_theoretical_M(model, c)
    return math.exp(lm) if lm <= _LOG_MAX else math.inf


def big_N(model: NormalizedModel, c: Optional[ModelConstants], vmax: float) -> float:
    """N = (vmax + maxR(2 + 2/λ)λ)² · 16λ² / (minR² minP)."""
    c = _consts(model, c)
    lam = model.rate
    return (vmax + c.max_rate * (2 + 2 / lam) * lam) ** 2 * 16 * lam ** 2 / (c.min_rate ** 2 * c.min_prob)


# --------------------------------------------------------------------------
# V_max

def estimate_vmax(model: NormalizedModel, heuristic_delays: Sequence[DelayFunction] = (),
                  include_default: bool = True, theta: float = 1e-9) -> Tuple[float, str]:
    """Smallest over the heuristics of the largest per-vertex cost.

    Each heuristic delay function (on original states) is evaluated exactly;
    the largest expected cost over decision vertices reachable from the
    initial state is an upper bound on the optimal values there.  The default
    heuristic is the constant delay 1/λ.
    """
    candidates = []
    if include_default:
        lam = model.rate
        d = DelayFunction({model.lift[s]: 1.0 / lam for s in model.base.fd_states})
        candidates.append((d, "heuristic(1/λ)"))
    candidates += [(d, f"heuristic(#{i})") for i, d in enumerate(heuristic_delays)]

    reach = _reachable_vertices(model)
    best, source = math.inf, None
    for d, tag in candidates:
        res = evaluate_fdctmc(model, d, theta).evaluation
        costs = res.per_vertex_cost[reach]
        v = float(costs.max()) if costs.size else 0.0
        if v < best:
            best, source = v, tag
    if not math.isfinite(best):
        return theoretical_M(model), "theoretical"
    return best, source


def _reachable_vertices(model: NormalizedModel) -> np.ndarray:
    base = model.base
    adj = (base.P > 0) | ((base.F > 0) & base.fd_mask[:, None])
    start = np.zeros(len(base.states), dtype=bool)
    start[base.index(base.init)] = True
    reach = _forward_reach(adj, start)
    return np.array([reach[base.index(v)] for v in model.mdp_states])


# --------------------------------------------------------------------------
# parameter packages

def unconstrained_params(model: NormalizedModel, epsilon: float, vmax: float,
                         vmax_source: str = "given",
                         c: Optional[ModelConstants] = None) -> DiscretizationParams:
    """α, δ, d̄, κ guaranteeing an ε-optimal delay function on the mesh.

    α = ε²/(64 N |S′| (1+vmax)²), δ = α/D1, d̄ = |log α| D2 (vmax+ε) snapped up
    to a multiple of δ, κ = ε δ minR / (2 |S′| (1+vmax)²).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not math.isfinite(vmax):
        raise ValueError("vmax must be finite")
    c = _consts(model, c)
    _, n_mdp, _ = _sizes(model)
    log_d1, log_d2 = log_d1_d2(model, c)
    log_n = math.log(big_N(model, c, vmax))
    log_alpha = 2 * math.log(epsilon) - math.log(64) - log_n - math.log(n_mdp) - 2 * math.log1p(vmax)
    alpha = _exp(log_alpha, "alpha")
    log_delta = log_alpha - log_d1
    delta = _exp(log_delta, "delta")
    log_dmax = math.log(abs(log_alpha)) + log_d2 + math.log(vmax + epsilon)
    d_max = _exp(log_dmax, "d_max")
    _exp(log_dmax - log_delta, "mesh size d_max/delta")
    steps = math.ceil(d_max / delta)
    if not math.isfinite(steps * delta):
        raise ParameterOverflow("d_max overflows double precision")
    d_max = steps * delta
    log_kappa = (math.log(epsilon) + log_delta + math.log(c.min_rate)
                 - math.log(2 * n_mdp) - 2 * math.log1p(vmax))
    kappa = _exp(log_kappa, "kappa")
    return DiscretizationParams(alpha, delta, d_max, kappa, vmax, vmax_source, epsilon)


def log_po_bound_B(model: NormalizedModel, c: Optional[ModelConstants], d_min: float,
                   d_max: float) -> float:
    if not 0 < d_min <= d_max:
        raise ValueError("need 0 < d_min <= d_max")
    c = _consts(model, c)
    lam = model.rate
    n, n_mdp, n_fd = _sizes(model)
    log_core = (n * (math.log(max(n_fd, 1)) - math.log(c.min_prob) - math.log(min(1.0, lam * d_min)))
                + lam * d_max * (n - n_fd))
    log_steps = log_core + math.log(n_mdp)
    log_cost = (log_core + math.log(max(1 / lam, d_max * lam + d_max) + 1)
                + math.log(n_mdp) + math.log(c.max_rate))
    return math.log(8) + log_cost + log_steps + math.log(n_mdp)


def po_bound_B(model: NormalizedModel, c: Optional[ModelConstants], d_min: float,
               d_max: float) -> float:
    """B = 8 B_cost B_steps |S′| for delays bounded to [d_min, d_max]; ``inf`` on overflow.

    With core = (|S_fd| / (minP min{1, λ d_min}))^|S| · e^(λ d_max |S∖S_fd|):
    B_steps = core |S′| and B_cost = core (max{1/λ, d_max λ + d_max} + 1) |S′| maxR.
    """
    lb = log_po_bound_B(model, c, d_min, d_max)
    return math.exp(lb) if lb <= _LOG_MAX else math.inf


def po_params(model: NormalizedModel, epsilon: float, d_min: float, d_max: float,
              c: Optional[ModelConstants] = None) -> DiscretizationParams:
    """α = ε/B, δ = α/D1, κ = α² for the bounded partial-observation mesh."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    c = _consts(model, c)
    log_b = log_po_bound_B(model, c, d_min, d_max)
    if log_b > _LOG_MAX:
        raise ParameterOverflow("bound B overflows double precision; supply explicit delta and kappa")
    log_alpha = math.log(epsilon) - log_b
    alpha = _exp(log_alpha, "alpha")
    log_d1, _ = log_d1_d2(model, c)
    delta = _exp(log_alpha - log_d1, "delta")
    kappa = _exp(2 * log_alpha, "kappa")
    return DiscretizationParams(alpha, delta, d_max, kappa, math.nan, "unused", epsilon,
                                d_min=d_min)


def mesh(delta: float, lower: float, upper: float) -> np.ndarray:
    """Multiples kδ (k ≥ 1) with lower ≤ kδ ≤ upper, both ends inclusive."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    k_lo = max(1, math.ceil(lower / delta - 1e-9))
    k_hi = math.floor(upper / delta + 1e-9)
    if k_hi < k_lo:
        return np.empty(0)
    return np.arange(k_lo, k_hi + 1) * delta


def mesh_size(delta: float, lower: float, upper: float) -> int:
    k_lo = max(1, math.ceil(lower / delta - 1e-9))
    k_hi = math.floor(upper / delta + 1e-9)
    return max(0, k_hi - k_lo + 1)


__all__ = [
    "DiscretizationParams", "ParameterOverflow", "d1_d2", "theoretical_M", "big_N",
    "estimate_vmax", "unconstrained_params", "po_bound_B", "po_params", "mesh", "mesh_size",
]
