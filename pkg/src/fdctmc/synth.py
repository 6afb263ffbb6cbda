"""Timeout synthesis on the discretized decision process.

``synth_unconstrained`` optimizes over every delay on the mesh;
``synth_partial_obs`` forces equal delays within observation classes and
searches the (finite) set of such assignments exhaustively.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .bounds import (DiscretizationParams, ParameterOverflow, estimate_vmax, mesh, mesh_size,
                     po_params, theoretical_M, unconstrained_params)
from .kernel import KernelRow, VertexKernel, kernel_row_exp, round_row
from .mdp import (Dtmdp, Strategy, _solve_chain, detect_infinite, evaluate_fdctmc,
                  optimal_strategy)
from .model import (DelayFunction, ModelError, NormalizedModel, ObservationRelation)

log = logging.getLogger(__name__)

DEFAULT_THETA = 1e-9
ACTION_CAP = 10 ** 6
STRATEGY_CAP = 10 ** 7


class InfeasibleParameters(ValueError):
    """The requested discretization is too large or empty."""


@dataclass(frozen=True)
class Overrides:
    """User-chosen discretization settings that replace the theoretical ones.

    ``actions`` replaces the mesh by an explicit list of delays.  When any of
    ``delta``, ``d_max``, ``kappa`` or ``actions`` is set the ε guarantee no
    longer follows from the parameter formulas.
    """

    delta: Optional[float] = None
    d_max: Optional[float] = None
    kappa: Optional[float] = None
    vmax: Optional[float] = None
    actions: Optional[Tuple[float, ...]] = None
    theoretical_vmax: bool = False
    theta: float = DEFAULT_THETA
    action_cap: int = ACTION_CAP
    strategy_cap: int = STRATEGY_CAP

    @classmethod
    def coerce(cls, value: Union["Overrides", Mapping, None]) -> "Overrides":
        if value is None:
            return cls()
        if isinstance(value, Overrides):
            return value
        value = dict(value)
        if value.get("actions") is not None:
            value["actions"] = tuple(float(a) for a in value["actions"])
        return cls(**value)

    @property
    def guarantee_kept(self) -> bool:
        return self.delta is None and self.d_max is None and self.kappa is None and self.actions is None


@dataclass
class SynthesisReport:
    delays: DelayFunction
    value: float
    params: Optional[DiscretizationParams]
    mdp_size: Tuple[int, int]
    strategies_evaluated: int = 0
    wall_notes: str = ""
    strategy: Optional[Strategy] = None
    guaranteed: bool = False


# --------------------------------------------------------------------------
# discretization

def _actions(params: DiscretizationParams, lower: float, upper: float,
             actions: Optional[Sequence[float]]) -> np.ndarray:
    if actions is not None:
        acts = np.array(sorted(set(float(a) for a in actions)))
        if acts.size == 0 or not (acts > 0).all() or not np.isfinite(acts).all():
            raise InfeasibleParameters("explicit actions must be finite positive delays")
        return acts
    return mesh(params.delta, lower, upper)


def discretize_mdp(model: NormalizedModel, params: DiscretizationParams, lower: float,
                   upper: float, actions: Optional[Sequence[float]] = None,
                   action_cap: int = ACTION_CAP, theta: float = DEFAULT_THETA) -> Dtmdp:
    """Decision process over S′ with mesh actions on reset vertices.

    Rows are computed to absolute error κ/2 and snapped to the κ grid; with
    κ = 0 the exact rows (truncation ``theta``) are kept unrounded.
    """
    if lower > upper:
        raise InfeasibleParameters("lower bound exceeds upper bound")
    resets = [v for v in model.mdp_states if v in model.reset and v not in model.cost.goal]
    if actions is None:
        count = mesh_size(params.delta, lower, upper)
    else:
        count = len(set(actions))
    if resets and count == 0:
        raise InfeasibleParameters(f"mesh of multiples of {params.delta!r} in [{lower}, {upper}] is empty")
    total = count * len(resets)
    if total > action_cap:
        raise InfeasibleParameters(
            f"discretization needs {total} actions, above the cap {action_cap}; "
            f"raise the cap to at least {total} or coarsen delta")
    acts = _actions(params, lower, upper, actions) if resets else np.empty(0)
    kappa = params.kappa
    theta_rows = kappa if kappa > 0 else theta

    rows: Dict[str, List[KernelRow]] = {}
    for v in model.mdp_states:
        if v in model.cost.goal:
            continue
        if v in model.reset:
            vk = VertexKernel(model, v)
            rs = [vk.row(float(a), theta_rows) for a in acts]
        else:
            rs = [kernel_row_exp(model, v)]
        if kappa > 0:
            rs = [round_row(r, kappa) for r in rs]
        rows[v] = rs
    goal = frozenset(v for v in model.mdp_states if v in model.cost.goal)
    return Dtmdp.from_rows(model.mdp_states, goal, model.base.init, rows)


# --------------------------------------------------------------------------
# helpers

def _require_positive_rates(model: NormalizedModel):
    bad = [s for s, r in zip(model.states, model.cost.rate_cost)
           if r <= 0 and s not in model.cost.goal]
    if bad:
        raise ModelError(f"positive rate cost required for synthesis: {', '.join(sorted(set(bad)))}")


def _report_delays(model: NormalizedModel, choice: Mapping[str, float], filler: float) -> DelayFunction:
    """Delays on original fd states; states never entered with a fresh clock get ``filler``."""
    lowered = dict(model.lower_delays({v: a for v, a in choice.items() if v in model.reset}).items())
    for s in model.base.states:
        if s not in model.base.fd_states:
            continue
        orig = model.lift[s]
        lowered.setdefault(orig, filler)
    return DelayFunction(lowered)


def _plain_report(model: NormalizedModel, theta: float, note: str) -> SynthesisReport:
    res = evaluate_fdctmc(model, DelayFunction({}), theta)
    return SynthesisReport(DelayFunction({}), res.cost, None, (len(model.mdp_states), 0), 0, note)


def _infinite_report(model: NormalizedModel) -> SynthesisReport:
    return SynthesisReport(DelayFunction({}), math.inf, None, (len(model.mdp_states), 0), 0,
                           "goal missed with positive probability for every delay function")


def _check_init(model: NormalizedModel):
    if model.base.init in model.cost.goal:
        raise ModelError("synthesis requires an initial state outside the goal set")


# --------------------------------------------------------------------------
# unconstrained synthesis

def synth_unconstrained(model: NormalizedModel, epsilon: float,
                        overrides: Union[Overrides, Mapping, None] = None) -> SynthesisReport:
    """ε-optimal delay function over the mesh D(δ, d̄)."""
    ov = Overrides.coerce(overrides)
    _check_init(model)
    _require_positive_rates(model)
    if not model.base.fd_states:
        return _plain_report(model, ov.theta, "no fixed-delay states")
    if detect_infinite(model):
        return _infinite_report(model)

    if ov.vmax is not None:
        vmax, source = float(ov.vmax), "override"
    elif ov.theoretical_vmax:
        vmax, source = theoretical_M(model), "theoretical"
    else:
        vmax, source = estimate_vmax(model, theta=ov.theta)

    params = _unconstrained_with_overrides(model, epsilon, vmax, source, ov)
    lower = params.delta
    mdp = discretize_mdp(model, params, lower, params.d_max, ov.actions, ov.action_cap, ov.theta)
    strategy, value = optimal_strategy(mdp)
    filler = float(mdp.actions[next(iter(mdp.actions))][0]) if mdp.actions else params.delta
    delays = _report_delays(model, strategy.choice, filler)
    note = "theoretical parameters" if ov.guarantee_kept else "overrides in effect: no ε guarantee"
    return SynthesisReport(delays, value, params, (mdp.n, mdp.total_actions()), 0, note,
                           strategy, ov.guarantee_kept and source != "override")


def _unconstrained_with_overrides(model, epsilon, vmax, source, ov: Overrides) -> DiscretizationParams:
    theory = None
    try:
        if not math.isfinite(vmax):
            raise ParameterOverflow("vmax is not finite in double precision; supply a vmax override")
        theory = unconstrained_params(model, epsilon, vmax, source)
    except ParameterOverflow:
        if ov.delta is None or ov.kappa is None or (ov.d_max is None and ov.actions is None):
            raise
    delta = ov.delta if ov.delta is not None else theory.delta
    kappa = ov.kappa if ov.kappa is not None else theory.kappa
    if ov.d_max is not None:
        d_max = ov.d_max
    elif theory is not None:
        d_max = theory.d_max
    else:
        d_max = max(ov.actions)
    alpha = theory.alpha if theory is not None else math.nan
    return DiscretizationParams(alpha, delta, max(d_max, delta), kappa, vmax, source, epsilon)


# --------------------------------------------------------------------------
# partial observation

def _po_params_with_overrides(model, epsilon, d_min, d_max, ov: Overrides) -> DiscretizationParams:
    theory = None
    try:
        theory = po_params(model, epsilon, d_min, d_max)
    except ParameterOverflow:
        if ov.kappa is None or (ov.delta is None and ov.actions is None):
            raise
    if ov.delta is not None:
        delta = ov.delta
    elif theory is not None:
        delta = theory.delta
    else:
        delta = min(ov.actions)
    kappa = ov.kappa if ov.kappa is not None else theory.kappa
    alpha = theory.alpha if theory is not None else math.nan
    return DiscretizationParams(alpha, min(delta, d_max), d_max, kappa, math.nan, "unused",
                                epsilon, d_min=d_min)


def _vertex_classes(model: NormalizedModel, equiv: Optional[ObservationRelation]):
    """Group reset vertices by the observation class of their original state."""
    fd_orig = sorted({model.lift[s] for s in model.base.fd_states})
    relation = ObservationRelation.completed(equiv.classes if equiv else [], fd_orig)
    groups: Dict[int, List[str]] = {}
    for v in model.mdp_states:
        if v in model.reset and v not in model.cost.goal:
            groups.setdefault(relation.class_of(model.lift[v]), []).append(v)
    order = sorted(groups)
    return relation, [groups[c] for c in order], order


class _ChainBuilder:
    """Markov chains of class-constant strategies, assembled from cached rows."""

    def __init__(self, mdp: Dtmdp, groups: Sequence[Sequence[str]]):
        self.mdp = mdp
        n = mdp.n
        self.T = np.zeros((n, n))
        self.c = np.zeros(n)
        for v in mdp.vertices:
            i = mdp.index[v]
            if v in mdp.goal:
                self.T[i, i] = 1.0
            else:
                self.T[i] = mdp.trans[v][0]
                self.c[i] = mdp.cost[v][0]
        self.groups = [[mdp.index[v] for v in g] for g in groups]
        self.names = [list(g) for g in groups]

    def set(self, cls: int, k: int):
        for i, v in zip(self.groups[cls], self.names[cls]):
            self.T[i] = self.mdp.trans[v][k]
            self.c[i] = self.mdp.cost[v][k]

    def evaluate(self):
        return _solve_chain(self.mdp, self.T, self.c)


def synth_partial_obs(model: NormalizedModel, equiv: Optional[ObservationRelation], d_min: float,
                      d_max: float, epsilon: float,
                      overrides: Union[Overrides, Mapping, None] = None) -> SynthesisReport:
    """Best class-constant delay function with delays in [d_min, d_max].

    Every assignment of one action per observation class is evaluated; the
    smallest value wins and ties go to the lexicographically smallest vector
    of action indices.
    """
    ov = Overrides.coerce(overrides)
    if not 0 < d_min <= d_max:
        raise InfeasibleParameters("need 0 < d_min <= d_max")
    _check_init(model)
    _require_positive_rates(model)
    if not model.base.fd_states:
        return _plain_report(model, ov.theta, "no fixed-delay states")
    if detect_infinite(model):
        return _infinite_report(model)

    params = _po_params_with_overrides(model, epsilon, d_min, d_max, ov)
    actions = ov.actions
    if actions is not None:
        if min(actions) < d_min - 1e-12 or max(actions) > d_max + 1e-12:
            raise InfeasibleParameters("explicit actions must lie in [d_min, d_max]")
    relation, groups, _ = _vertex_classes(model, equiv)
    m = len(set(actions)) if actions is not None else mesh_size(params.delta, d_min, d_max)
    count = m ** len(groups)
    if count > ov.strategy_cap:
        raise InfeasibleParameters(
            f"{count} class-constant strategies exceed the cap {ov.strategy_cap}; coarsen delta")

    mdp = discretize_mdp(model, params, d_min, d_max, actions, ov.action_cap, ov.theta)
    builder = _ChainBuilder(mdp, groups)
    best_value, best_vec, evaluated = math.inf, None, 0
    current = [0] * len(groups)
    for cls in range(len(groups)):
        builder.set(cls, 0)
    for vec in itertools.product(range(m), repeat=len(groups)):
        for cls, k in enumerate(vec):
            if k != current[cls]:
                builder.set(cls, k)
                current[cls] = k
        res = builder.evaluate()
        value = res.cost()
        evaluated += 1
        if best_vec is None or value < best_value:
            best_value, best_vec = value, vec

    choice: Dict[str, float] = {}
    for cls, k in enumerate(best_vec):
        for v in groups[cls]:
            choice[v] = float(mdp.actions[v][k])
    for v in mdp.actions:
        choice.setdefault(v, float(mdp.actions[v][0]))
    filler = float(mdp.actions[groups[0][0]][0]) if groups else d_min
    delays = _po_report_delays(model, relation, choice, filler)
    note = "theoretical parameters" if ov.guarantee_kept else "overrides in effect: no ε guarantee"
    return SynthesisReport(delays, best_value, params, (mdp.n, mdp.total_actions()), evaluated,
                           note, Strategy(choice), ov.guarantee_kept)


def _po_report_delays(model, relation: ObservationRelation, choice, filler) -> DelayFunction:
    by_class: Dict[int, float] = {}
    for v, a in choice.items():
        if v in model.reset:
            by_class[relation.class_of(model.lift[v])] = a
    out = {}
    for s in model.base.states:
        if s not in model.base.fd_states:
            continue
        orig = model.lift[s]
        out[orig] = by_class.get(relation.class_of(orig), filler)
    return DelayFunction(out)


def check_threshold(model: NormalizedModel, equiv: Optional[ObservationRelation], d_min: float,
                    d_max: float, epsilon: float, x: float,
                    overrides: Union[Overrides, Mapping, None] = None) -> str:
    """'above' if the constrained optimum found exceeds ``x``, else 'below'."""
    report = synth_partial_obs(model, equiv, d_min, d_max, epsilon, overrides)
    return "above" if report.value > x else "below"


def verify_certificate(model: NormalizedModel, equiv: Optional[ObservationRelation], d_min: float,
                       d_max: float, candidate: DelayFunction, x: float,
                       delta: Optional[float] = None, theta: float = DEFAULT_THETA) -> bool:
    """True iff the candidate respects the constraints and its value is below ``x``.

    Only the kernel rows used by the candidate are computed.
    """
    fd_orig = sorted({model.lift[s] for s in model.base.fd_states})
    relation = ObservationRelation.completed(equiv.classes if equiv else [], fd_orig)
    for s in fd_orig:
        if s not in candidate:
            raise ModelError(f"candidate misses fd state {s!r}")
    for block in relation.classes:
        vals = {candidate[s] for s in block}
        if len(vals) > 1:
            raise ModelError(f"candidate assigns different delays within class {sorted(block)}")
    tol = 1e-12 * max(1.0, d_max)
    for s in fd_orig:
        d = candidate[s]
        if d < d_min - tol or d > d_max + tol:
            raise ModelError(f"delay {d} of {s!r} outside [{d_min}, {d_max}]")
        if delta is not None and abs(d / delta - round(d / delta)) > 1e-9:
            raise ModelError(f"delay {d} of {s!r} is not a multiple of {delta}")
    return evaluate_fdctmc(model, candidate, theta).cost < x
