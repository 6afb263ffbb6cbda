"""Monte Carlo runs of an fdCTMC under a fixed delay function.

Random numbers come from numpy's PCG64 generator seeded with the given
integer, so traces and estimates are reproducible across platforms.
``sample_run`` produces one traced run; ``estimate_cost`` and
``estimate_reach`` advance a whole batch of runs in lockstep from a single
stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .model import CostStructure, DelayFunction, FdCtmcStructure, ModelError

MAX_STEPS = 10 ** 6


@dataclass(frozen=True)
class Step:
    state: str
    remaining: float  # delay left on entering ``state``; inf when no clock runs
    sojourn: float
    kind: str  # "exp" or "fd"


@dataclass
class RunSample:
    trace: List[Step]
    total_cost: float
    hit_goal: Optional[str]
    truncated: bool


@dataclass(frozen=True)
class SimEstimate:
    mean: float
    std_error: float
    n: int
    truncated_fraction: float


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _delay_vector(structure: FdCtmcStructure, d: DelayFunction) -> np.ndarray:
    out = np.full(len(structure.states), math.inf)
    for i, s in enumerate(structure.states):
        if s in structure.fd_states:
            if s not in d:
                raise ModelError(f"delay function misses fd state {s!r}")
            out[i] = d[s]
    return out


def _next_delay(fd: np.ndarray, delays: np.ndarray, src, dst, remaining, exp_step):
    """Clock after a step: kept on exp moves inside S_fd, fresh on entry, off outside."""
    fresh = delays[dst]
    if exp_step:
        return np.where(fd[dst], np.where(fd[src], remaining, fresh), math.inf)
    return fresh


def sample_run(structure: FdCtmcStructure, cost: CostStructure, d: DelayFunction, seed=0,
               max_steps: int = MAX_STEPS) -> RunSample:
    """One run from the initial state until the first goal entry (after at least one step)."""
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    rng = _rng(seed)
    states = structure.states
    fd = structure.fd_mask
    delays = _delay_vector(structure, d)
    goal = np.array([s in cost.goal for s in states])
    lam = structure.rate
    s = structure.index(structure.init)
    clock = delays[s]
    total = 0.0
    trace: List[Step] = []
    for _ in range(max_steps):
        t = rng.exponential(1.0 / lam)
        u = rng.random()
        if t < clock:
            row, imp, kind, sojourn = structure.P[s], cost.imp_exp[s], "exp", t
        else:
            row, imp, kind, sojourn = structure.F[s], cost.imp_fd[s], "fd", clock
        nxt = min(int(np.searchsorted(np.cumsum(row), u, side="right")), len(states) - 1)
        while row[nxt] == 0:  # guard against float slack in the cumulative sum
            nxt -= 1
        total += sojourn * cost.rate_cost[s] + imp[nxt]
        trace.append(Step(states[s], float(clock), float(sojourn), kind))
        new_clock = float(_next_delay(fd, delays, s, nxt, clock - sojourn, kind == "exp"))
        s, clock = nxt, new_clock
        if goal[s]:
            return RunSample(trace, total, states[s], False)
    return RunSample(trace, total, None, True)


def _batch(structure: FdCtmcStructure, cost: CostStructure, d: DelayFunction, n: int, seed,
           max_steps: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Total cost, first goal index (-1 if none) and truncation flag of ``n`` runs."""
    rng = _rng(seed)
    fd = structure.fd_mask
    delays = _delay_vector(structure, d)
    goal = np.array([s in cost.goal for s in structure.states])
    cumP = np.cumsum(structure.P, axis=1)
    cumF = np.cumsum(structure.F, axis=1)
    cumP[:, -1] = cumF[:, -1] = np.inf  # u < 1 always lands in a valid column
    JP, JF, R = cost.imp_exp, cost.imp_fd, cost.rate_cost
    lam = structure.rate

    i0 = structure.index(structure.init)
    state = np.full(n, i0)
    clock = np.full(n, delays[i0])
    total = np.zeros(n)
    hit = np.full(n, -1)
    active = np.arange(n)
    for _ in range(max_steps):
        if active.size == 0:
            break
        s, c = state[active], clock[active]
        t = rng.exponential(1.0 / lam, size=active.size)
        u = rng.random(active.size)
        is_exp = t < c
        cum = np.where(is_exp[:, None], cumP[s], cumF[s])
        nxt = (cum <= u[:, None]).sum(axis=1)
        # skip zero-probability columns that share a cumulative value with a positive one
        row = np.where(is_exp[:, None], structure.P[s], structure.F[s])
        bad = row[np.arange(active.size), nxt] == 0
        if bad.any():
            for j in np.flatnonzero(bad):
                k = nxt[j]
                while row[j, k] == 0:
                    k -= 1
                nxt[j] = k
        sojourn = np.where(is_exp, t, c)
        imp = np.where(is_exp, JP[s, nxt], JF[s, nxt])
        total[active] += sojourn * R[s] + imp
        new_clock = np.where(
            is_exp,
            np.where(fd[nxt], np.where(fd[s], c - sojourn, delays[nxt]), math.inf),
            delays[nxt])
        state[active] = nxt
        clock[active] = new_clock
        done = goal[nxt]
        hit[active[done]] = nxt[done]
        active = active[~done]
    truncated = np.zeros(n, dtype=bool)
    truncated[active] = True
    return total, hit, truncated


def _summary(values: np.ndarray, n_total: int, truncated_fraction: float) -> SimEstimate:
    if values.size == 0:
        return SimEstimate(math.nan, math.nan, 0, truncated_fraction)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.inf
    return SimEstimate(mean, se, int(values.size), truncated_fraction)


def estimate_cost(structure: FdCtmcStructure, cost: CostStructure, d: DelayFunction, n: int,
                  seed=0, max_steps: int = MAX_STEPS) -> SimEstimate:
    """Sample mean of the total cost before the goal; truncated runs are left out and counted."""
    if n < 1:
        raise ValueError("n must be positive")
    total, _, truncated = _batch(structure, cost, d, n, seed, max_steps)
    return _summary(total[~truncated], n, float(truncated.mean()))


def estimate_reach(structure: FdCtmcStructure, cost: CostStructure, d: DelayFunction, n: int,
                   seed=0, max_steps: int = MAX_STEPS) -> Dict[str, SimEstimate]:
    """Empirical probability of each goal state being the first goal entered.

    Truncated runs count as reaching no goal.
    """
    if n < 1:
        raise ValueError("n must be positive")
    _, hit, truncated = _batch(structure, cost, d, n, seed, max_steps)
    frac = float(truncated.mean())
    out = {}
    for i, s in enumerate(structure.states):
        if s in cost.goal:
            out[s] = _summary((hit == i).astype(float), n, frac)
    return out
