"""One-step behaviour of an fdCTMC between visits of the decision vertices.

Starting in a reset state ``s`` with a freshly set clock ``d``, the process
runs until it hits another decision vertex.  The distribution of that vertex
and the expected cost collected on the way are obtained by uniformization of
a subordinated chain in which every decision vertex is absorbing and cost-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import special

from .model import NormalizedModel

ENTRY_SUFFIX = "@entry"


@dataclass(frozen=True)
class PoissonTruncation:
    lambda_d: float
    terms: np.ndarray  # psi(0..I)
    tail_bound: float  # P(N > I)

    @property
    def right(self) -> int:
        return len(self.terms) - 1


@dataclass(frozen=True)
class SubordinatedChain:
    states: Tuple[str, ...]  # normalized states followed by the entry copy
    entry: int
    P_bar: np.ndarray
    F_bar: np.ndarray
    R_bar: np.ndarray
    JP_bar: np.ndarray
    JF_bar: np.ndarray
    absorbing: np.ndarray  # bool mask


@dataclass(frozen=True)
class KernelRow:
    source: str
    action: float  # delay, or math.inf for the exponential-only action
    probs: np.ndarray  # over model.mdp_states
    cost: float
    abs_error: float = 0.0


# --------------------------------------------------------------------------
# Poisson weights

def poisson_tail(k, lam):
    """P(N > k) for N ~ Poisson(lam); vectorized in ``k``."""
    k = np.asarray(k)
    if lam == 0:
        return np.where(k >= 0, 0.0, 1.0)
    return np.where(k >= 0, special.gammainc(np.maximum(k, 0) + 1, lam), 1.0)


def _weights(lam: float, right: int) -> np.ndarray:
    """Poisson masses psi(0..right) by recursion outward from the mode."""
    if lam == 0:
        w = np.zeros(right + 1)
        w[0] = 1.0
        return w
    mode = min(int(math.floor(lam)), right)
    w = np.empty(right + 1)
    w[mode] = 1.0
    if right > mode:
        ks = np.arange(mode + 1, right + 1)
        w[mode + 1:] = np.cumprod(lam / ks)
    if mode > 0:
        ks = np.arange(mode, 0, -1)  # psi(k-1) = psi(k) * k / lam
        w[:mode][::-1] = np.cumprod(ks / lam)
    return w


def truncation_point(lam: float, theta: float, weight_ge=0.0, weight_gt=1.0) -> int:
    """Smallest I with weight_gt * P(N > I) + weight_ge * lam * P(N >= I) < theta / 2.

    With the default weights this bounds the omitted probability mass; the
    ``weight_ge`` term covers sums whose summands grow linearly in I.
    """
    target = theta / 2
    if not target > 1e-300:
        raise ValueError(f"truncation target {theta!r} is below double precision")

    def bound(k):
        return weight_gt * poisson_tail(k, lam) + weight_ge * lam * poisson_tail(k - 1, lam)

    if lam == 0 or bound(0) < target:
        return 0
    hi = int(lam + 10 * math.sqrt(lam) + 20)
    while bound(hi) >= target:
        hi *= 2
    lo = max(int(lam - 10 * math.sqrt(lam)), 0)
    ks = np.arange(lo, hi + 1)
    return int(ks[np.argmax(bound(ks) < target)])


def poisson_terms(lambda_d: float, theta: float, right: int = None) -> PoissonTruncation:
    """Truncated Poisson masses whose omitted right tail is below ``theta / 2``.

    The masses are scaled so that their sum plus the exact tail is one.
    """
    if lambda_d < 0:
        raise ValueError("lambda_d must be nonnegative")
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if right is None:
        right = truncation_point(lambda_d, theta)
    tail = float(poisson_tail(right, lambda_d))
    w = _weights(lambda_d, right)
    w *= (1.0 - tail) / math.fsum(w)
    return PoissonTruncation(float(lambda_d), w, tail)


# --------------------------------------------------------------------------
# subordinated chain

def build_subordinated(model: NormalizedModel, s: str) -> SubordinatedChain:
    """Make every decision vertex absorbing and add an entry copy of ``s``.

    ``s`` itself stays in the chain as the absorbing copy that receives
    every transition returning to it.
    """
    base, cost = model.base, model.cost
    n = len(base.states)
    if s not in model.mdp_states:
        raise ValueError(f"{s!r} is not a decision vertex")
    i = base.index(s)
    absorbing = np.array([t in model.mdp_states for t in base.states] + [False])
    fd = np.append(base.fd_mask, base.is_fd(s))

    P = np.zeros((n + 1, n + 1))
    F = np.zeros((n + 1, n + 1))
    P[:n, :n] = base.P
    F[:n, :n] = base.F
    P[n, :n] = base.P[i]
    F[n, :n] = base.F[i]
    R = np.append(cost.rate_cost, cost.rate_cost[i])
    JP = np.append((base.P * cost.imp_exp).sum(axis=1), (base.P[i] * cost.imp_exp[i]).sum())
    JF = np.append((base.F * cost.imp_fd).sum(axis=1), (base.F[i] * cost.imp_fd[i]).sum())
    JF[~fd] = 0.0
    for k in np.flatnonzero(absorbing):
        P[k] = 0.0
        F[k] = 0.0
        P[k, k] = F[k, k] = 1.0
    R[absorbing] = JP[absorbing] = JF[absorbing] = 0.0
    states = tuple(base.states) + (s + ENTRY_SUFFIX,)
    return SubordinatedChain(states, n, P, F, R, JP, JF, absorbing)


class VertexKernel:
    """Cached uniformization data for one reset vertex.

    The vectors ``1_s P_bar^i`` do not depend on the delay, so rows for many
    delays of the same vertex share them.
    """

    def __init__(self, model: NormalizedModel, s: str):
        self.model = model
        self.source = s
        self.chain = build_subordinated(model, s)
        self.rate = model.rate
        self._cols = np.array([model.base.index(t) for t in model.mdp_states])
        transient = ~self.chain.absorbing
        self._rmax = float(self.chain.R_bar[transient].max(initial=0.0))
        self._jpmax = float(self.chain.JP_bar[transient].max(initial=0.0))
        self._jfmax = float(self.chain.JF_bar[transient].max(initial=0.0))
        v = np.zeros(len(self.chain.states))
        v[self.chain.entry] = 1.0
        self._last = v
        self._fired = [v @ self.chain.F_bar[:, self._cols]]
        self._a = [v @ self.chain.R_bar]
        self._b = [v @ self.chain.JP_bar]
        self._c = [v @ self.chain.JF_bar]

    def _extend(self, right: int):
        ch = self.chain
        while len(self._a) <= right:
            v = self._last @ ch.P_bar
            self._last = v
            self._fired.append(v @ ch.F_bar[:, self._cols])
            self._a.append(v @ ch.R_bar)
            self._b.append(v @ ch.JP_bar)
            self._c.append(v @ ch.JF_bar)

    def row(self, d: float, theta: float) -> KernelRow:
        if not d > 0 or not math.isfinite(d):
            raise ValueError(f"delay must be finite and positive, got {d!r}")
        lam = self.rate * d
        w_gt = 1.0 + d * self._rmax + self._jfmax
        right = max(truncation_point(lam, theta),
                    truncation_point(lam, theta, weight_ge=self._jpmax, weight_gt=w_gt - 1.0))
        pt = poisson_terms(lam, theta, right)
        self._extend(right)
        psi = pt.terms
        fired = np.asarray(self._fired[: right + 1])
        probs = psi @ fired
        # the truncated tail is at most theta/2; pushing it back keeps rows stochastic
        probs = probs / math.fsum(probs)
        a = np.asarray(self._a[: right + 1])
        b = np.asarray(self._b[: right + 1])
        c = np.asarray(self._c[: right + 1])
        idx = np.arange(right + 1)
        per_i = d * np.cumsum(a) / (idx + 1) + (np.cumsum(b) - b) + c
        cost = float(psi @ per_i)
        prob_err = pt.tail_bound
        cost_err = (d * self._rmax + self._jfmax) * pt.tail_bound \
            + self._jpmax * lam * float(poisson_tail(right - 1, lam))
        return KernelRow(self.source, float(d), probs, max(cost, 0.0), max(prob_err, cost_err))


def kernel_row(model: NormalizedModel, s: str, d: float, theta: float = 1e-9) -> KernelRow:
    """Transition distribution and expected cost from reset state ``s`` with delay ``d``."""
    if s not in model.reset:
        raise ValueError(f"{s!r} is not a reset state")
    if not d > 0:
        raise ValueError(f"delay must be positive, got {d!r}")
    return VertexKernel(model, s).row(d, theta)


def kernel_row_exp(model: NormalizedModel, s: str) -> KernelRow:
    """Row of a vertex without fixed-delay transitions: one exponential sojourn."""
    base, cost = model.base, model.cost
    if base.is_fd(s):
        raise ValueError(f"{s!r} has fixed-delay transitions")
    i = base.index(s)
    cols = [base.index(t) for t in model.mdp_states]
    probs = base.P[i, cols].copy()
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError(f"exponential successors of {s!r} leave the decision vertices")
    c = cost.rate_cost[i] / base.rate + float(base.P[i] @ cost.imp_exp[i])
    return KernelRow(s, math.inf, probs, float(c), 0.0)


# --------------------------------------------------------------------------
# rounding

def _grid_up(x: float, kappa: float) -> int:
    """Smallest k with k * kappa >= x in floating point."""
    k = math.ceil(x / kappa)
    while k > 0 and (k - 1) * kappa >= x:
        k -= 1
    while k * kappa < x:
        k += 1
    return k


def _grid_down(x: float, kappa: float) -> int:
    """Largest k with k * kappa <= x in floating point."""
    k = math.floor(x / kappa)
    while (k + 1) * kappa <= x:
        k += 1
    while k > 0 and k * kappa > x:
        k -= 1
    return k


def round_row(row: KernelRow, kappa: float) -> KernelRow:
    """Snap a row to the kappa grid keeping it stochastic.

    The cost is rounded up.  Nonzero probabilities other than the largest are
    rounded up as well; when that would move the largest entry by more than
    ``kappa``, entries are rounded down instead (closest to the grid first)
    until the largest entry absorbs a correction of at most ``kappa``.  Zeros
    stay zeros, so entries below ``kappa`` always become ``kappa``; when their
    combined shortfall exceeds ``kappa`` the largest entry moves by that
    shortfall instead.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if row.abs_error > kappa / 2:
        raise ValueError(f"row error {row.abs_error:.3g} exceeds kappa/2 = {kappa / 2:.3g}")
    p = np.asarray(row.probs, dtype=float)
    top = int(np.argmax(p))
    q = np.zeros_like(p)
    others = [j for j in np.flatnonzero(p > 0) if j != top]
    up = {j: _grid_up(p[j], kappa) for j in others}
    down = {j: _grid_down(p[j], kappa) for j in others}
    units = {j: max(up[j], 1) for j in others}
    excess = sum(units[j] * kappa - p[j] for j in others)
    if excess > kappa:
        flippable = sorted(
            (j for j in others if down[j] >= 1 and down[j] < units[j]),
            key=lambda j: (p[j] - down[j] * kappa, j),
        )
        for j in flippable:
            if excess <= kappa:
                break
            excess -= (units[j] - down[j]) * kappa
            units[j] = down[j]
    for j in others:
        q[j] = units[j] * kappa
    rest = 1.0 - math.fsum(q[j] for j in others)
    if rest < 0 or (p[top] > 0 and rest <= 0):
        raise ValueError(f"kappa = {kappa} too coarse for this row")
    q[top] = rest
    # nudge the largest entry by ulps until the exactly rounded sum is 1
    for _ in range(8):
        total = math.fsum(q)
        if total == 1.0:
            break
        q[top] = np.nextafter(q[top], -np.inf if total > 1.0 else np.inf)
    cost = _grid_up(row.cost, kappa) * kappa
    return KernelRow(row.source, row.action, q, cost, row.abs_error)
