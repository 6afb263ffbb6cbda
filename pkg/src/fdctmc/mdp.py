"""Finite discrete-time MDPs over the decision vertices.

Costs are total expected costs until a goal vertex is reached.  Vertices
from which the goal is missed with positive probability get an infinite
cost; the ``finite`` mask of :class:`EvalResult` records that split.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .kernel import KernelRow, VertexKernel, kernel_row_exp
from .model import DelayFunction, ModelError, NormalizedModel

EXP_ACTION = math.inf


class InfiniteValueError(ValueError):
    """The goal cannot be reached almost surely."""


@dataclass
class Dtmdp:
    """Finite-action MDP with per-vertex action tables.

    ``trans[v]`` is a (k, n) matrix and ``cost[v]`` a length-k vector for the
    k actions ``actions[v]`` of vertex ``v``.  Goal vertices carry no actions.
    """

    vertices: Tuple[str, ...]
    goal: frozenset
    init: str
    actions: Dict[str, np.ndarray]
    trans: Dict[str, np.ndarray]
    cost: Dict[str, np.ndarray]
    errors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.index = {v: i for i, v in enumerate(self.vertices)}

    @property
    def n(self) -> int:
        return len(self.vertices)

    def action_index(self, v: str, a: float) -> int:
        acts = self.actions[v]
        hits = np.flatnonzero(acts == a)
        if hits.size == 0:
            # tolerate float noise from mesh arithmetic
            hits = np.flatnonzero(np.isclose(acts, a, rtol=1e-12, atol=0))
        if hits.size == 0:
            raise KeyError(f"action {a!r} not enabled in {v!r}")
        return int(hits[0])

    def row(self, v: str, a: float) -> KernelRow:
        k = self.action_index(v, a)
        err = self.errors.get(v)
        return KernelRow(v, float(self.actions[v][k]), self.trans[v][k], float(self.cost[v][k]),
                         0.0 if err is None else float(err[k]))

    def total_actions(self) -> int:
        return int(sum(len(a) for a in self.actions.values()))

    @classmethod
    def from_rows(cls, vertices, goal, init, rows: Mapping[str, Sequence[KernelRow]]) -> "Dtmdp":
        actions, trans, cost, errors = {}, {}, {}, {}
        for v in vertices:
            if v in goal:
                continue
            rs = rows[v]
            if not rs:
                raise ModelError(f"vertex {v!r} has no enabled action")
            actions[v] = np.array([r.action for r in rs])
            trans[v] = np.array([r.probs for r in rs])
            cost[v] = np.array([r.cost for r in rs])
            errors[v] = np.array([r.abs_error for r in rs])
        return cls(tuple(vertices), frozenset(goal), init, actions, trans, cost, errors)


@dataclass(frozen=True)
class Strategy:
    choice: Mapping[str, float]

    def __getitem__(self, v):
        return self.choice[v]


@dataclass
class EvalResult:
    vertices: Tuple[str, ...]
    per_vertex_cost: np.ndarray  # inf where ``finite`` is False
    per_vertex_steps: np.ndarray
    finite: np.ndarray
    reach_matrix: np.ndarray  # vertex x goal
    goals: Tuple[str, ...]
    init: str

    def cost(self, v: Optional[str] = None) -> float:
        return float(self.per_vertex_cost[self.vertices.index(v or self.init)])

    def steps(self, v: Optional[str] = None) -> float:
        return float(self.per_vertex_steps[self.vertices.index(v or self.init)])

    @property
    def value(self) -> float:
        return self.cost()

    @property
    def reach(self) -> Dict[str, float]:
        i = self.vertices.index(self.init)
        return {g: float(p) for g, p in zip(self.goals, self.reach_matrix[i])}

    def reach_from(self, v: str) -> Dict[str, float]:
        i = self.vertices.index(v)
        return {g: float(p) for g, p in zip(self.goals, self.reach_matrix[i])}


# --------------------------------------------------------------------------
# graph helpers

def _backward_reach(adj: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Vertices with a path (over ``adj[u, v]`` edges) into ``targets``."""
    seen = targets.copy()
    frontier = targets.copy()
    while frontier.any():
        pred = adj[:, frontier].any(axis=1) & ~seen
        seen |= pred
        frontier = pred
    return seen


def _forward_reach(adj: np.ndarray, start: np.ndarray) -> np.ndarray:
    return _backward_reach(adj.T, start)


def _markov_chain(mdp: Dtmdp, sigma: Strategy) -> Tuple[np.ndarray, np.ndarray]:
    n = mdp.n
    T = np.zeros((n, n))
    c = np.zeros(n)
    for v in mdp.vertices:
        i = mdp.index[v]
        if v in mdp.goal:
            T[i, i] = 1.0
            continue
        if v not in sigma.choice:
            raise KeyError(f"strategy has no choice for {v!r}")
        k = mdp.action_index(v, sigma[v])
        T[i] = mdp.trans[v][k]
        c[i] = mdp.cost[v][k]
    return T, c


def _topological_blocks(adj: np.ndarray, mask: np.ndarray) -> List[np.ndarray]:
    """Strongly connected blocks of the subgraph on ``mask``, successors first."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    sub = adj[np.ix_(idx, idx)]
    ncomp, labels = connected_components(csr_matrix(sub), directed=True, connection="strong")
    cond = np.zeros((ncomp, ncomp), dtype=bool)
    r, c = np.nonzero(sub)
    cond[labels[r], labels[c]] = True
    np.fill_diagonal(cond, False)
    pending = cond.sum(axis=1)
    ready = sorted(np.flatnonzero(pending == 0).tolist())
    order = []
    while ready:
        k = ready.pop(0)
        order.append(k)
        for p in np.flatnonzero(cond[:, k]):
            pending[p] -= 1
            if pending[p] == 0:
                ready.append(int(p))
    return [idx[labels == k] for k in order]


def _solve_block(A: np.ndarray, rhs: np.ndarray) -> Optional[np.ndarray]:
    """Solution of A x = rhs, or None when A is singular to working precision."""
    if A.shape[0] == 1:
        a = A[0, 0]
        if not a > 0:
            return None
        with np.errstate(over="ignore"):
            x = rhs / a
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            try:
                x = linalg.solve(A, rhs)
            except (linalg.LinAlgError, linalg.LinAlgWarning):
                return None
        resid = np.abs(A @ x - rhs).max()
        if resid > 1e-9 * (1 + np.abs(rhs).max()) * max(1.0, np.abs(x).max()):
            return None
    if not np.isfinite(x).all():
        return None
    return x


def _solve_chain(mdp: Dtmdp, T: np.ndarray, c: np.ndarray) -> EvalResult:
    """Costs, step counts and goal probabilities of an absorbing chain.

    The linear systems are solved block by block over strongly connected
    components.  A block whose system is singular to working precision is
    left only after an astronomical number of steps (beyond about 1/eps);
    its vertices and their predecessors are reported as infinite.
    """
    n = mdp.n
    goal = np.array([v in mdp.goal for v in mdp.vertices])
    adj = T > 0
    adj_nogoal = adj & ~goal[:, None]
    can_reach = _backward_reach(adj_nogoal, goal)
    finite = ~_backward_reach(adj_nogoal, ~can_reach)

    x = np.full((n, 2), math.inf)
    x[goal] = 0.0
    rhs_all = np.column_stack([c, np.ones(n)])
    for B in _topological_blocks(adj_nogoal, finite & ~goal):
        out = np.ones(n, dtype=bool)
        out[B] = False
        TB = T[B]
        bad = out & ~np.isfinite(x[:, 0])
        sol = None
        if not (TB[:, bad] > 0).any():
            ok = out & ~bad
            rhs = rhs_all[B] + TB[:, ok] @ x[ok]
            sol = _solve_block(np.eye(B.size) - TB[:, B], rhs)
        if sol is None:
            finite[B] = False
        else:
            x[B] = sol
    finite &= np.isfinite(x[:, 0])
    cost, steps = x[:, 0].copy(), x[:, 1].copy()

    goals = tuple(v for v in mdp.vertices if v in mdp.goal)
    gidx = np.flatnonzero(goal)
    reach = np.zeros((n, len(goals)))
    reach[gidx, np.arange(len(goals))] = 1.0
    for B in _topological_blocks(adj_nogoal, can_reach & ~goal):
        out = np.ones(n, dtype=bool)
        out[B] = False
        TB = T[B]
        exit_mass = TB[:, out] @ reach[out]
        sol = _solve_block(np.eye(B.size) - TB[:, B], exit_mass)
        if sol is None:
            sol = _closed_block_exit(TB[:, B], TB[:, out].sum(axis=1), exit_mass)
        reach[B] = sol
    return EvalResult(mdp.vertices, cost, steps, finite, reach, goals, mdp.init)


def _closed_block_exit(Q: np.ndarray, leave: np.ndarray, exit_mass: np.ndarray) -> np.ndarray:
    """Exit distribution of a block that is left with vanishing probability.

    In the limit the block is mixed before it is left, so every vertex exits
    like the quasi-stationary distribution of the renormalized block.
    """
    m = Q.shape[0]
    Qn = Q / np.maximum(Q.sum(axis=1, keepdims=True), np.finfo(float).tiny)
    A = np.vstack([(np.eye(m) - Qn).T, np.ones((1, m))])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    pi = np.clip(np.linalg.lstsq(A, b, rcond=None)[0], 0.0, None)
    total = float(pi @ leave)
    if not total > 0:
        return np.zeros_like(exit_mass)
    return np.tile((pi @ exit_mass) / total, (m, 1))


# --------------------------------------------------------------------------
# public operations

def evaluate_strategy(mdp: Dtmdp, sigma: Strategy) -> EvalResult:
    """Expected total cost, expected step count and goal reach probabilities under ``sigma``."""
    T, c = _markov_chain(mdp, sigma)
    return _solve_chain(mdp, T, c)


def expected_steps(mdp: Dtmdp, sigma: Strategy) -> Dict[str, float]:
    """Expected number of steps before the goal (row sums of the fundamental matrix)."""
    res = evaluate_strategy(mdp, sigma)
    return dict(zip(mdp.vertices, res.per_vertex_steps.tolist()))


def reach_probabilities(mdp: Dtmdp, sigma: Strategy) -> Dict[str, float]:
    """Probability of each goal vertex being the first goal reached from the initial vertex."""
    return evaluate_strategy(mdp, sigma).reach


def _allowed(mdp: Dtmdp, alive: np.ndarray) -> Dict[str, np.ndarray]:
    return {v: ~((mdp.trans[v] > 0) & ~alive).any(axis=1) for v in mdp.actions}


def almost_sure_region(mdp: Dtmdp) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Vertices where some strategy reaches the goal with probability one,
    together with the actions that keep the process inside that region."""
    goal = np.array([v in mdp.goal for v in mdp.vertices])
    alive = np.ones(mdp.n, dtype=bool)
    while True:
        allowed = _allowed(mdp, alive)
        adj = np.zeros((mdp.n, mdp.n), dtype=bool)
        for v, ok in allowed.items():
            if ok.any():
                adj[mdp.index[v]] = (mdp.trans[v][ok] > 0).any(axis=0)
        new = _backward_reach(adj, goal) & alive
        if (new == alive).all():
            return alive, allowed
        alive = new


def _proper_strategy(mdp: Dtmdp, alive, allowed) -> Dict[str, int]:
    goal = np.array([v in mdp.goal for v in mdp.vertices])
    done = goal.copy()
    choice = {}
    while True:
        progress = False
        for v in mdp.vertices:
            i = mdp.index[v]
            if done[i] or not alive[i]:
                continue
            hits = np.flatnonzero(allowed[v] & (mdp.trans[v][:, done] > 0).any(axis=1))
            if hits.size:
                choice[v] = int(hits[0])
                progress = True
        for v in choice:
            done[mdp.index[v]] = True
        if not progress:
            return choice


def optimal_strategy(mdp: Dtmdp, tol: float = 1e-12) -> Tuple[Strategy, float]:
    """Minimal expected total cost by policy iteration.

    Starts from a proper strategy; an action replaces the current one only if
    it improves by more than ``tol`` (relative), and among the improving
    minimizers the lowest action index wins.
    """
    alive, allowed = almost_sure_region(mdp)
    if not alive[mdp.index[mdp.init]]:
        raise InfiniteValueError("the goal cannot be reached almost surely from the initial vertex")
    choice = _proper_strategy(mdp, alive, allowed)
    live_vertices = [v for v in mdp.actions if alive[mdp.index[v]]]
    # vertices outside the region keep an arbitrary action; their value is infinite anyway
    for v in mdp.actions:
        choice.setdefault(v, 0)

    def as_strategy():
        return Strategy({v: float(mdp.actions[v][k]) for v, k in choice.items()})

    for _ in range(10_000):
        res = evaluate_strategy(mdp, as_strategy())
        x = np.where(res.finite, res.per_vertex_cost, 0.0)
        changed = False
        for v in live_vertices:
            q = mdp.cost[v] + mdp.trans[v] @ x
            q = np.where(allowed[v], q, math.inf)
            cur = choice[v]
            best = q.min()
            if best < q[cur] - tol * max(1.0, abs(q[cur])):
                choice[v] = int(np.flatnonzero(q <= best + tol * max(1.0, abs(best)))[0])
                changed = True
        if not changed:
            return as_strategy(), res.cost()
    raise RuntimeError("policy iteration did not converge")


# --------------------------------------------------------------------------
# fdCTMC-level analysis

def detect_infinite(model: NormalizedModel) -> bool:
    """True iff some bottom SCC avoiding the goal is reachable from the initial state.

    The edge structure does not depend on the (finite, positive) delays.
    """
    base = model.base
    fd = base.fd_mask
    goal = np.array([s in model.cost.goal for s in base.states])
    adj = (base.P > 0) | ((base.F > 0) & fd[:, None])
    start = np.zeros(len(base.states), dtype=bool)
    i0 = base.index(base.init)
    if goal[i0]:
        start |= adj[i0]
    else:
        start[i0] = True
    adj = adj & ~goal[:, None]
    reach = _forward_reach(adj, start)
    ncomp, labels = connected_components(csr_matrix(adj), directed=True, connection="strong")
    for comp in range(ncomp):
        members = labels == comp
        if not (members & reach).any():
            continue
        leaves = (adj[members] & ~members).any()
        if not leaves and not (members & goal).any():
            return True
    return False


def embedded_mdp(model: NormalizedModel, d: DelayFunction, theta: float = 1e-9) -> Dtmdp:
    """Single-action MDP whose rows are the exact kernel at the given delays.

    ``d`` maps reset states of ``model`` to delays (see ``NormalizedModel.lift_delays``).
    """
    rows = {}
    for v in model.mdp_states:
        if v in model.cost.goal:
            continue
        if v in model.reset:
            rows[v] = [VertexKernel(model, v).row(d[v], theta)]
        else:
            rows[v] = [kernel_row_exp(model, v)]
    return Dtmdp.from_rows(model.mdp_states, model.cost.goal & set(model.mdp_states),
                           model.base.init, rows)


@dataclass
class FdCtmcResult:
    cost: float
    reach: Dict[str, float]
    evaluation: EvalResult
    error_bound: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.cost)


def evaluate_fdctmc(model: NormalizedModel, d: DelayFunction, theta: float = 1e-9,
                    lifted: bool = False) -> FdCtmcResult:
    """Expected total cost before the goal and first-goal probabilities for fixed delays.

    ``d`` is given on the original states unless ``lifted`` is set.  Goal
    probabilities are reported on original state names.
    """
    dl = d if lifted else model.lift_delays(d)
    mdp = embedded_mdp(model, dl, theta)
    strategy = Strategy({v: float(mdp.actions[v][0]) for v in mdp.actions})
    res = evaluate_strategy(mdp, strategy)

    init = model.base.init
    if init in model.cost.goal:
        # the run has to leave the goal once before it counts as reaching it
        row = (VertexKernel(model, init).row(dl[init], theta) if init in model.reset
               else kernel_row_exp(model, init))
        x = np.where(res.finite, res.per_vertex_cost, math.inf)
        with np.errstate(invalid="ignore"):
            cost = row.cost + float(np.sum(np.where(row.probs > 0, row.probs * x, 0.0)))
        reach_vec = row.probs @ res.reach_matrix
    else:
        cost = res.cost()
        reach_vec = res.reach_matrix[mdp.index[init]]
    reach: Dict[str, float] = {}
    for g, p in zip(res.goals, reach_vec):
        orig = model.lift[g]
        reach[orig] = reach.get(orig, 0.0) + float(p)

    finite_steps = res.per_vertex_steps[res.finite]
    finite_cost = res.per_vertex_cost[res.finite]
    if math.isfinite(cost) and finite_steps.size:
        err = 2 * theta * finite_steps.max() * (1 + finite_cost.max() * mdp.n)
    else:
        err = math.inf
    return FdCtmcResult(cost, reach, res, err)
