"""Reduction gadget from CNF satisfiability to the bounded observation threshold problem.

Each clause becomes a cycle of literal components linked by fixed-delay
exits.  A positive literal needs a long delay in its entry state to reach its
goal through a chain of 8k exponential steps; a negative literal needs a
short one.  Entry states of literals over the same variable share an
observation class, so a delay function picks one truth value per variable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Tuple

from .model import (CostStructure, DelayFunction, FdCtmcStructure, ModelError,
                    ObservationRelation, build_model)

D_MIN = 0.01
EPSILON = 0.5
INIT = "s_in"


@dataclass(frozen=True)
class CnfFormula:
    num_vars: int
    clauses: Tuple[Tuple[int, ...], ...]  # DIMACS-style signed literals

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(tuple(int(l) for l in c) for c in self.clauses))
        if not self.clauses:
            raise ValueError("formula has no clauses")
        for c in self.clauses:
            if not c:
                raise ValueError("empty clause")
            for lit in c:
                if lit == 0 or abs(lit) > self.num_vars:
                    raise ValueError(f"literal {lit} out of range 1..{self.num_vars}")

    @property
    def k(self) -> int:
        """Total number of literal occurrences."""
        return sum(len(c) for c in self.clauses)

    def satisfied_by(self, nu: Mapping[int, bool]) -> bool:
        return all(any(nu[abs(l)] == (l > 0) for l in c) for c in self.clauses)


def parse_dimacs(text: str) -> CnfFormula:
    """Read a DIMACS CNF file (``c`` comments, ``p cnf V C`` header, 0-terminated clauses)."""
    num_vars = None
    clauses: List[List[int]] = []
    current: List[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise ModelError("malformed DIMACS header", lineno)
            num_vars = int(parts[2])
            continue
        if num_vars is None:
            raise ModelError("clause before DIMACS header", lineno)
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise ModelError(f"bad literal {tok!r}", lineno) from None
            if lit == 0:
                if not current:
                    raise ModelError("empty clause", lineno)
                clauses.append(current)
                current = []
            else:
                current.append(lit)
    if current:
        clauses.append(current)
    if num_vars is None:
        raise ModelError("missing DIMACS header")
    return CnfFormula(num_vars, tuple(tuple(c) for c in clauses))


class Gadget(NamedTuple):
    structure: FdCtmcStructure
    cost: CostStructure
    relation: ObservationRelation
    d_min: float
    d_max: float
    x: float
    epsilon: float


def _name(i: int, j: int, m) -> str:
    return f"c{i}l{j}s{m}"


def _goal(i: int, j: int) -> str:
    return f"c{i}l{j}g"


def build_gadget(phi: CnfFormula) -> Gadget:
    """fdCTMC, costs, observation classes and threshold data for ``phi``."""
    k = phi.k
    if k < 7:
        warnings.warn(f"k = {k} < 7: the unsatisfiable case is only separated for k >= 7",
                      stacklevel=2)
    chain = 8 * k
    n_clauses = len(phi.clauses)
    states = [INIT]
    fd = [INIT]
    goal = []
    P: Dict[Tuple[str, str], float] = {(INIT, INIT): 1.0}
    F: Dict[Tuple[str, str], float] = {}
    by_var: Dict[int, List[str]] = {}

    for i, clause in enumerate(phi.clauses):
        F[(INIT, _name(i, 0, 0))] = F.get((INIT, _name(i, 0, 0)), 0.0) + 1.0 / n_clauses
        for j, lit in enumerate(clause):
            nxt = _name(i, (j + 1) % len(clause), 0)
            g = _goal(i, j)
            by_var.setdefault(abs(lit), []).append(_name(i, j, 0))
            if lit > 0:
                chain_states = [_name(i, j, m) for m in range(chain + 1)]
                states += chain_states + [g]
                fd += chain_states
                for m in range(chain):
                    P[(chain_states[m], chain_states[m + 1])] = 1.0
                    F[(chain_states[m], nxt)] = 1.0
                top = chain_states[chain]
                P[(top, top)] = 1.0
                F[(top, g)] = 1.0
            else:
                s0, s1 = _name(i, j, 0), _name(i, j, 1)
                states += [s0, s1, g]
                fd += [s0, s1]
                F[(s0, g)] = 1.0
                P[(s0, s1)] = 1.0
                P[(s1, s1)] = 1.0
                F[(s1, nxt)] = 1.0
            P[(g, g)] = 1.0
            goal.append(g)

    structure, cost = build_model(states, 1.0, INIT, goal=goal, fd=fd, P=P, F=F,
                                  R={s: 1.0 for s in states})
    blocks = [tuple(by_var[v]) for v in sorted(by_var)]
    relation = ObservationRelation.completed(blocks, [s for s in states if s in structure.fd_states])
    return Gadget(structure, cost, relation, D_MIN, 16.0 * k, 17.0 * k * k + 0.5, EPSILON)


def assignment_strategy(phi: CnfFormula, nu: Mapping[int, bool], gadget: Gadget) -> DelayFunction:
    """Long delay on entry states of literals whose variable is true, short elsewhere."""
    missing = [v for v in range(1, phi.num_vars + 1) if v not in nu]
    if missing:
        raise ValueError(f"assignment misses variables {missing}")
    delays = {s: gadget.d_min for s in gadget.structure.fd_states}
    for i, clause in enumerate(phi.clauses):
        for j, lit in enumerate(clause):
            delays[_name(i, j, 0)] = gadget.d_max if nu[abs(lit)] else gadget.d_min
    return DelayFunction(delays)
