"""Fixed-delay CTMC structures, cost structures and the model file format.

A model file is line-oriented text with ``#`` comments::

    states: init lost OK
    rate: 1
    init: init
    goal: OK
    fd: init lost
    P: init lost 0.2
    P: init OK 0.8
    P: lost lost 1
    P: OK OK 1
    F: init init 1
    F: lost init 1
    R: init 1
    IF: init init 3
    obs: init lost

Omitted matrix entries and costs are zero.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

ROW_TOL = 1e-9
KEEP_SUFFIX = "#keep"


class ModelError(ValueError):
    """Raised for malformed or inconsistent models."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class FdCtmcStructure:
    states: Tuple[str, ...]
    rate: float
    P: np.ndarray
    fd_states: FrozenSet[str]
    F: np.ndarray  # rows indexed like ``states``; only rows of fd states are meaningful
    init: str

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})
        self.P.setflags(write=False)
        self.F.setflags(write=False)

    def index(self, state: str) -> int:
        try:
            return self._index[state]
        except KeyError:
            raise ModelError(f"unknown state {state!r}") from None

    def is_fd(self, state: str) -> bool:
        return state in self.fd_states

    @property
    def fd_mask(self) -> np.ndarray:
        return np.array([s in self.fd_states for s in self.states])

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class CostStructure:
    goal: FrozenSet[str]
    rate_cost: np.ndarray  # per state, cost per time unit
    imp_exp: np.ndarray  # |S| x |S|
    imp_fd: np.ndarray  # |S| x |S|

    def __post_init__(self):
        for arr in (self.rate_cost, self.imp_exp, self.imp_fd):
            arr.setflags(write=False)


@dataclass(frozen=True)
class DelayFunction:
    """Delays for fd states; states outside ``S_fd`` implicitly get infinity."""

    delays: Mapping[str, float]

    def __post_init__(self):
        for s, d in self.delays.items():
            if not (d > 0 and math.isfinite(d)):
                raise ModelError(f"delay for {s!r} must be finite and positive, got {d!r}")
        object.__setattr__(self, "delays", dict(self.delays))

    def __getitem__(self, state: str) -> float:
        return self.delays[state]

    def get(self, state: str, default=None):
        return self.delays.get(state, default)

    def __contains__(self, state):
        return state in self.delays

    def items(self):
        return self.delays.items()

    @classmethod
    def constant(cls, structure: FdCtmcStructure, value: float) -> "DelayFunction":
        return cls({s: value for s in structure.states if s in structure.fd_states})


@dataclass(frozen=True)
class ObservationRelation:
    classes: Tuple[Tuple[str, ...], ...]

    def class_of(self, state: str) -> int:
        for i, block in enumerate(self.classes):
            if state in block:
                return i
        raise KeyError(state)

    @classmethod
    def completed(cls, blocks: Sequence[Sequence[str]], fd_states: Sequence[str]) -> "ObservationRelation":
        """Add singleton blocks for fd states not mentioned in ``blocks``."""
        seen = set()
        out = []
        for block in blocks:
            block = tuple(block)
            if not block:
                raise ModelError("empty observation class")
            for s in block:
                if s in seen:
                    raise ModelError(f"state {s!r} appears in two observation classes")
                if s not in fd_states:
                    raise ModelError(f"observation class mentions non-fd state {s!r}")
                seen.add(s)
            out.append(block)
        out.extend((s,) for s in fd_states if s not in seen)
        return cls(tuple(out))


@dataclass(frozen=True)
class ModelConstants:
    min_rate: float
    max_rate: float
    min_prob: float


@dataclass(frozen=True)
class NormalizedModel:
    """A model in which every fd state is either reset or keep, never both.

    ``mdp_states`` is the vertex set of the embedded decision process:
    reset states, states without fixed-delay transitions, and goal states.
    """

    base: FdCtmcStructure
    cost: CostStructure
    reset: FrozenSet[str]
    keep: FrozenSet[str]
    mdp_states: Tuple[str, ...]
    lift: Mapping[str, str]

    @property
    def states(self):
        return self.base.states

    @property
    def rate(self):
        return self.base.rate

    def mdp_index(self) -> Dict[str, int]:
        return {s: i for i, s in enumerate(self.mdp_states)}

    def lift_delays(self, d: DelayFunction) -> DelayFunction:
        """Translate a delay function on the original model to the reset states."""
        out = {}
        for s in self.reset:
            orig = self.lift[s]
            if orig not in d:
                raise ModelError(f"delay function misses fd state {orig!r}")
            out[s] = d[orig]
        return DelayFunction(out)

    def lower_delays(self, d: Mapping[str, float]) -> DelayFunction:
        """Translate delays on reset states back to original state names."""
        out = {}
        for s, v in d.items():
            orig = self.lift[s]
            if orig in out and out[orig] != v:
                raise ModelError(f"copies of {orig!r} received different delays")
            out[orig] = v
        return DelayFunction(out)


# --------------------------------------------------------------------------
# construction helpers

def build_model(
    states: Sequence[str],
    rate: float,
    init: str,
    goal: Sequence[str] = (),
    fd: Sequence[str] = (),
    P: Mapping[Tuple[str, str], float] = None,
    F: Mapping[Tuple[str, str], float] = None,
    R: Mapping[str, float] = None,
    IP: Mapping[Tuple[str, str], float] = None,
    IF: Mapping[Tuple[str, str], float] = None,
) -> Tuple[FdCtmcStructure, CostStructure]:
    """Assemble a structure and cost structure from sparse dictionaries."""
    states = tuple(states)
    if len(set(states)) != len(states):
        raise ModelError("duplicate state identifier")
    idx = {s: i for i, s in enumerate(states)}
    n = len(states)

    def lookup(s):
        if s not in idx:
            raise ModelError(f"unknown state {s!r}")
        return idx[s]

    def matrix(entries):
        m = np.zeros((n, n))
        for (a, b), v in (entries or {}).items():
            m[lookup(a), lookup(b)] = v
        return m

    rate_cost = np.zeros(n)
    for s, v in (R or {}).items():
        rate_cost[lookup(s)] = v
    for s in list(goal) + list(fd) + [init]:
        lookup(s)
    structure = FdCtmcStructure(states, float(rate), matrix(P), frozenset(fd), matrix(F), init)
    cost = CostStructure(frozenset(goal), rate_cost, matrix(IP), matrix(IF))
    return structure, cost


# --------------------------------------------------------------------------
# parsing and serialization

_PAIR_KEYS = {"P", "F", "IP", "IF"}
_LIST_KEYS = {"states", "goal", "fd"}


def parse_model(text: str) -> Tuple[FdCtmcStructure, CostStructure, Optional[ObservationRelation]]:
    """Parse a model file.

    Rows of P and F whose sum is off by less than ``ROW_TOL`` are renormalized;
    larger deviations raise :class:`ModelError`.
    """
    header: Dict[str, object] = {}
    pairs: Dict[str, Dict[Tuple[str, str], float]] = {k: {} for k in _PAIR_KEYS}
    rates: Dict[str, float] = {}
    obs: List[List[str]] = []
    where: Dict[object, int] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep:
            raise ModelError(f"expected '<key>: ...', got {line!r}", lineno)
        toks = rest.split()
        if key in _LIST_KEYS or key in ("rate", "init"):
            if key in header:
                raise ModelError(f"duplicate declaration of {key!r}", lineno)
            if key in _LIST_KEYS:
                header[key] = toks
            else:
                if len(toks) != 1:
                    raise ModelError(f"{key!r} takes exactly one value", lineno)
                header[key] = toks[0]
            where[key] = lineno
        elif key in _PAIR_KEYS:
            if len(toks) != 3:
                raise ModelError(f"{key} entries need '<s> <s2> <value>'", lineno)
            a, b, v = toks
            if (a, b) in pairs[key]:
                raise ModelError(f"duplicate {key} entry for ({a}, {b})", lineno)
            pairs[key][(a, b)] = _number(v, lineno)
            where[(key, a, b)] = lineno
        elif key == "R":
            if len(toks) != 2:
                raise ModelError("R entries need '<s> <cost>'", lineno)
            if toks[0] in rates:
                raise ModelError(f"duplicate R entry for {toks[0]}", lineno)
            rates[toks[0]] = _number(toks[1], lineno)
            where[("R", toks[0])] = lineno
        elif key == "obs":
            if not toks:
                raise ModelError("empty observation class", lineno)
            obs.append(toks)
            where[("obs", len(obs) - 1)] = lineno
        else:
            raise ModelError(f"unknown key {key!r}", lineno)

    for key in ("states", "rate", "init"):
        if key not in header:
            raise ModelError(f"missing '{key}:' declaration")
    states = header["states"]
    known = set(states)
    if len(known) != len(states):
        raise ModelError("duplicate state identifier", where["states"])

    def check(s, loc):
        if s not in known:
            raise ModelError(f"unknown state identifier {s!r}", where.get(loc))

    check(header["init"], "init")
    for k in ("goal", "fd"):
        for s in header.get(k, []):
            check(s, k)
    for k, entries in pairs.items():
        for a, b in entries:
            check(a, (k, a, b))
            check(b, (k, a, b))
    for s in rates:
        check(s, ("R", s))
    fd = set(header.get("fd", []))
    for (a, b) in pairs["F"]:
        if a not in fd:
            raise ModelError(f"F row for non-fd state {a!r}", where[("F", a, b)])

    rate = _number(header["rate"], where["rate"])
    structure, cost = build_model(
        states, rate, header["init"], header.get("goal", []), header.get("fd", []),
        pairs["P"], pairs["F"], rates, pairs["IP"], pairs["IF"],
    )
    structure = _renormalized(structure)
    relation = None
    if obs:
        fd_order = [s for s in states if s in fd]
        for i, block in enumerate(obs):
            for s in block:
                check(s, ("obs", i))
        relation = ObservationRelation.completed(obs, fd_order)
    return structure, cost, relation


_COMMENT = re.compile(r"(^|\s)#.*$")


def _strip_comment(raw: str) -> str:
    # '#' inside an identifier (as in duplicated states) is not a comment
    return _COMMENT.sub("", raw).strip()


def _number(tok: str, lineno) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ModelError(f"not a number: {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise ModelError(f"not a finite number: {tok!r}", lineno)
    return v


def _renormalized(structure: FdCtmcStructure) -> FdCtmcStructure:
    P = structure.P.copy()
    F = structure.F.copy()
    for i, s in enumerate(structure.states):
        P[i] = _fix_row(P[i], "P", s)
        if s in structure.fd_states:
            F[i] = _fix_row(F[i], "F", s)
    return FdCtmcStructure(structure.states, structure.rate, P, structure.fd_states, F, structure.init)


def _fix_row(row, name, state):
    total = row.sum()
    if abs(total - 1.0) > ROW_TOL:
        raise ModelError(f"row of {name} does not sum to 1 (state {state!r}, sum = {total:.12g})")
    if abs(total - 1.0) <= 4 * np.finfo(float).eps * len(row):
        return row  # float noise only; keeps parse/serialize exact
    return row / total


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_model(structure: FdCtmcStructure, cost: CostStructure,
                    relation: Optional[ObservationRelation] = None) -> str:
    """Write the canonical text form; ``parse_model`` inverts it exactly."""
    S = structure.states
    out = [
        "states: " + " ".join(S),
        "rate: " + _fmt(structure.rate),
        "init: " + structure.init,
    ]
    goal = [s for s in S if s in cost.goal]
    fd = [s for s in S if s in structure.fd_states]
    if goal:
        out.append("goal: " + " ".join(goal))
    if fd:
        out.append("fd: " + " ".join(fd))
    for name, m, rows in (("P", structure.P, S), ("F", structure.F, fd)):
        for a in rows:
            i = structure.index(a)
            for j, b in enumerate(S):
                if m[i, j] != 0:
                    out.append(f"{name}: {a} {b} {_fmt(m[i, j])}")
    for i, s in enumerate(S):
        if cost.rate_cost[i] != 0:
            out.append(f"R: {s} {_fmt(cost.rate_cost[i])}")
    for name, m in (("IP", cost.imp_exp), ("IF", cost.imp_fd)):
        for i, a in enumerate(S):
            for j, b in enumerate(S):
                if m[i, j] != 0:
                    out.append(f"{name}: {a} {b} {_fmt(m[i, j])}")
    if relation is not None:
        for block in relation.classes:
            if len(block) > 1:
                out.append("obs: " + " ".join(block))
    return "\n".join(out) + "\n"


def parse_delays(text: str, structure: FdCtmcStructure) -> DelayFunction:
    """Parse ``<state> <decimal>`` lines; every fd state must be listed."""
    delays = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        toks = line.replace(":", " ").split()
        if len(toks) != 2:
            raise ModelError(f"expected '<state> <delay>', got {line!r}", lineno)
        s, v = toks
        if s not in structure.fd_states:
            raise ModelError(f"{s!r} is not a fixed-delay state", lineno)
        if s in delays:
            raise ModelError(f"duplicate delay for {s!r}", lineno)
        delays[s] = _number(v, lineno)
    missing = [s for s in structure.states if s in structure.fd_states and s not in delays]
    if missing:
        raise ModelError("no delay given for fd states: " + " ".join(missing))
    return DelayFunction(delays)


# --------------------------------------------------------------------------
# validation

def validate(structure: FdCtmcStructure, cost: CostStructure, synthesis: bool = False) -> List[str]:
    """Return diagnostics for violated invariants (empty when the model is fine).

    With ``synthesis=True`` every non-goal state must carry a positive rate cost.
    """
    diags = []
    S = structure.states
    if not structure.rate > 0:
        diags.append(f"rate must be positive, got {structure.rate}")
    if structure.init not in S:
        diags.append(f"initial state {structure.init!r} is not a state")
    for s in structure.fd_states:
        if s not in S:
            diags.append(f"fd state {s!r} is not a state")
    for s in cost.goal:
        if s not in S:
            diags.append(f"goal state {s!r} is not a state")
    for name, m, rows in (("P", structure.P, S), ("F", structure.F, [s for s in S if s in structure.fd_states])):
        for s in rows:
            row = m[structure.index(s)]
            if (row < 0).any():
                diags.append(f"row of {name} for {s!r} has a negative entry")
            if abs(row.sum() - 1.0) > ROW_TOL:
                diags.append(f"row sum != 1: {name}[{s}] sums to {row.sum():.12g}")
    for i, s in enumerate(S):
        if s not in structure.fd_states and structure.F[i].any():
            diags.append(f"F has a row for non-fd state {s!r}")
    if (cost.rate_cost < 0).any():
        diags.append("negative rate cost")
    if (cost.imp_exp < 0).any() or (cost.imp_fd < 0).any():
        diags.append("negative impulse cost")
    if synthesis:
        for i, s in enumerate(S):
            if s not in cost.goal and not cost.rate_cost[i] > 0:
                diags.append(f"positive rate cost required for synthesis: R({s}) = {cost.rate_cost[i]}")
    return diags


# --------------------------------------------------------------------------
# normalization

def classify(structure: FdCtmcStructure) -> Tuple[set, set]:
    """Return the fd states that need a reset copy and those that need a keep copy."""
    fd = structure.fd_mask
    P, F = structure.P, structure.F
    reset, keep = set(), set()
    for j, t in enumerate(structure.states):
        if not fd[j]:
            continue
        from_exp_nonfd = (P[~fd, j] > 0).any()
        from_fd_fire = (F[fd, j] > 0).any()
        from_exp_fd = (P[fd, j] > 0).any()
        if from_exp_nonfd or from_fd_fire or t == structure.init:
            reset.add(t)
        if from_exp_fd:
            keep.add(t)
        if t not in reset and t not in keep:
            # unreachable; a decision vertex is harmless
            reset.add(t)
    return reset, keep


def normalize(structure: FdCtmcStructure, cost: CostStructure) -> NormalizedModel:
    """Split fd states that are entered both with a fresh and a running clock."""
    reset, keep = classify(structure)
    both = [s for s in structure.states if s in reset and s in keep]
    old = structure.states
    new_states = list(old) + [s + KEEP_SUFFIX for s in both]
    for s in both:
        if s + KEEP_SUFFIX in old:
            raise ModelError(f"state name {s + KEEP_SUFFIX!r} clashes with duplication scheme")
    lift = {s: s for s in old}
    lift.update({s + KEEP_SUFFIX: s for s in both})
    n_old, n = len(old), len(new_states)
    src = [old.index(lift[s]) for s in new_states]  # original row for each new state

    fd_old = structure.fd_mask
    fd_new = np.array([fd_old[i] for i in src])
    # target column for an exp step entering ``t`` from an fd / non-fd state
    keep_col = {old.index(s): n_old + k for k, s in enumerate(both)}

    P = np.zeros((n, n))
    F = np.zeros((n, n))
    IP = np.zeros((n, n))
    IF = np.zeros((n, n))
    for i in range(n):
        o = src[i]
        for j in range(n_old):
            col = keep_col.get(j, j) if fd_new[i] else j
            P[i, col] += structure.P[o, j]
            IP[i, col] = cost.imp_exp[o, j]
            F[i, j] = structure.F[o, j]
            IF[i, j] = cost.imp_fd[o, j]
    R = np.array([cost.rate_cost[o] for o in src])
    fd_set = frozenset(s for s, f in zip(new_states, fd_new) if f)
    goal = frozenset(s for s in new_states if lift[s] in cost.goal)
    base = FdCtmcStructure(tuple(new_states), structure.rate, P, fd_set, F, structure.init)
    ncost = CostStructure(goal, R, IP, IF)

    reset_new = frozenset(s for s in new_states if s in fd_set and (s in reset and s in old))
    keep_new = fd_set - reset_new
    mdp_states = tuple(s for s in new_states if s in reset_new or s not in fd_set or s in goal)
    return NormalizedModel(base, ncost, reset_new, keep_new, mdp_states, lift)


def constants(structure: FdCtmcStructure, cost: CostStructure) -> ModelConstants:
    fd = structure.fd_mask
    impulses = np.concatenate([cost.imp_exp.ravel(), cost.imp_fd[fd].ravel()])
    pos_imp = impulses[impulses > 0]
    rates = np.asarray(cost.rate_cost)
    pool = np.concatenate([rates, pos_imp])
    positive = pool[pool > 0]
    if positive.size == 0:
        raise ModelError("no positive cost")
    probs = np.concatenate([structure.P.ravel(), structure.F[fd].ravel()])
    probs = probs[probs > 0]
    return ModelConstants(
        min_rate=float(positive.min()),
        max_rate=float(pool.max()),
        min_prob=float(probs.min()),
    )
