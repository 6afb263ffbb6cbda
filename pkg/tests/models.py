"""Shared model builders for the test suite."""

import itertools
import math

import numpy as np

from fdctmc import Dtmdp, build_model, normalize
from fdctmc.kernel import KernelRow
from fdctmc.mdp import detect_infinite


def intro_model():
    """Three-state model: a restart timeout on 'init', an fd loss state 'lost'."""
    S = ["init", "lost", "OK"]
    return build_model(
        S, 1.0, "init", goal=["OK"], fd=["init", "lost"],
        P={("init", "lost"): 0.2, ("init", "OK"): 0.8, ("lost", "lost"): 1.0, ("OK", "OK"): 1.0},
        F={("init", "init"): 1.0, ("lost", "init"): 1.0},
        R={s: 1.0 for s in S},
        IF={("init", "init"): 3.0, ("lost", "init"): 3.0},
    )


def two_stage_model():
    """Intro model with a second retry stage 'two'; needs 'init' duplicated."""
    S = ["init", "lost", "two", "OK"]
    return build_model(
        S, 1.0, "init", goal=["OK"], fd=["init", "lost", "two"],
        P={("init", "lost"): 0.2, ("init", "OK"): 0.8, ("two", "init"): 0.2, ("two", "OK"): 0.8,
           ("lost", "lost"): 1.0, ("OK", "OK"): 1.0},
        F={("lost", "init"): 1.0, ("init", "two"): 1.0, ("two", "two"): 1.0},
        R={s: 1.0 for s in S},
        IF={("lost", "init"): 3.0, ("init", "two"): 3.0, ("two", "two"): 3.0},
    )


def alternating_model():
    """Two fd states bouncing between each other, both leaving to 't' at rate 1."""
    return build_model(
        ["a", "t", "b"], 1.0, "a", goal=["t"], fd=["a", "b"],
        P={("a", "t"): 1.0, ("b", "t"): 1.0, ("t", "t"): 1.0},
        F={("a", "b"): 1.0, ("b", "a"): 1.0},
        R={"a": 2.0, "b": 1.0},
    )


def unit_model():
    """One non-fd state leaving to the goal; every constant equals 1."""
    return build_model(["s", "g"], 1.0, "s", goal=["g"],
                       P={("s", "g"): 1.0, ("g", "g"): 1.0}, R={"s": 1.0, "g": 1.0})


def random_model(rng: np.random.Generator, n_states=None, n_goals=1, min_rate=0.5,
                 fd_fraction=0.6, impulses=True):
    """Random model with finite expected cost (rejection on the structural check)."""
    while True:
        n = int(n_states or rng.integers(3, 7))
        states = [f"q{i}" for i in range(n)]
        goals = states[n - n_goals:]
        rest = states[: n - n_goals]
        fd = [s for s in rest if rng.random() < fd_fraction]
        P, F, IP, IF = {}, {}, {}, {}
        for s in states:
            if s in goals:
                P[(s, s)] = 1.0
                continue
            k = int(rng.integers(1, min(3, n) + 1))
            targets = rng.choice(n, size=k, replace=False)
            w = rng.dirichlet(np.ones(k))
            for t, p in zip(targets, w):
                P[(s, states[t])] = float(p)
                if impulses and rng.random() < 0.5:
                    IP[(s, states[t])] = float(rng.uniform(0, 2))
            if s in fd:
                k = int(rng.integers(1, min(2, n) + 1))
                targets = rng.choice(n, size=k, replace=False)
                w = rng.dirichlet(np.ones(k))
                for t, p in zip(targets, w):
                    F[(s, states[t])] = float(p)
                    if impulses and rng.random() < 0.5:
                        IF[(s, states[t])] = float(rng.uniform(0, 3))
        R = {s: float(rng.uniform(min_rate, 2.0)) for s in states}
        rate = float(rng.uniform(0.5, 2.0))
        structure, cost = build_model(states, rate, states[0], goal=goals, fd=fd, P=P, F=F, R=R,
                                      IP=IP, IF=IF)
        model = normalize(structure, cost)
        if not detect_infinite(model):
            return structure, cost, model


def random_delays(rng, structure, lo=0.2, hi=2.0):
    from fdctmc import DelayFunction
    return DelayFunction({s: float(rng.uniform(lo, hi)) for s in structure.states
                          if s in structure.fd_states})


# --------------------------------------------------------------------------
# decision processes

def mdp_from(table, goal, init="v0"):
    """``table[v]`` is a list of (probs dict, cost) pairs."""
    vertices = sorted(set(table) | set(goal))
    rows = {}
    for v, acts in table.items():
        rows[v] = []
        for k, (dist, cost) in enumerate(acts):
            probs = np.array([dist.get(u, 0.0) for u in vertices])
            rows[v].append(KernelRow(v, float(k + 1), probs, cost))
    return Dtmdp.from_rows(vertices, set(goal), init, rows)


def random_mdp(rng, n=None, max_actions=4):
    n = int(n or rng.integers(2, 6))
    names = [f"v{i}" for i in range(n - 1)]
    vertices = names + ["g"]
    table = {}
    for v in names:
        acts = []
        for k in range(int(rng.integers(1, max_actions + 1))):
            support = rng.choice(len(vertices), size=int(rng.integers(1, 4)), replace=True)
            w = rng.dirichlet(np.ones(len(support)))
            dist = {}
            for t, p in zip(support, w):
                dist[vertices[t]] = dist.get(vertices[t], 0.0) + float(p)
            acts.append((dist, float(rng.uniform(0.1, 5.0))))
        # one action with a positive exit keeps the optimum finite
        j = int(rng.integers(len(acts)))
        dist = dict(acts[j][0])
        dist = {u: p * 0.7 for u, p in dist.items()}
        dist["g"] = dist.get("g", 0.0) + 0.3
        acts[j] = (dist, acts[j][1])
        table[v] = acts
    return mdp_from(table, ["g"])


def brute_force_value(mdp):
    """Minimum over all deterministic strategies, each evaluated by a plain dense solve."""
    verts = [v for v in mdp.vertices if v not in mdp.goal]
    idx = [mdp.index[v] for v in verts]
    gidx = [mdp.index[v] for v in mdp.vertices if v in mdp.goal]
    best = math.inf
    for choice in itertools.product(*(range(len(mdp.actions[v])) for v in verts)):
        T = np.zeros((mdp.n, mdp.n))
        c = np.zeros(mdp.n)
        for v, k in zip(verts, choice):
            T[mdp.index[v]] = mdp.trans[v][k]
            c[mdp.index[v]] = mdp.cost[v][k]
        for g in gidx:
            T[g, g] = 1.0
        absorbed = np.linalg.matrix_power(T, 4096)[:, gidx].sum(axis=1)
        if absorbed[mdp.index[mdp.init]] < 1 - 1e-9:
            continue
        ok = absorbed > 1 - 1e-9
        # restrict to vertices that are absorbed almost surely
        sub = [i for i in idx if ok[i]]
        Q = T[np.ix_(sub, sub)]
        x = np.linalg.solve(np.eye(len(sub)) - Q, c[sub])
        best = min(best, x[sub.index(mdp.index[mdp.init])])
    return best
