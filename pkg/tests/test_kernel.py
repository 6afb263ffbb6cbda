import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdctmc import (CostStructure, DelayFunction, FdCtmcStructure, build_model, build_subordinated,
                    kernel_row, kernel_row_exp, normalize, poisson_terms, round_row)
from fdctmc.kernel import ENTRY_SUFFIX, KernelRow, VertexKernel
from fdctmc.simulate import estimate_cost, estimate_reach

from models import random_model, two_stage_model


# --------------------------------------------------------------------------
# Poisson weights

def test_poisson_unit_rate():
    pt = poisson_terms(1.0, 1e-6)
    assert pt.terms[0] == pytest.approx(math.exp(-1), rel=1e-14)
    assert pt.terms.sum() >= 1 - 5e-7
    assert pt.tail_bound <= 5e-7
    assert abs(pt.terms.sum() + pt.tail_bound - 1) < 1e-12


def test_poisson_degenerate_rate():
    pt = poisson_terms(1e-300, 1e-9)
    assert pt.right <= 1
    assert pt.terms[0] == pytest.approx(1.0)


def test_poisson_against_high_precision():
    lam = 112.0
    pt = poisson_terms(lam, 1e-9)
    assert pt.terms.sum() >= 1 - 5e-10
    mpmath.mp.dps = 40
    for k in (0, 50, 112, 150, pt.right):
        exact = mpmath.exp(-lam) * mpmath.mpf(lam) ** k / mpmath.factorial(k)
        assert pt.terms[k] == pytest.approx(float(exact), rel=1e-10, abs=1e-300)


def test_poisson_large_rate_stays_finite():
    pt = poisson_terms(1e4, 1e-9)
    assert np.isfinite(pt.terms).all() and (pt.terms >= 0).all()
    assert abs(pt.terms.sum() + pt.tail_bound - 1) < 1e-12
    assert pt.tail_bound < 5e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-6, 3000), st.sampled_from([1e-3, 1e-6, 1e-9, 1e-12]))
def test_poisson_invariants(lam, theta):
    pt = poisson_terms(lam, theta)
    assert (pt.terms >= 0).all()
    assert pt.tail_bound < theta / 2
    assert abs(pt.terms.sum() + pt.tail_bound - 1) <= 1e-12


# --------------------------------------------------------------------------
# subordinated chain

def test_subordinated_two_stage():
    model = normalize(*two_stage_model())
    ch = build_subordinated(model, "two")
    idx = {s: i for i, s in enumerate(ch.states)}
    assert ch.states[ch.entry] == "two" + ENTRY_SUFFIX
    for s in ("init", "OK", "two"):
        i = idx[s]
        assert ch.absorbing[i]
        assert ch.P_bar[i, i] == 1 and ch.F_bar[i, i] == 1
        assert ch.R_bar[i] == ch.JP_bar[i] == ch.JF_bar[i] == 0
    # the fd self-loop of 'two' lands in the absorbing copy
    assert ch.F_bar[ch.entry, idx["two"]] == 1.0
    np.testing.assert_allclose(ch.P_bar.sum(axis=1), 1.0)


def test_subordinated_trivial():
    structure, cost = build_model(["s", "g"], 1.0, "s", goal=["g"], fd=["s"],
                                  P={("s", "g"): 1, ("g", "g"): 1}, F={("s", "g"): 1}, R={"s": 1})
    model = normalize(structure, cost)
    ch = build_subordinated(model, "s")
    np.testing.assert_array_equal(ch.P_bar[ch.entry, :2], structure.P[0])
    np.testing.assert_array_equal(ch.F_bar[ch.entry, :2], structure.F[0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_subordinated_paths_end_in_decision_vertices(seed):
    _, _, model = random_model(np.random.default_rng(seed))
    for s in model.reset:
        ch = build_subordinated(model, s)
        # states the running clock can visit: entry plus exponential moves
        seen = {ch.entry}
        frontier = [ch.entry]
        while frontier:
            i = frontier.pop()
            for j in np.flatnonzero(ch.P_bar[i] > 0):
                if j not in seen and not ch.absorbing[j]:
                    seen.add(j)
                    frontier.append(j)
        for i in seen:
            assert ch.absorbing[np.flatnonzero(ch.F_bar[i] > 0)].all()


# --------------------------------------------------------------------------
# kernel rows

def _closed_form_init(d):
    # from 'init': exp first w.p. 1-e^{-d} (OK 0.8, lost 0.2); 'lost' fires back to init
    q = 1 - math.exp(-d)
    probs = {"OK": 0.8 * q, "init": 0.2 * q, "two": 1 - q}
    time = q + 0.2 * (d - q)
    return probs, time + 3 * (math.exp(-d) + 0.2 * q)


@pytest.mark.parametrize("d", [0.05, 0.4, 1.0, 3.0])
def test_kernel_row_matches_closed_form(d):
    model = normalize(*two_stage_model())
    row = kernel_row(model, "init", d)
    probs, cost = _closed_form_init(d)
    for s, p in probs.items():
        assert row.probs[model.mdp_states.index(s)] == pytest.approx(p, abs=1e-9)
    assert row.cost == pytest.approx(cost, abs=1e-9)
    assert row.abs_error <= 5e-10


def test_kernel_row_two_stage_retry():
    model = normalize(*two_stage_model())
    row = kernel_row(model, "two", 0.1)
    p = dict(zip(model.mdp_states, row.probs))
    assert 0.06 <= p["OK"] <= 0.10
    assert 0.90 <= p["two"] <= 0.94
    assert p["init"] == pytest.approx(0.0, abs=1e-3)
    assert 2.8 <= row.cost <= 3.0


def test_kernel_row_tiny_delay():
    model = normalize(*two_stage_model())
    row = kernel_row(model, "init", 1e-9)
    assert row.probs[model.mdp_states.index("two")] == pytest.approx(1.0, abs=1e-8)
    assert row.cost == pytest.approx(3.0, abs=1e-8 * 3)


def test_kernel_row_requires_reset_state():
    model = normalize(*two_stage_model())
    with pytest.raises(ValueError):
        kernel_row(model, "OK", 1.0)
    with pytest.raises(ValueError):
        kernel_row(model, "init", 0.0)


def test_kernel_row_exp_examples():
    structure, cost = build_model(["s", "g"], 1.0, "s", goal=["g"],
                                  P={("s", "g"): 1, ("g", "g"): 1}, R={"s": 1})
    row = kernel_row_exp(normalize(structure, cost), "s")
    assert row.probs.tolist() == [0.0, 1.0] and row.cost == 1.0 and row.abs_error == 0
    structure, cost = build_model(["s", "a", "b"], 2.0, "s", goal=["a", "b"],
                                  P={("s", "a"): .5, ("s", "b"): .5, ("a", "a"): 1, ("b", "b"): 1},
                                  R={"s": 4}, IP={("s", "a"): 1, ("s", "b"): 3})
    assert kernel_row_exp(normalize(structure, cost), "s").cost == pytest.approx(4.0)
    model = normalize(*two_stage_model())
    with pytest.raises(ValueError):
        kernel_row_exp(model, "init")


def test_kernel_row_exp_against_simulation():
    structure, cost = build_model(["s", "a", "b"], 2.0, "s", goal=["a", "b"],
                                  P={("s", "a"): .5, ("s", "b"): .5, ("a", "a"): 1, ("b", "b"): 1},
                                  R={"s": 4}, IP={("s", "a"): 1, ("s", "b"): 3})
    est = estimate_cost(structure, cost, DelayFunction({}), 10 ** 5, seed=4)
    assert abs(est.mean - 4.0) <= 4 * est.std_error


def _one_step_model(model, s):
    """Normalized structure restarted in ``s`` with every decision vertex as goal."""
    b = model.base
    structure = FdCtmcStructure(b.states, b.rate, b.P, b.fd_states, b.F, s)
    cost = CostStructure(frozenset(model.mdp_states), model.cost.rate_cost, model.cost.imp_exp,
                         model.cost.imp_fd)
    return structure, cost


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4, 5])
def test_kernel_row_against_one_step_simulation(seed):
    rng = np.random.default_rng(100 + seed)
    _, _, model = random_model(rng)
    resets = sorted(model.reset)
    if not resets:
        pytest.skip("no reset state")
    s = resets[0]
    d = float(rng.uniform(0.2, 2.0))
    row = kernel_row(model, s, d)
    structure, cost = _one_step_model(model, s)
    delays = DelayFunction({t: d for t in structure.fd_states})
    est = estimate_cost(structure, cost, delays, 10 ** 5, seed=seed)
    assert abs(est.mean - row.cost) <= 4 * est.std_error
    reach = estimate_reach(structure, cost, delays, 10 ** 5, seed=seed + 50)
    for t, p in zip(model.mdp_states, row.probs):
        e = reach[t]
        assert abs(e.mean - p) <= 4 * max(e.std_error, 1e-3)


def test_kernel_init_row_simulated():
    # the closed form for (init, 0.4) also agrees with simulation
    model = normalize(*two_stage_model())
    structure, cost = _one_step_model(model, "init")
    d = DelayFunction({t: 0.4 for t in structure.fd_states})
    est = estimate_cost(structure, cost, d, 2 * 10 ** 5, seed=9)
    assert abs(est.mean - kernel_row(model, "init", 0.4).cost) <= 4 * est.std_error


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 3.0), st.floats(1e-4, 0.05))
def test_kernel_row_lipschitz_in_delay(seed, d, step):
    _, _, model = random_model(np.random.default_rng(seed))
    theta = 1e-9
    for s in model.reset:
        vk = VertexKernel(model, s)
        a, b = vk.row(d, theta), vk.row(d + step, theta)
        assert np.abs(a.probs - b.probs).max() <= model.rate * step + 2 * theta
        assert abs(a.probs.sum() - 1) <= len(model.mdp_states) * theta
        assert math.isfinite(a.cost) and a.cost >= 0


# --------------------------------------------------------------------------
# rounding

def _row(probs, cost=1.0, err=0.0):
    return KernelRow("s", 1.0, np.asarray(probs, dtype=float), cost, err)


def test_round_row_examples():
    r = round_row(_row([0.5, 0.5]), 0.25)
    assert r.probs.tolist() == [0.5, 0.5]
    r = round_row(_row([1 / 3, 2 / 3], cost=1.234), 0.01)
    np.testing.assert_allclose(r.probs, [0.34, 0.66])
    assert math.fsum(r.probs) == 1.0
    assert r.cost == pytest.approx(1.24)
    r = round_row(_row([0.3, 0.0, 0.7]), 0.1)
    assert r.probs[1] == 0.0


def test_round_row_rejects_bad_input():
    with pytest.raises(ValueError):
        round_row(_row([0.5, 0.5], err=0.1), 0.1)
    with pytest.raises(ValueError):
        round_row(_row([0.3, 0.3, 0.4]), 0.9)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.sampled_from([1e-2, 1e-3, 1e-6, 1e-9]),
       st.floats(0, 10))
def test_round_row_invariants(weights, kappa, cost):
    w = np.array(weights)
    w[w < 1e-3] = 0.0
    if w.sum() == 0:
        w[0] = 1.0
    p = w / w.sum()
    if kappa * np.count_nonzero(p) >= 0.5:
        return
    r = round_row(_row(p, cost), kappa)
    assert math.fsum(r.probs) == 1.0
    assert ((r.probs == 0) == (p == 0)).all()
    top = int(np.argmax(p))
    rest = np.arange(p.size) != top
    assert np.abs(r.probs - p)[rest].max(initial=0) <= kappa * (1 + 1e-9)
    # entries below kappa must still round up to kappa; the largest entry absorbs that
    forced = sum(kappa - x for j, x in enumerate(p) if j != top and 0 < x < kappa)
    assert abs(r.probs[top] - p[top]) <= max(kappa, forced) * (1 + 1e-9)
    assert cost <= r.cost <= cost + kappa * (1 + 1e-9)
