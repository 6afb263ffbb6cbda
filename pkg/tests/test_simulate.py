import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdctmc import DelayFunction, build_model, evaluate_fdctmc, normalize
from fdctmc.simulate import estimate_cost, estimate_reach, sample_run

from models import alternating_model, intro_model, random_delays, random_model, two_stage_model


def test_same_seed_same_trace():
    structure, cost = intro_model()
    d = DelayFunction({"init": 0.7, "lost": 1.3})
    a, b = sample_run(structure, cost, d, seed=5), sample_run(structure, cost, d, seed=5)
    assert a.trace == b.trace and a.total_cost == b.total_cost
    assert estimate_cost(structure, cost, d, 500, seed=3) == estimate_cost(structure, cost, d, 500, seed=3)


def test_tiny_delay_fires_first():
    structure, cost = intro_model()
    run = sample_run(structure, cost, DelayFunction({"init": 1e-9, "lost": 1.0}), seed=1,
                     max_steps=1)
    step = run.trace[0]
    assert step.kind == "fd" and step.sojourn == 1e-9
    assert run.total_cost == pytest.approx(3 + 1e-9)
    assert run.truncated and run.hit_goal is None


def test_exponential_sojourn_mean():
    structure, cost = build_model(["s", "g"], 2.5, "s", goal=["g"],
                                  P={("s", "g"): 1, ("g", "g"): 1}, R={"s": 1})
    est = estimate_cost(structure, cost, DelayFunction({}), 10 ** 5, seed=2)
    assert abs(est.mean - 1 / 2.5) <= 4 * est.std_error
    assert est.truncated_fraction == 0 and est.n == 10 ** 5


def test_alternating_model_cost():
    structure, cost = alternating_model()
    est = estimate_cost(structure, cost, DelayFunction({"a": 1e-4, "b": 1e-2}), 10 ** 5, seed=7)
    exact = evaluate_fdctmc(normalize(structure, cost), DelayFunction({"a": 1e-4, "b": 1e-2})).cost
    assert abs(est.mean - exact) <= 4 * est.std_error
    assert est.mean == pytest.approx(1.01, abs=0.03)


@pytest.mark.parametrize("builder, delays", [
    (intro_model, {"init": 1.0, "lost": 1.0}),
    (two_stage_model, {"init": 0.4, "lost": 1.0, "two": 0.1}),
    (alternating_model, {"a": 0.2, "b": 0.5}),
])
def test_matches_exact_evaluation(builder, delays):
    structure, cost = builder()
    d = DelayFunction(delays)
    exact = evaluate_fdctmc(normalize(structure, cost), d)
    est = estimate_cost(structure, cost, d, 10 ** 5, seed=11)
    assert abs(est.mean - exact.cost) <= 4 * est.std_error
    for g, e in estimate_reach(structure, cost, d, 10 ** 4, seed=12).items():
        assert abs(e.mean - exact.reach[g]) <= 4 * max(e.std_error, 1e-3)


def test_truncation_is_reported():
    structure, cost = build_model(["a", "b", "g"], 1.0, "a", goal=["g"],
                                  P={("a", "b"): 1, ("b", "a"): 1, ("g", "g"): 1}, R={"a": 1})
    est = estimate_cost(structure, cost, DelayFunction({}), 50, max_steps=20)
    assert est.truncated_fraction == 1.0 and est.n == 0 and math.isnan(est.mean)
    reach = estimate_reach(structure, cost, DelayFunction({}), 50, max_steps=20)
    assert reach["g"].mean == 0.0 and reach["g"].truncated_fraction == 1.0
    with pytest.raises(ValueError):
        estimate_cost(structure, cost, DelayFunction({}), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_trace_invariants(seed):
    rng = np.random.default_rng(seed)
    structure, cost, _ = random_model(rng)
    d = random_delays(rng, structure, 0.1, 2.0)
    run = sample_run(structure, cost, d, seed=seed, max_steps=2000)
    fd = structure.fd_states
    for prev, nxt in zip(run.trace, run.trace[1:]):
        assert prev.sojourn >= 0 and prev.sojourn <= prev.remaining
        if prev.kind == "exp" and prev.state in fd and nxt.state in fd:
            assert nxt.remaining == prev.remaining - prev.sojourn
        elif nxt.state in fd:
            assert nxt.remaining == d[nxt.state]
        else:
            assert nxt.remaining == math.inf
    if not run.truncated:
        assert run.hit_goal in cost.goal
