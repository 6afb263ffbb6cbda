"""
Simulating runs
===============

The simulator follows the fdCTMC semantics literally: an exponential clock
races the running timeout, a timeout survives moves between fixed-delay
states, and it is reset on entry from elsewhere.  It serves as an
independent check of the exact analysis.
"""

from pathlib import Path

from fdctmc import (DelayFunction, estimate_cost, estimate_reach, evaluate_fdctmc, normalize,
                    parse_model, sample_run)

DATA = Path(__file__).parent / "data"

structure, cost, _ = parse_model((DATA / "retry.model").read_text())
d = DelayFunction({"init": 0.4, "lost": 1.0, "two": 0.1})

# %%
# One run with its trace: state, time left on the clock when entering,
# time spent, and which kind of transition ended the stay.
run = sample_run(structure, cost, d, seed=14)
for step in run.trace[:12]:
    print(f"  {step.state:5} clock {step.remaining:7.4f}  stay {step.sojourn:7.4f}  {step.kind}")
print(f"total cost {run.total_cost:.4f}, goal {run.hit_goal}, {len(run.trace)} steps")

# %%
# Same seed, same trace.
assert sample_run(structure, cost, d, seed=14).trace == run.trace

# %%
# Batch estimates against the exact values.
exact = evaluate_fdctmc(normalize(structure, cost), d)
for n in (10 ** 3, 10 ** 4, 10 ** 5):
    est = estimate_cost(structure, cost, d, n, seed=n)
    z = (est.mean - exact.cost) / est.std_error
    print(f"n={n:>6}: {est.mean:.4f} ± {est.std_error:.4f}  (exact {exact.cost:.4f}, z={z:+.2f})")

# %%
# Goal frequencies; with one goal this is just the termination rate.
print({g: e.mean for g, e in estimate_reach(structure, cost, d, 10 ** 4, seed=5).items()})

# %%
# A model that never reaches its goal is cut off at max_steps and reported.
structure, cost, _ = parse_model((DATA / "alternating.model").read_text().replace(
    "P: a t 1\nP: b t 1", "P: a b 1\nP: b a 1"))
est = estimate_cost(structure, cost, DelayFunction({"a": 1.0, "b": 1.0}), 100, max_steps=50)
print(f"truncated fraction {est.truncated_fraction}, mean over finished runs {est.mean}")
