"""
Evaluating a fixed delay function
=================================

A fixed-delay CTMC mixes exponential transitions with timeouts.  Given one
timeout per fixed-delay state, its expected total cost before the goal is
computed exactly through a discrete-time decision process whose steps are
obtained by uniformization.
"""

from pathlib import Path

import numpy as np

from fdctmc import (DelayFunction, estimate_cost, evaluate_fdctmc, kernel_row, normalize,
                    parse_model)

DATA = Path(__file__).parent / "data"

# %%
# The retry protocol: 'init' sends, a loss lands in 'lost', and the timeouts
# restart the transmission.  Every timeout costs 3, waiting costs 1 per unit.
structure, cost, obs = parse_model((DATA / "retry.model").read_text())
print("states:", structure.states)
print("fixed-delay states:", sorted(structure.fd_states))

# %%
# The analysis needs each fixed-delay state to either always restart its
# clock or always keep it.  'init' is entered both ways, so it is split.
model = normalize(structure, cost)
print("normalized states:", model.states)
print("restart the clock:", sorted(model.reset), " keep it:", sorted(model.keep))
print("decision vertices:", model.mdp_states)

# %%
# One step of the decision process from 'init' with delay 0.4: where the run
# is next observed and what it costs on the way.
row = kernel_row(model, "init", 0.4)
for v, p in zip(model.mdp_states, row.probs):
    print(f"  P(init --0.4--> {v}) = {p:.4f}")
print(f"  expected step cost = {row.cost:.4f}")

# %%
# The expected total cost for a whole delay function, and the probability of
# each goal being the first one reached.
d = DelayFunction({"init": 0.5, "lost": 0.5, "two": 0.5})
res = evaluate_fdctmc(model, d)
print(f"expected cost {res.cost:.6f}, reach {res.reach}")

# %%
# The same number by simulation (PCG64, fixed seed).
est = estimate_cost(structure, cost, d, 10 ** 5, seed=1)
print(f"Monte Carlo: {est.mean:.4f} ± {est.std_error:.4f}")

# %%
# Cost as a function of a shared timeout: too short wastes restarts, too long
# waits for nothing.
for t in np.linspace(0.25, 4, 6):
    c = evaluate_fdctmc(model, DelayFunction({"init": t, "lost": t, "two": t})).cost
    print(f"  timeout {t:4.2f}: cost {c:.4f}")
