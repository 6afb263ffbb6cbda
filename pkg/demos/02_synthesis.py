"""
Synthesizing timeouts
=====================

Optimal timeouts need not exist, but ε-optimal ones do, and they can be
chosen from a finite mesh of multiples of δ up to d̄.  The theoretical mesh
is usually astronomically fine, so practical runs pass explicit overrides.
"""

from pathlib import Path

from fdctmc import (DelayFunction, Overrides, evaluate_fdctmc, normalize, parse_model,
                    synth_unconstrained)
from fdctmc.bounds import d1_d2, estimate_vmax, theoretical_M, unconstrained_params
from fdctmc.synth import InfeasibleParameters

DATA = Path(__file__).parent / "data"

# %%
# Two states hand a token back and forth by timeout until an exponential
# exit fires.  Staying in 'b' is cheaper (rate 1 against 2).
structure, cost, _ = parse_model((DATA / "alternating.model").read_text())
model = normalize(structure, cost)
for d in [(1e-4, 1e-2), (1e-2, 1e-2), (1.0, 1.0)]:
    r = evaluate_fdctmc(model, DelayFunction({"a": d[0], "b": d[1]}))
    print(f"d(a)={d[0]:g}, d(b)={d[1]:g}: cost {r.cost:.4f}, "
          f"{r.evaluation.steps('a'):.0f} steps")

# %%
# What the theory asks for.  The heuristic value bound uses the constant
# delay 1/λ; the worst-case bound M is far larger.
vmax, source = estimate_vmax(model)
print(f"vmax = {vmax:.4f} ({source}), worst-case M = {theoretical_M(model):.3g}")
print("D1, D2 =", d1_d2(model))
p = unconstrained_params(model, 0.1, vmax)
print(f"ε=0.1: δ={p.delta:.3g}, d̄={p.d_max:.3g}, κ={p.kappa:.3g}")
try:
    synth_unconstrained(model, 0.1)
except InfeasibleParameters as exc:
    print("theoretical mesh:", exc)

# %%
# A user-scaled mesh: δ = 10⁻³ up to 5, rows rounded to a 10⁻⁹ grid.
rep = synth_unconstrained(model, 0.1, Overrides(delta=1e-3, d_max=5.0, kappa=1e-9))
print(f"value {rep.value:.4f} with d(a)={rep.delays['a']:g}, d(b)={rep.delays['b']:g}")
print(f"{rep.mdp_size[1]} actions; {rep.wall_notes}")

# %%
# The synthesized timeouts, evaluated on the original model.
print("check:", evaluate_fdctmc(model, rep.delays).cost)

# %%
# The retry protocol: the best restart timeout under a 0.05 mesh.
structure, cost, _ = parse_model((DATA / "retry.model").read_text())
retry = normalize(structure, cost)
rep = synth_unconstrained(retry, 0.1, Overrides(delta=0.05, d_max=6.0, kappa=1e-9))
print(f"retry protocol: value {rep.value:.4f}, delays {dict(rep.delays.items())}")
