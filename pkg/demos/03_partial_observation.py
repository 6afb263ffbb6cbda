"""
Timeouts under partial observation
==================================

When states cannot be told apart, they must share one timeout.  Finding the
best class-constant timeouts in a bounded range is NP-hard: a CNF formula
maps to a model whose optimum is small exactly when the formula is
satisfiable.
"""

import itertools
from pathlib import Path

from fdctmc import (Overrides, assignment_strategy, build_gadget, check_threshold, normalize,
                    parse_dimacs, parse_model, synth_partial_obs, verify_certificate)
from fdctmc.bounds import po_bound_B

DATA = Path(__file__).parent / "data"

# %%
# In the retry protocol 'init' and 'two' look alike ('obs:' line), so they
# get the same timeout.  Every shared value on the mesh is tried.
structure, cost, obs = parse_model((DATA / "retry.model").read_text())
model = normalize(structure, cost)
print("observation classes:", obs.classes)
tied = synth_partial_obs(model, obs, 0.25, 4.0, 0.1, Overrides(delta=0.25, kappa=0.0))
free = synth_partial_obs(model, None, 0.25, 4.0, 0.1, Overrides(delta=0.25, kappa=0.0))
print(f"shared timeout: {tied.value:.4f} {dict(tied.delays.items())} "
      f"({tied.strategies_evaluated} candidates)")
print(f"independent:    {free.value:.4f} {dict(free.delays.items())} "
      f"({free.strategies_evaluated} candidates)")

# %%
# The reduction.  Each literal becomes a component; a long timeout in a
# positive literal's entry state, or a short one in a negative literal's,
# leads to its goal quickly.  Entry states over one variable share a class.
phi = parse_dimacs((DATA / "sat7.cnf").read_text())
g = build_gadget(phi)
k = phi.k
print(f"k={k}: {len(g.structure.states)} states, d in [{g.d_min}, {g.d_max}], x={g.x}")
gm = normalize(g.structure, g.cost)
# The bound behind the theoretical mesh exceeds double precision (inf), so
# the threshold check below runs on the two-valued mesh instead.
print("bound B for the theoretical mesh:", po_bound_B(gm, None, g.d_min, g.d_max))

# %%
# Every truth assignment induces a timeout choice.  Satisfying ones stay
# below 17k².
for bits in itertools.product([False, True], repeat=phi.num_vars):
    nu = dict(zip(range(1, phi.num_vars + 1), bits))
    d = assignment_strategy(phi, nu, g)
    ok = verify_certificate(gm, g.relation, g.d_min, g.d_max, d, 17 * k * k)
    print(f"  {bits}: satisfies={phi.satisfied_by(nu)!s:5}  certificate below 17k²: {ok}")

# %%
# The threshold question on the two-valued mesh {d_min, d_max}.
ov = Overrides(actions=(g.d_min, g.d_max), kappa=0.0)
print("satisfiable formula:", check_threshold(gm, g.relation, g.d_min, g.d_max, g.epsilon, g.x, ov))

# Without a satisfying assignment some clause cycles on short timeouts.  Its
# goal then needs 8k jumps inside 0.01 time units, a probability far below the
# kernel tolerance, so the best value prints as inf.
phi = parse_dimacs((DATA / "unsat8.cnf").read_text())
g = build_gadget(phi)
gm = normalize(g.structure, g.cost)
ov = Overrides(actions=(g.d_min, g.d_max), kappa=0.0)
rep = synth_partial_obs(gm, g.relation, g.d_min, g.d_max, g.epsilon, ov)
print(f"unsatisfiable formula: best {rep.value:.4g} against x={g.x} -> "
      f"{'above' if rep.value > g.x else 'below'}")
