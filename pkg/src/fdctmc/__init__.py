"""Fixed-delay CTMCs: evaluation and synthesis of timeouts.

Typical use::

    structure, cost, obs = parse_model(text)
    model = normalize(structure, cost)
    evaluate_fdctmc(model, DelayFunction({...})).cost
    synth_unconstrained(model, epsilon=0.1, overrides={"delta": 1e-3, "d_max": 5, "kappa": 1e-9})
"""

from .bounds import (DiscretizationParams, ParameterOverflow, big_N, d1_d2, estimate_vmax, mesh,
                     po_bound_B, po_params, theoretical_M, unconstrained_params)
from .kernel import (KernelRow, PoissonTruncation, SubordinatedChain, build_subordinated,
                     kernel_row, kernel_row_exp, poisson_terms, round_row)
from .mdp import (Dtmdp, EvalResult, FdCtmcResult, InfiniteValueError, Strategy, detect_infinite,
                  evaluate_fdctmc, evaluate_strategy, expected_steps, optimal_strategy,
                  reach_probabilities)
from .model import (CostStructure, DelayFunction, FdCtmcStructure, ModelConstants, ModelError,
                    NormalizedModel, ObservationRelation, build_model, constants, normalize,
                    parse_delays, parse_model, serialize_model, validate)
from .satgen import CnfFormula, Gadget, assignment_strategy, build_gadget, parse_dimacs
from .simulate import RunSample, SimEstimate, estimate_cost, estimate_reach, sample_run
from .synth import (InfeasibleParameters, Overrides, SynthesisReport, check_threshold,
                    discretize_mdp, synth_partial_obs, synth_unconstrained, verify_certificate)

__version__ = "0.1.0"

__all__ = [
    "DiscretizationParams", "ParameterOverflow", "big_N", "d1_d2", "estimate_vmax", "mesh",
    "po_bound_B", "po_params", "theoretical_M", "unconstrained_params", "KernelRow",
    "PoissonTruncation", "SubordinatedChain", "build_subordinated", "kernel_row",
    "kernel_row_exp", "poisson_terms", "round_row", "Dtmdp", "EvalResult", "FdCtmcResult",
    "InfiniteValueError", "Strategy", "detect_infinite", "evaluate_fdctmc", "evaluate_strategy",
    "expected_steps", "optimal_strategy", "reach_probabilities", "CostStructure",
    "DelayFunction", "FdCtmcStructure", "ModelConstants", "ModelError", "NormalizedModel",
    "ObservationRelation", "build_model", "constants", "normalize", "parse_delays",
    "parse_model", "serialize_model", "validate", "CnfFormula", "Gadget", "assignment_strategy",
    "build_gadget", "parse_dimacs", "RunSample", "SimEstimate", "estimate_cost",
    "estimate_reach", "sample_run", "InfeasibleParameters", "Overrides", "SynthesisReport",
    "check_threshold", "discretize_mdp", "synth_partial_obs", "synth_unconstrained",
    "verify_certificate",
]
