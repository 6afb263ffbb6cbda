"""Command-line front end: ``python -m fdctmc <verb> ...``.

Every report ends with a machine-readable block of ``key=value`` lines
between ``[result]`` and ``[end]``; floats are written with ``repr`` so they
re-parse to the same numbers.  Exit status: 0 success, 1 usage error,
2 model error, 3 infeasible parameters.
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from typing import Dict, List, Optional, Sequence, TextIO

from .bounds import (ParameterOverflow, big_N, d1_d2, estimate_vmax, po_bound_B, po_params,
                     theoretical_M, unconstrained_params)
from .mdp import detect_infinite, evaluate_fdctmc
from .model import ModelError, constants, normalize, parse_delays, parse_model, serialize_model
from .satgen import build_gadget, parse_dimacs
from .simulate import MAX_STEPS, estimate_cost, estimate_reach
from .synth import (ACTION_CAP, DEFAULT_THETA, STRATEGY_CAP, InfeasibleParameters, Overrides,
                    synth_partial_obs, synth_unconstrained, verify_certificate)

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _emit(out: TextIO, human: List[str], machine: Dict[str, object]):
    for line in human:
        print(line, file=out)
    print("[result]", file=out)
    for k, v in machine.items():
        print(f"{k}={_fmt(v)}", file=out)
    print("[end]", file=out)


def parse_result_block(text: str) -> Dict[str, str]:
    """Extract the ``key=value`` block of a report (values left as strings)."""
    out, inside = {}, False
    for line in text.splitlines():
        if line == "[result]":
            inside = True
        elif line == "[end]":
            inside = False
        elif inside and "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ModelError(f"cannot read {path}: {exc.strerror}") from None


def _load(path: str):
    structure, cost, relation = parse_model(_read(path))
    return structure, cost, relation, normalize(structure, cost)


def _overrides(args) -> Overrides:
    actions = None
    if getattr(args, "actions", None):
        actions = tuple(float(a) for a in args.actions.split(","))
    return Overrides(
        delta=getattr(args, "delta", None),
        d_max=getattr(args, "dmax_override", None),
        kappa=getattr(args, "kappa", None),
        vmax=getattr(args, "vmax", None),
        actions=actions,
        theoretical_vmax=getattr(args, "theoretical_vmax", False),
        theta=args.theta,
        action_cap=args.action_cap,
        strategy_cap=getattr(args, "strategy_cap", STRATEGY_CAP),
    )


def _delays_block(machine, delays):
    for s, v in sorted(delays.items()):
        machine[f"delay.{s}"] = float(v)


# --------------------------------------------------------------------------
# verbs

def cmd_analyze(args, out):
    structure, cost, _, model = _load(args.model)
    d = parse_delays(_read(args.delays), structure)
    res = evaluate_fdctmc(model, d, args.theta)
    human = [f"expected total cost: {res.cost:.10g}",
             f"truncation error bound: {res.error_bound:.3g}",
             "first goal reached:"]
    human += [f"  {g:<16} {p:.10g}" for g, p in sorted(res.reach.items())]
    human.append("per-vertex cost:")
    human += [f"  {v:<16} {c:.10g}" for v, c in zip(res.evaluation.vertices, res.evaluation.per_vertex_cost)]
    machine = {"cost": float(res.cost), "finite": res.finite, "error_bound": float(res.error_bound)}
    machine.update({f"reach.{g}": float(p) for g, p in sorted(res.reach.items())})
    machine.update({f"vertex_cost.{v}": float(c)
                    for v, c in zip(res.evaluation.vertices, res.evaluation.per_vertex_cost)})
    _emit(out, human, machine)


def _report(out, rep, extra=None):
    human = [f"value: {rep.value:.10g}", f"decision vertices: {rep.mdp_size[0]}, actions: {rep.mdp_size[1]}",
             f"note: {rep.wall_notes}"]
    if rep.params is not None:
        p = rep.params
        human.append(f"delta={p.delta:.6g} kappa={p.kappa:.6g} d_max={p.d_max:.6g} vmax={p.vmax:.6g} ({p.vmax_source})")
    human.append("delays:")
    human += [f"  {s:<16} {v:.10g}" for s, v in sorted(rep.delays.items())]
    machine = {"value": float(rep.value), "vertices": rep.mdp_size[0], "actions": rep.mdp_size[1],
               "guaranteed": rep.guaranteed, "strategies_evaluated": rep.strategies_evaluated}
    if rep.params is not None:
        machine.update({"delta": rep.params.delta, "kappa": rep.params.kappa, "d_max": rep.params.d_max,
                        "vmax": float(rep.params.vmax), "vmax_source": rep.params.vmax_source})
    _delays_block(machine, rep.delays.delays)
    machine.update(extra or {})
    _emit(out, human, machine)


def cmd_synth(args, out):
    _, _, _, model = _load(args.model)
    rep = synth_unconstrained(model, args.epsilon, _overrides(args))
    _report(out, rep)


def cmd_synth_po(args, out):
    _, _, relation, model = _load(args.model)
    rep = synth_partial_obs(model, relation, args.dmin, args.dmax, args.epsilon, _overrides(args))
    _report(out, rep)


def cmd_threshold(args, out):
    _, _, relation, model = _load(args.model)
    rep = synth_partial_obs(model, relation, args.dmin, args.dmax, args.epsilon, _overrides(args))
    answer = "above" if rep.value > args.x else "below"
    _report(out, rep, {"answer": answer, "x": args.x})
    print(answer, file=out)


def cmd_verify(args, out):
    structure, _, relation, model = _load(args.model)
    d = parse_delays(_read(args.delays), structure)
    ok = verify_certificate(model, relation, args.dmin, args.dmax, d, args.x, args.delta, args.theta)
    value = evaluate_fdctmc(model, d, args.theta).cost
    _emit(out, [f"value: {value:.10g}", f"value < {args.x:g}: {ok}"],
          {"verified": ok, "value": float(value), "x": args.x})


def cmd_simulate(args, out):
    structure, cost, _, _ = _load(args.model)
    d = parse_delays(_read(args.delays), structure)
    est = estimate_cost(structure, cost, d, args.runs, args.seed, args.max_steps)
    reach = estimate_reach(structure, cost, d, args.runs, args.seed, args.max_steps)
    human = [f"mean cost: {est.mean:.8g} ± {est.std_error:.3g} (n={est.n}, truncated {est.truncated_fraction:.3g})"]
    human += [f"  reach {g:<16} {e.mean:.6g} ± {e.std_error:.3g}" for g, e in sorted(reach.items())]
    machine = {"mean": est.mean, "std_error": est.std_error, "n": est.n,
               "truncated_fraction": est.truncated_fraction, "seed": args.seed}
    for g, e in sorted(reach.items()):
        machine[f"reach.{g}"] = e.mean
        machine[f"reach_se.{g}"] = e.std_error
    _emit(out, human, machine)


def cmd_gen_sat(args, out):
    phi = parse_dimacs(_read(args.cnf))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        g = build_gadget(phi)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    header = (f"# gadget for {len(phi.clauses)} clauses, k={phi.k}\n"
              f"# d_min={g.d_min!r} d_max={g.d_max!r} x={g.x!r} epsilon={g.epsilon!r}\n")
    text = header + serialize_model(g.structure, g.cost, g.relation)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
        _emit(out, [f"wrote {args.output}"],
              {"states": len(g.structure.states), "k": phi.k, "d_min": g.d_min, "d_max": g.d_max,
               "x": g.x, "epsilon": g.epsilon})
    else:
        out.write(text)


def cmd_params(args, out):
    _, _, _, model = _load(args.model)
    c = constants(model.base, model.cost)
    if detect_infinite(model):
        _emit(out, ["value is infinite for every delay function"], {"infinite": True})
        return
    d1, d2 = d1_d2(model, c)
    m = theoretical_M(model, c)
    if args.vmax is not None:
        vmax, source = args.vmax, "override"
    elif args.theoretical_vmax:
        vmax, source = m, "theoretical"
    else:
        vmax, source = estimate_vmax(model, theta=args.theta)
    n = big_N(model, c, vmax)
    machine = {"minR": c.min_rate, "maxR": c.max_rate, "minP": c.min_prob, "D1": d1, "D2": d2,
               "M": m, "vmax": float(vmax), "vmax_source": source, "N": n}
    human = [f"minR={c.min_rate:.6g} maxR={c.max_rate:.6g} minP={c.min_prob:.6g}",
             f"D1={d1:.6g} D2={d2:.6g} (closed forms)", f"M={m:.6g} (worst-case value bound)",
             f"vmax={vmax:.6g} ({source})", f"N={n:.6g}"]
    try:
        if not math.isfinite(vmax):
            raise ParameterOverflow("vmax is not finite in double precision; pass --vmax")
        p = unconstrained_params(model, args.epsilon, vmax, source, c)
        machine.update({"alpha": p.alpha, "delta": p.delta, "kappa": p.kappa, "d_max": p.d_max})
        human.append(f"unconstrained: alpha={p.alpha:.6g} delta={p.delta:.6g} kappa={p.kappa:.6g} d_max={p.d_max:.6g}")
    except ParameterOverflow as exc:
        machine["unconstrained"] = "overflow"
        human.append(f"unconstrained: {exc}")
    if args.dmin is not None and args.dmax is not None:
        b = po_bound_B(model, c, args.dmin, args.dmax)
        machine["B"] = b
        human.append(f"B={b:.6g}")
        try:
            p = po_params(model, args.epsilon, args.dmin, args.dmax, c)
            machine.update({"po_alpha": p.alpha, "po_delta": p.delta, "po_kappa": p.kappa})
            human.append(f"partial observation: alpha={p.alpha:.6g} delta={p.delta:.6g} kappa={p.kappa:.6g}")
        except ParameterOverflow as exc:
            machine["po"] = "overflow"
            human.append(f"partial observation: {exc}")
    _emit(out, human, machine)


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fdctmc", description="Fixed-delay CTMC analysis and timeout synthesis.")
    sub = p.add_subparsers(dest="verb", parser_class=_Parser)
    sub.required = True

    def common(sp, model=True):
        if model:
            sp.add_argument("model", help="model file")
        sp.add_argument("--theta", type=float, default=DEFAULT_THETA,
                        help="Poisson truncation tolerance (default 1e-9)")
        sp.add_argument("--action-cap", type=int, default=ACTION_CAP,
                        help="maximal number of MDP actions (default 10^6)")

    def mesh_flags(sp):
        sp.add_argument("--delta", type=float, help="mesh step override")
        sp.add_argument("--kappa", type=float, help="rounding grid override (0 disables rounding)")

    sp = sub.add_parser("analyze", help="expected cost for given delays")
    common(sp)
    sp.add_argument("--delays", required=True)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("synth", help="unconstrained synthesis")
    common(sp)
    mesh_flags(sp)
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--dmax", dest="dmax_override", type=float, help="largest delay override")
    sp.add_argument("--vmax", type=float, help="value bound override")
    sp.add_argument("--theoretical-vmax", action="store_true", help="use the worst-case bound M")
    sp.add_argument("--vmax-heuristic", action="store_true",
                    help="use the constant-delay heuristic for vmax (default)")
    sp.set_defaults(func=cmd_synth)

    for verb, func, helptext in (("synth-po", cmd_synth_po, "bounded partial-observation synthesis"),
                                 ("threshold", cmd_threshold, "approximate threshold decision")):
        sp = sub.add_parser(verb, help=helptext)
        common(sp)
        mesh_flags(sp)
        sp.add_argument("--epsilon", type=float, required=True)
        sp.add_argument("--dmin", type=float, required=True)
        sp.add_argument("--dmax", type=float, required=True)
        sp.add_argument("--actions", help="comma-separated explicit delays replacing the mesh")
        sp.add_argument("--strategy-cap", type=int, default=STRATEGY_CAP,
                        help="maximal number of enumerated strategies (default 10^7)")
        if verb == "threshold":
            sp.add_argument("--x", type=float, required=True)
        sp.set_defaults(func=func)

    sp = sub.add_parser("verify", help="check a delay certificate against a threshold")
    common(sp)
    sp.add_argument("--delays", required=True)
    sp.add_argument("--x", type=float, required=True)
    sp.add_argument("--dmin", type=float, required=True)
    sp.add_argument("--dmax", type=float, required=True)
    sp.add_argument("--delta", type=float, help="require delays on this mesh")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("simulate", help="Monte Carlo estimate")
    common(sp)
    sp.add_argument("--delays", required=True)
    sp.add_argument("--runs", type=int, default=10 ** 5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-steps", type=int, default=MAX_STEPS)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("gen-sat", help="reduction gadget from a DIMACS CNF")
    sp.add_argument("--cnf", required=True)
    sp.add_argument("-o", "--output", help="write the model here instead of stdout")
    sp.set_defaults(func=cmd_gen_sat)

    sp = sub.add_parser("params", help="discretization parameters and bounds")
    common(sp)
    sp.add_argument("--epsilon", type=float, default=0.1)
    sp.add_argument("--vmax", type=float)
    sp.add_argument("--theoretical-vmax", action="store_true")
    sp.add_argument("--dmin", type=float)
    sp.add_argument("--dmax", type=float)
    sp.set_defaults(func=cmd_params)
    return p


def run(argv: Optional[Sequence[str]] = None, out: TextIO = None, err: TextIO = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=err)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        args.func(args, out)
    except ModelError as exc:
        print(f"model error: {exc}", file=err)
        return EXIT_MODEL
    except (InfeasibleParameters, ParameterOverflow) as exc:
        print(f"infeasible parameters: {exc}", file=err)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"usage error: {exc}", file=err)
        return EXIT_USAGE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
