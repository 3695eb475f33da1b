"""Command line entry point: ``dataplace <command> ...``.

Exit status is 0 on success, 1 when the input data is invalid and 2 on
usage errors (bad flags, unreadable files).  Every command prints a one-line
JSON provenance record first; JSON outputs embed the same record under
``"provenance"`` and CSV outputs carry it as a leading ``#`` comment line.
The wall-clock timestamp lives in its own field so that reruns with the
same seed differ only there.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import auction as A
from . import duality as D
from . import exact as E
from . import glauber as G
from .instance import (Instance, InstanceFormatError, InstanceValidationError, gen_random,
                       load, reduce_to_unit_cache, save, to_dict, validate)
from .objective import (format_allocation, holder_sets, parse_allocation, player_costs,
                        potential)

SCHEMA = 1


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _provenance(args, seed=None) -> dict:
    params = {k: v for k, v in sorted(vars(args).items())
              if k not in ("command", "func", "quiet", "seed")}
    return {"version": __version__, "command": args.command, "seed": seed,
            "params": params, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}


def _emit_provenance(prov: dict) -> None:
    print(json.dumps({"provenance": prov}, default=str))


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is None:
        args.seed = int(np.random.SeedSequence().entropy % (1 << 63))
    print(f"seed: {args.seed}")
    return args.seed


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _write_json(path, body: dict, prov: dict) -> None:
    doc = {"schema": SCHEMA, "provenance": prov}
    doc.update(_to_jsonable(body))
    text = json.dumps(doc, indent=1) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _write_csv(path, header, rows, prov: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps({"provenance": prov}, default=str) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load(path, unit: bool = False) -> Instance:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    try:
        inst = load(p)
    except InstanceFormatError as exc:
        raise DataError(str(exc)) from None
    except InstanceValidationError as exc:
        raise DataError("invalid instance:\n  " + "\n  ".join(exc.violations)) from None
    if unit and not inst.is_unit:
        raise DataError("this command needs unit cache sizes; run `dataplace reduce` first")
    return inst


def _alloc(inst: Instance, text: str) -> np.ndarray:
    try:
        x = parse_allocation(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if x.shape != (inst.n,) or np.any((x < 0) | (x >= inst.k)):
        raise DataError(f"allocation must list {inst.n} resources in 1..{inst.k}")
    return x


def _say(args, *lines) -> None:
    if not args.quiet:
        for line in lines:
            print(line)


# commands ------------------------------------------------------------------

def cmd_generate(args):
    seed = _resolve_seed(args)
    prov = _provenance(args, seed)
    _emit_provenance(prov)
    try:
        inst = gen_random(seed, args.n, args.k, tuple(args.cost_range),
                          tuple(args.demand_range), tuple(args.fee_range),
                          tuple(args.cache_range))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        save(inst, args.out)
        _say(args, f"wrote {args.out}")
    else:
        print(json.dumps(to_dict(inst), indent=1))


def cmd_validate(args):
    p = Path(args.input)
    if not p.is_file():
        raise UsageError(f"input file not found: {args.input}")
    _emit_provenance(_provenance(args))
    try:
        inst = load(p, check=False)
    except InstanceFormatError as exc:
        raise DataError(str(exc)) from None
    problems = validate(inst)
    if problems:
        raise DataError("invalid instance:\n  " + "\n  ".join(problems))
    _say(args, f"valid: n={inst.n} k={inst.k} empty_set_distance={inst.c_empty:g}")


def cmd_reduce(args):
    inst = _load(args.input)
    _emit_provenance(_provenance(args))
    unit = reduce_to_unit_cache(inst)
    save(unit, args.out)
    origin = format_allocation(unit.origin)
    _say(args, f"wrote {args.out}: {unit.n} unit agents", f"origin: {origin}")


def cmd_eval(args):
    inst = _load(args.input, unit=True)
    x = _alloc(inst, args.alloc)
    _emit_provenance(_provenance(args))
    phi = potential(inst, x)
    costs = player_costs(inst, x)
    if args.format == "json":
        _write_json(None, {"allocation": (x + 1), "potential": phi, "player_costs": costs,
                           "holders": [h + 1 for h in holder_sets(x, inst.k)]},
                    _provenance(args))
    else:
        _say(args, f"potential: {phi:.12g}",
             *(f"player {i + 1}: resource {x[i] + 1} cost {c:.12g}"
               for i, c in enumerate(costs)),
             *(f"holders of resource {l + 1}: {{{', '.join(str(i + 1) for i in h)}}}"
               for l, h in enumerate(holder_sets(x, inst.k))))


def cmd_brute(args):
    inst = _load(args.input, unit=True)
    _emit_provenance(_provenance(args))
    try:
        bf = E.brute_force_optimum(inst, cap=args.cap)
    except E.StateSpaceTooLarge as exc:
        raise DataError(str(exc)) from None
    if args.format == "json":
        _write_json(None, {"phi_star": bf.value, "allocation": bf.allocation + 1,
                           "optima": bf.optima + 1}, _provenance(args))
    else:
        _say(args, f"phi_star: {bf.value:.12g}",
             f"allocation: {format_allocation(bf.allocation)}",
             f"optimal allocations: {len(bf.optima)}")


def cmd_chain(args):
    inst = _load(args.input, unit=True)
    prov = _provenance(args)
    _emit_provenance(prov)
    beta = E.theorem_beta(inst) if args.beta is None else args.beta
    t_max = 200 * inst.n if args.tmax is None else args.tmax
    try:
        d = E.exact_tv_curve(inst, beta, t_max, cap=args.cap)
    except E.StateSpaceTooLarge as exc:
        raise DataError(str(exc)) from None
    bound = E.mixing_bound(inst.n, np.arange(t_max + 1))
    rows = [(t, repr(float(d[t])), repr(float(bound[t]))) for t in range(t_max + 1)]
    if args.out:
        _write_csv(args.out, ["t", "d_t", "bound_n_exp"], rows, prov)
    below = np.flatnonzero(d < args.eps)
    _say(args, f"beta: {beta:.6g}",
         f"first t with d(t) < {args.eps:g}: {int(below[0]) if below.size else 'none'}",
         f"bound violated at {int(np.count_nonzero(d > bound))} of {t_max + 1} times")


def cmd_glauber(args):
    inst = _load(args.input, unit=True)
    seed = _resolve_seed(args)
    prov = _provenance(args, seed)
    _emit_provenance(prov)
    initial = "uniform-random" if args.initial is None else _alloc(inst, args.initial)
    cfg = G.GlauberConfig(args.beta, args.steps, seed, initial, args.stride)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    trace = G.run(inst, cfg)
    if args.trace:
        rows = [(t, p + 1 if p >= 0 else "", o + 1 if o >= 0 else "",
                 nw + 1 if nw >= 0 else "", repr(phi)) for t, p, o, nw, phi in trace.rows()]
        _write_csv(args.trace, ["t", "player", "old", "new", "phi"], rows, prov)
    _say(args, f"final: {format_allocation(trace.final_state)} phi {trace.phi[-1]:.12g}",
         f"best: {format_allocation(trace.best_state)} phi {trace.best_phi:.12g} "
         f"at t={trace.best_t}")


def cmd_bestresponse(args):
    inst = _load(args.input, unit=True)
    seed = _resolve_seed(args)
    _emit_provenance(_provenance(args, seed))
    initial = None if args.initial is None else _alloc(inst, args.initial)
    res = G.best_response_dynamics(inst, initial, args.max_sweeps, args.tie_rule, seed)
    if not res.converged:
        raise DataError(res.message)
    _say(args, f"equilibrium: {format_allocation(res.allocation)}",
         f"potential: {potential(inst, res.allocation):.12g}",
         f"improving moves: {res.moves}")


def cmd_mix(args):
    inst = _load(args.input, unit=True)
    seed = _resolve_seed(args)
    _emit_provenance(_provenance(args, seed))
    beta = E.theorem_beta(inst) if args.beta is None else args.beta
    try:
        est = G.estimate_mixing(inst, beta, args.eps, args.replicas, G.make_rng(seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _say(args, f"beta: {beta:.6g}",
         f"estimated t_mix({args.eps:g}): {est.t_mix if est.t_mix is not None else 'not reached'}",
         f"coupling bound 7n ln(n/eps): "
         f"{math.ceil(7 * inst.n * math.log(max(inst.n, 1) / args.eps)) if inst.n > 1 else 0}")


def _dual_config(args, seed) -> D.DualConfig:
    return D.DualConfig(max_iters=args.iters, step_rule=args.step_rule, tol=args.tol,
                        seed=seed)


def _dual_body(inst, sol: D.DualSolution) -> dict:
    return {"beta": sol.beta, "alpha": sol.alpha,
            "y": [int(l) + 1 if l >= 0 else None for l in sol.assignment],
            "g": sol.objective, "iterations": sol.iterations, "converged": sol.converged,
            "certified_gap": sol.certified_gap, "upper_bound": sol.upper_bound,
            "residuals": sol.residuals(inst), "message": sol.message}


def cmd_dual(args):
    inst = _load(args.input, unit=True)
    seed = _resolve_seed(args)
    prov = _provenance(args, seed)
    _emit_provenance(prov)
    sol = D.solve_dual(inst, _dual_config(args, seed))
    if args.out:
        _write_json(args.out, _dual_body(inst, sol), prov)
    _say(args, f"g: {sol.objective:.12g}", f"upper bound: {sol.upper_bound:.12g}",
         f"iterations: {sol.iterations} converged: {sol.converged}")


def cmd_nebound(args):
    inst = _load(args.input, unit=True)
    x = _alloc(inst, args.alloc)
    prov = _provenance(args)
    _emit_provenance(prov)
    try:
        rep = D.ne_quality_bound(inst, x)
    except D.NotNashError as exc:
        raise DataError(str(exc)) from None
    if args.format == "json":
        _write_json(None, rep.as_dict(), prov)
    else:
        _say(args, f"phi: {rep.phi:.12g}", f"phi_star: {rep.phi_star}",
             f"bound (fee kept): {rep.bound} holds: {rep.holds}",
             f"bound (fee dropped): {rep.bound_no_fee} holds: {rep.holds_no_fee}",
             f"certificate objective: {rep.certificate_objective:.12g}")


def cmd_auction(args):
    inst = _load(args.input, unit=True)
    seed = _resolve_seed(args)
    prov = _provenance(args, seed)
    _emit_provenance(prov)
    sol = D.solve_dual(inst, _dual_config(args, seed))
    outcome = A.run_auction(inst, sol)
    primal = A.build_primal(inst, outcome)
    try:
        phi_star = E.brute_force_optimum(inst).value
    except E.StateSpaceTooLarge:
        phi_star = None
    cert = A.certify_bound(inst, outcome, primal, phi_star=phi_star, dual=sol)
    audit = A.cs_audit(inst, primal, sol)
    if args.report:
        body = outcome.as_dict()
        body.update({"dual": _dual_body(inst, sol), "cost": primal.cost,
                     "uncovered": [[j + 1, l + 1] for j, l in primal.uncovered],
                     "bound": cert.as_dict(), "cs_audit": audit.as_dict()})
        _write_json(args.report, body, prov)
    _say(args, f"winners: {outcome.as_dict()['winners']}",
         f"cost {primal.cost:.12g} <= SW + Rev = {cert.bound:.12g}: {cert.holds}",
         f"gamma {outcome.gamma:.6g} factor {cert.factor}", *cert.notes)


def cmd_experiment(args):
    from .acceptance import run_suite

    seed = _resolve_seed(args)
    prov = _provenance(args, seed)
    _emit_provenance(prov)
    only = None
    if args.only:
        try:
            only = {int(v) for v in args.only.split(",")}
        except ValueError:
            raise UsageError(f"--only expects comma separated numbers, got {args.only!r}") from None
    results = run_suite(seed, only, progress=None if args.quiet else
                        (lambda r: print(r.line(), flush=True)))
    if args.out:
        _write_json(args.out, {"suite": args.suite,
                               "results": [r.as_dict() for r in results]}, prov)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return 0 if passed == len(results) else 1


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dataplace", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dataplace {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_, seed=False, inp=True):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        if inp:
            p.add_argument("-i", "--input", required=True, help="instance JSON file")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--quiet", action="store_true", help="suppress human-readable output")
        return p

    p = add("generate", cmd_generate, "draw a random instance", seed=True, inp=False)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--cost-range", type=float, nargs=2, default=(1.0, 10.0))
    p.add_argument("--demand-range", type=float, nargs=2, default=(0.0, 1.0))
    p.add_argument("--fee-range", type=float, nargs=2, default=(0.0, 5.0))
    p.add_argument("--cache-range", type=int, nargs=2, default=(1, 1))
    p.add_argument("-o", "--out")

    add("validate", cmd_validate, "check instance invariants")

    p = add("reduce", cmd_reduce, "split caches into unit agents")
    p.add_argument("-o", "--out", required=True)

    for name, func, help_ in (("eval", cmd_eval, "potential and player costs"),
                              ("nebound", cmd_nebound, "equilibrium quality report")):
        p = add(name, func, help_)
        p.add_argument("--alloc", required=True, help='1-indexed resources, e.g. "1,2,1"')
        p.add_argument("--format", choices=("table", "json"), default="table")

    p = add("brute", cmd_brute, "enumerate the optimum")
    p.add_argument("--cap", type=int, default=E.DEFAULT_CAP)
    p.add_argument("--format", choices=("table", "json"), default="table")

    p = add("chain", cmd_chain, "exact distance to stationarity")
    p.add_argument("--beta", type=float, default=None,
                   help="noise parameter (default: fast-mixing threshold)")
    p.add_argument("--tmax", type=int, default=None)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--cap", type=int, default=E.TV_CURVE_CAP)
    p.add_argument("-o", "--out", help="CSV with t,d_t,bound_n_exp")

    p = add("glauber", cmd_glauber, "simulate Glauber dynamics", seed=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--initial", default=None, help="1-indexed start allocation")
    p.add_argument("--trace", help="CSV with t,player,old,new,phi")

    p = add("bestresponse", cmd_bestresponse, "best-response dynamics", seed=True)
    p.add_argument("--initial", default=None)
    p.add_argument("--max-sweeps", type=int, default=10_000)
    p.add_argument("--tie-rule", choices=("lowest", "random"), default="lowest")

    p = add("mix", cmd_mix, "coupling estimate of the mixing time", seed=True)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--eps", type=float, default=0.25)
    p.add_argument("--replicas", type=int, default=1000)

    for name, func, help_, flag in (("dual", cmd_dual, "maximize the dual", "--out"),
                                    ("auction", cmd_auction, "run the first-price auction",
                                     "--report")):
        p = add(name, func, help_, seed=True)
        p.add_argument("--iters", type=int, default=50_000)
        p.add_argument("--step-rule", choices=("normalized", "diminishing"),
                       default="normalized")
        p.add_argument("--tol", type=float, default=1e-4)
        p.add_argument(flag, dest="out" if flag == "--out" else "report")

    p = add("experiment", cmd_experiment, "run the acceptance suite", seed=True, inp=False)
    p.add_argument("--suite", choices=("acceptance",), default="acceptance")
    p.add_argument("--only", help="comma separated criterion numbers")
    p.add_argument("-o", "--out", help="JSON summary")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        G.default_workers()  # reject a malformed DATAPLACE_THREADS early
        code = args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        if "DATAPLACE_THREADS" in str(exc):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        raise
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
