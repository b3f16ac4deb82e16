"""The ``purc`` command line.

Exit codes: 0 success, 1 failed check or verification, 2 input/parse error,
3 network not strongly connected, 4 dual solver did not converge,
5 perturbation validation failure, 6 genericity guard failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import __version__
from .dual import SolverConfig
from .flows import NonConvergenceError, primal_value, recover_flow, solve, support
from .io import (
    InputError,
    dumps,
    file_sha256,
    load_custom,
    manifest,
    problem_from_dict,
    problem_to_dict,
    read_demand,
    read_link_vector,
    read_links,
    write_csv,
)
from .network import Demand, NetworkError
from .oracle import EnumerationLimitError
from .perturbation import DivergingDualError, from_name, scaled, validate
from .problem import ConnectivityError, Problem
from .sensitivity import (
    CurvatureUndefinedError,
    GenericityError,
    SupportChangedError,
    directional_flow_response,
    finite_difference_jacobian,
    genericity_margins,
    jacobian,
    method_agreement,
)

log = logging.getLogger("purc")

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_CONNECTIVITY, EXIT_NONCONVERGENCE, EXIT_VALIDATION, EXIT_GENERICITY = range(7)

AGREEMENT_TOL = 1e-9
FD_TOL = 1e-5
FD_STEP = 1e-5
CHECK_TOL = 1e-8


class ValidationFailure(Exception):
    def __init__(self, reports):
        self.reports = reports
        super().__init__("custom perturbation failed validation: " + "; ".join(
            f"{name}: {', '.join(r.violations)}" for name, r in reports.items()))


class Timer:
    def __init__(self):
        self.phases = {}

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0


# -- helpers ------------------------------------------------------------------


def _emit(args, payload: dict):
    text = dumps(payload)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config_echo(args, **extra):
    keys = ("tol", "method", "seed")
    out = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    out.update({k: v for k, v in extra.items() if v is not None})
    return out


def _solver_config(args) -> SolverConfig:
    method = args.method or "auto"
    if method not in ("auto", "newton", "damped_newton", "ascent", "gradient_ascent"):
        raise InputError(f"--method {method!r} is not a dual solver; use newton, ascent or auto")
    if getattr(args, "alpha", None) is not None and method == "auto":
        method = "gradient_ascent"
    return SolverConfig(method=method, grad_tol=args.tol, max_iter=getattr(args, "max_iter", None),
                        step_size=getattr(args, "alpha", None))


def _check_custom(problem: Problem):
    """Mandatory audit of every custom perturbation."""
    reports = {}
    for p in problem.perturbations:
        name = getattr(p, "source", None)
        if name is not None and name not in reports:
            reports[name] = validate(p)
    bad = {k: r for k, r in reports.items() if not r.ok}
    if bad:
        raise ValidationFailure(bad)


def _load_network_problem(args) -> tuple[Problem, dict]:
    net, perts, costs = read_links(args.network)
    inputs = {"network": args.network}
    if args.demand:
        if args.origin or args.destination:
            raise InputError("give either --demand or --origin/--destination, not both")
        demand = read_demand(args.demand, net)
        inputs["demand"] = args.demand
    else:
        if not (args.origin and args.destination):
            raise InputError("--origin and --destination (or --demand) are required")
        try:
            demand = Demand.single(net, args.origin, args.destination)
        except NetworkError as exc:
            raise InputError(str(exc)) from None
    problem = Problem(net, perts, costs, demand)
    _check_custom(problem)
    return problem, inputs


def _solution_block(problem: Problem, sol) -> dict:
    net = problem.network
    rep = sol.report
    return {
        "potential_nodes": [net.nodes[i] for i in problem.incidence.rows],
        "u": sol.u,
        "reference": net.nodes[problem.demand.reference],
        "links": list(net.link_ids),
        "x": sol.x,
        "tension_minus_cost": sol.eta,
        "p": sol.p,
        "p_star": sol.p_star,
        "duality_gap": sol.gap,
        "active_set": sol.active_links(problem),
        "iterations": rep.iterations if rep else None,
        "method": rep.method if rep else None,
        "converged": rep.converged if rep else None,
        "residuals": {
            "conservation_inf": sol.conservation_residual,
            "dual_gradient_inf": rep.grad_norm if rep else sol.conservation_residual,
            "min_flow": float(np.min(sol.x)) if sol.x.size else 0.0,
        },
        "trace": rep.trace if rep else [],
    }


def _read_solution(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        problem = problem_from_dict(doc["problem"])
        u = np.array([float(v) for v in doc["solution"]["u"]])
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{path}: not a purc solution file ({exc})") from None
    if u.shape != (problem.n_potentials,):
        raise InputError(f"{path}: potential has {u.size} entries, expected {problem.n_potentials}")
    return doc, problem, u


def _recover_stored(path, args):
    doc, problem, u = _read_solution(path)
    _check_custom(problem)
    sol = recover_flow(problem, u, grad_tol=None)
    return doc, problem, sol


# -- commands -----------------------------------------------------------------


def cmd_solve(args) -> int:
    timer = Timer()
    with timer.phase("load"):
        problem, inputs = _load_network_problem(args)
    cfg = _solver_config(args)
    with timer.phase("solve"):
        sol = solve(problem, cfg, raise_on_failure=False)
    report = sol.report
    payload = {
        "manifest": manifest("solve", inputs, _config_echo(args, alpha=args.alpha, max_iter=args.max_iter,
                                                           resolved_method=cfg.resolved_method(problem)),
                             timer.phases if args.record_timing else None),
        "problem": problem_to_dict(problem),
        "solution": _solution_block(problem, sol),
    }
    _emit(args, payload)
    if args.export_csv:
        net = problem.network
        active = set(sol.active_set.tolist())
        write_csv(args.export_csv, ["link_id", "from", "to", "cost", "x", "tension_minus_cost", "active"],
                  [(lid, v, w, problem.costs[e], sol.x[e], sol.eta[e], int(e in active))
                   for e, (lid, v, w) in enumerate(net.links())])
    if not report.converged:
        print(f"purc: {NonConvergenceError(report)}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_jacobian(args) -> int:
    timer = Timer()
    with timer.phase("load"):
        doc, problem, sol = _recover_stored(args.solution, args)
    method = args.method or "laplacian"
    if method not in ("nullspace", "laplacian", "reduced", "all"):
        raise InputError(f"--method {method!r} is not a Jacobian form; use nullspace, laplacian, reduced or all")
    margins = genericity_margins(problem, sol)
    with timer.phase("jacobian"):
        try:
            result = jacobian(problem, sol, method=method)
        except (GenericityError, CurvatureUndefinedError) as exc:
            print(f"purc: genericity guard failed: {exc}", file=sys.stderr)
            print(dumps({"margins": margins}), file=sys.stderr, end="")
            return EXIT_GENERICITY
    if isinstance(result, dict):
        main = result["laplacian"]
        pairs = {}
        names = list(result)
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                a, b = result[names[i]].matrix, result[names[j]].matrix
                pairs[f"{names[i]}-{names[j]}"] = float(np.max(np.abs(a - b)))
        worst = method_agreement(result)
        agreement = {"pairs": pairs, "max": worst, "tolerance": AGREEMENT_TOL, "ok": worst <= AGREEMENT_TOL,
                     "methods": names}
    else:
        main = result
        agreement = {"methods": [main.method]}
    out = {
        "links": list(problem.network.link_ids),
        "method": method,
        "matrix": main.matrix,
        "active_set": [problem.network.link_ids[e] for e in main.active],
        "cycle_space_dimension": main.k,
        "agreement": agreement,
        "margins": {**margins, "threshold": 1e-6},
    }
    if args.fd_check:
        with timer.phase("fd_check"):
            try:
                fd = finite_difference_jacobian(problem, step=FD_STEP)
                err = float(np.max(np.abs(fd - main.matrix)))
                out["fd_check"] = {"step": FD_STEP, "max_abs_error": err, "tolerance": FD_TOL, "ok": err <= FD_TOL}
            except SupportChangedError as exc:
                out["fd_check"] = {"step": FD_STEP, "abstained": str(exc), "ok": None}
    inputs = {"solution": args.solution}
    payload = {
        "manifest": manifest("jacobian", inputs, _config_echo(args, fd_check=args.fd_check),
                             timer.phases if args.record_timing else None),
        "jacobian": out,
    }
    _emit(args, payload)
    if args.export_csv:
        ids = list(problem.network.link_ids)
        write_csv(args.export_csv, ["link_id", *ids], [(ids[i], *main.matrix[i]) for i in range(len(ids))])
    failed = (isinstance(result, dict) and not agreement["ok"]) or out.get("fd_check", {}).get("ok") is False
    return EXIT_FAIL if failed else EXIT_OK


def cmd_respond(args) -> int:
    doc, problem, sol = _recover_stored(args.solution, args)
    dc = read_link_vector(args.dc, problem.network)
    try:
        dx = directional_flow_response(problem, sol, dc, solver=args.solver)
    except (GenericityError, CurvatureUndefinedError) as exc:
        print(f"purc: genericity guard failed: {exc}", file=sys.stderr)
        return EXIT_GENERICITY
    ids = list(problem.network.link_ids)
    payload = {
        "manifest": manifest("respond", {"solution": args.solution, "dc": args.dc},
                             _config_echo(args, solver=args.solver)),
        "response": {"links": ids, "dc": dc, "dx": dx, "solver": args.solver},
    }
    _emit(args, payload)
    if args.export_csv:
        write_csv(args.export_csv, ["link_id", "dc", "dx"], [(ids[e], dc[e], dx[e]) for e in range(len(ids))])
    return EXIT_OK


def cmd_check(args) -> int:
    doc, problem, u = _read_solution(args.solution)
    _check_custom(problem)
    stored = doc["solution"]
    ev = problem.evaluate(u)
    x = ev.x
    checks = []

    def record(name, ok, value):
        checks.append({"check": name, "ok": bool(ok), "value": value})

    resid = float(np.max(np.abs(ev.grad))) if ev.grad.size else 0.0
    tol = max(CHECK_TOL, args.tol)
    record("conservation |Ax - b|_inf", resid <= tol, resid)
    record("nonnegative flows", bool(np.all(x >= 0)), float(np.min(x)))
    x_stored = np.array([float(v) for v in stored["x"]])
    dx = float(np.max(np.abs(x - x_stored)))
    record("stored flow reproduces", dx <= 1e-12 * max(1.0, float(np.max(np.abs(x)))), dx)
    p = primal_value(problem, x)
    gap = p - ev.value
    record("strong duality |p - p*|", abs(gap) <= CHECK_TOL * max(1.0, abs(p)), gap)
    dp = abs(p - float(stored["p"]))
    record("stored primal value reproduces", dp <= 1e-12 * max(1.0, abs(p)), dp)
    act = [problem.network.link_ids[e] for e in support(x)]
    record("stored active set reproduces", act == list(stored["active_set"]), act)
    for name, info in doc.get("manifest", {}).get("inputs", {}).items():
        path = info.get("path")
        if path and os.path.exists(path):
            same = file_sha256(path) == info.get("sha256")
            record(f"input {name} unchanged", same, path)
    ok = all(c["ok"] for c in checks)
    for c in checks:
        print(f"{'PASS' if c['ok'] else 'FAIL'}  {c['check']}: {c['value']}", file=sys.stderr)
    payload = {"manifest": manifest("check", {"solution": args.solution}, _config_echo(args)),
               "checks": checks, "ok": ok}
    _emit(args, payload)
    return EXIT_OK if ok else EXIT_FAIL


def _compare_with_oracle(problem: Problem, cfg: SolverConfig) -> dict:
    from .oracle import brute_force_primal

    sol = solve(problem, cfg)
    ora = brute_force_primal(problem)
    dx = float(np.max(np.abs(sol.x - ora.x)))
    dp = abs(sol.p - ora.value)
    return {
        "links": problem.n_links,
        "x_error": dx,
        "p_error": dp,
        "duality_gap": sol.gap,
        "certified": ora.certified,
        "ok": dx <= 1e-7 and dp <= 1e-8 and ora.certified,
    }


def cmd_verify(args) -> int:
    from .datasets import random_instance

    cfg = SolverConfig(method=args.method or "auto", grad_tol=min(args.tol, 1e-10))
    results = []
    inputs = {}
    if args.network:
        problem, inputs = _load_network_problem(args)
        r = _compare_with_oracle(problem, cfg)
        r["instance"] = str(args.network)
        results.append(r)
    rng = np.random.default_rng(args.seed)
    for k in range(args.instances if args.instances is not None else (0 if args.network else 10)):
        problem = random_instance(rng, nodes=(4, 6), links=(6, 8))
        r = _compare_with_oracle(problem, cfg)
        r["instance"] = f"random[{k}]"
        results.append(r)
    ok = all(r["ok"] for r in results)
    for r in results:
        print(f"{'PASS' if r['ok'] else 'FAIL'}  {r['instance']}: |dx| = {r['x_error']:.2e}, "
              f"|dp| = {r['p_error']:.2e}, certified = {r['certified']}", file=sys.stderr)
    print(f"{'PASS' if ok else 'FAIL'}  {len(results)} instance(s)", file=sys.stderr)
    payload = {"manifest": manifest("verify", inputs, _config_echo(args, instances=args.instances)),
               "results": results, "ok": ok}
    _emit(args, payload)
    return EXIT_OK if ok else EXIT_FAIL


def _demo_rows(rows, tol):
    ok = True
    lines = [f"{'quantity':<30} {'reference':>16} {'computed':>24} {'delta':>10}"]
    for name, ref, val in rows:
        delta = abs(ref - val)
        ok &= delta <= tol
        lines.append(f"{name:<30} {ref:>16.10g} {val:>24.17g} {delta:>10.2e}")
    return ok, lines


def cmd_demo(args) -> int:
    from . import datasets, oracle
    from .sensitivity import jacobian_laplacian, jacobian_nullspace, jacobian_reduced

    tol = 1e-6
    rows = []
    extra = []
    if args.example == "section5":
        problem = datasets.four_node_problem()
        ga = solve(problem, SolverConfig(method="gradient_ascent", step_size=0.05, grad_tol=args.tol))
        nt = solve(problem, SolverConfig(method="newton", grad_tol=args.tol))
        for i, v in enumerate(datasets.FOUR_NODE_POTENTIAL):
            rows.append((f"u[{i + 1}] (ascent)", v, ga.u[i]))
            rows.append((f"u[{i + 1}] (Newton)", v, nt.u[i]))
        for e, v in enumerate(datasets.FOUR_NODE_FLOW):
            rows.append((f"x{problem.network.link_ids[e]}", v, nt.x[e]))
        forms = {"nullspace": jacobian_nullspace, "laplacian": jacobian_laplacian, "reduced": jacobian_reduced}
        mats = {name: fn(problem, nt).matrix for name, fn in forms.items()}
        for name, M in mats.items():
            rows.append((f"Jacobian {name} max|dev|", 0.0, float(np.max(np.abs(M - datasets.FOUR_NODE_JACOBIAN)))))
        extra.append(f"iterations: ascent {ga.report.iterations}, Newton {nt.report.iterations}")
        extra.append(f"p = {nt.p!r}, p* = {nt.p_star!r}, active links: {nt.active_links(problem)}")
    elif args.example == "two-link":
        c1, c2 = args.c1, args.c2
        problem = datasets.two_link_problem(c1, c2)
        nt = solve(problem, SolverConfig(method="newton", grad_tol=args.tol))
        u, x = oracle.two_link_closed_form(c1, c2)
        rows.append(("u(v1)", u, nt.u[0]))
        rows.append(("x(e1)", x[0], nt.x[0]))
        rows.append(("x(e2)", x[1], nt.x[1]))
        J = jacobian_laplacian(problem, nt).matrix
        Jc = oracle.two_link_jacobian(c1, c2)
        rows.append(("Jacobian max|dev|", 0.0, float(np.max(np.abs(J - Jc)))))
        extra.append(f"closed-form dx/dc entry {float(Jc[0, 0])!r}")
    elif args.example == "circuit":
        from .network import Network

        net = Network.from_links([("r1", "o", "d"), ("r2", "o", "d")])
        u, x = oracle.circuit_solve(net, [1.0, 1.0], Demand.single(net, "o", "d"))
        rows += [("parallel u(o)", -0.5, u[0]), ("parallel x(r1)", 0.5, x[0]), ("parallel x(r2)", 0.5, x[1])]
        net = Network.from_links([("a", "o", "d"), ("b", "d", "o"), ("c", "o", "d")])
        u, x = oracle.circuit_solve(net, [1.0, 1.0, 1.0], Demand.single(net, "o", "d"))
        extra.append(f"antiparallel currents (b runs d->o): {[float(v) for v in x]}; negative = current against the link")
    ok, lines = _demo_rows(rows, tol)
    print("\n".join(lines + extra))
    print(f"{'PASS' if ok else 'FAIL'}  all deltas <= {tol:g}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_validate_perturbation(args) -> int:
    if args.factory:
        p = scaled(load_custom(args.factory), args.param1, args.param2)
        name = args.factory
    else:
        try:
            p = from_name(args.family, args.param1, args.param2)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        name = args.family
    report = validate(p)
    payload = {"manifest": manifest("validate-perturbation", {}, _config_echo(args, perturbation=name,
                                                                              param1=args.param1,
                                                                              param2=args.param2)),
               "perturbation": name, "report": report.as_dict()}
    _emit(args, payload)
    if not report.ok:
        for v in report.violations:
            print(f"purc: {name}: {v}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _common(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--tol", type=float, default=d(1e-10), help="dual gradient tolerance (default 1e-10)")
    parser.add_argument("--method", default=d(None),
                        help="solver (newton|ascent|auto) or Jacobian form (nullspace|laplacian|reduced|all)")
    parser.add_argument("--seed", type=int, default=d(0), help="seed for random verification instances")
    parser.add_argument("--out", default=d(None), help="write JSON here instead of stdout")


def _network_args(p, required=True):
    p.add_argument("--network", required=required, help="link CSV")
    p.add_argument("--origin")
    p.add_argument("--destination")
    p.add_argument("--demand", help="balanced demand CSV with columns node,b")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="purc", description="Perturbed utility route choice via the concave dual.")
    parser.add_argument("--version", action="version", version=f"purc {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve for optimal potentials and flows")
    _common(p, True)
    _network_args(p)
    p.add_argument("--alpha", type=float, help="fixed gradient-ascent step")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--export-csv", help="write per-link flows as CSV")
    p.add_argument("--record-timing", action="store_true", help="add wall-clock timings to the manifest")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("jacobian", help="Jacobian of optimal flows with respect to link costs")
    _common(p, True)
    p.add_argument("--solution", required=True)
    p.add_argument("--fd-check", action="store_true", help="compare with central finite differences")
    p.add_argument("--export-csv", help="write the matrix as CSV")
    p.add_argument("--record-timing", action="store_true")
    p.set_defaults(func=cmd_jacobian)

    p = sub.add_parser("respond", help="first-order flow response to a cost change")
    _common(p, True)
    p.add_argument("--solution", required=True)
    p.add_argument("--dc", required=True, help="CSV with columns link_id,dc")
    p.add_argument("--solver", choices=["auto", "dense", "cg"], default="auto")
    p.add_argument("--export-csv")
    p.set_defaults(func=cmd_respond)

    p = sub.add_parser("check", help="re-verify the invariants of a solution file")
    _common(p, True)
    p.add_argument("solution")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("verify", help="compare the dual pipeline with the brute-force oracle")
    _common(p, True)
    _network_args(p, required=False)
    p.add_argument("--instances", type=int, help="number of random instances (default 10 without --network)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("demo", help="reproduce the worked examples")
    _common(p, True)
    p.add_argument("--example", choices=["section5", "two-link", "circuit"], default="section5")
    p.add_argument("--c1", type=float, default=1.0)
    p.add_argument("--c2", type=float, default=1.0)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("validate-perturbation", help="audit a perturbation numerically")
    _common(p, True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--family")
    g.add_argument("--factory", help="python:module:callable")
    p.add_argument("--param1", type=float, default=1.0)
    p.add_argument("--param2", type=float, default=1.0)
    p.set_defaults(func=cmd_validate_perturbation)
    return parser


def _configure_logging():
    level = os.environ.get("PURC_LOG", "WARNING").strip().upper() or "WARNING"
    if level.isdigit():
        numeric = int(level)
    else:
        numeric = {"TRACE": logging.DEBUG}.get(level, getattr(logging, level, logging.WARNING))
    logging.basicConfig(level=numeric, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConnectivityError as exc:
        print(f"purc: {exc}", file=sys.stderr)
        return EXIT_CONNECTIVITY
    except (InputError, NetworkError, EnumerationLimitError) as exc:
        print(f"purc: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (NonConvergenceError, DivergingDualError) as exc:
        print(f"purc: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ValidationFailure as exc:
        print(f"purc: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (GenericityError, CurvatureUndefinedError) as exc:
        print(f"purc: genericity guard failed: {exc}", file=sys.stderr)
        return EXIT_GENERICITY


if __name__ == "__main__":
    sys.exit(main())
