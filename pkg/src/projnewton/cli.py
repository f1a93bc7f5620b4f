"""Command-line harness: ``generate``, ``solve``, ``compare`` and ``study-stopping``.

Exit codes: 0 converged (including subspace convergence), 2 usage error,
3 iteration or matvec budget reached, 4 solver failure, 1 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, ProjNewtonError
from .linop import identity_operator
from .penalty import lp_smooth, quadratic
from .pnewton import PNConfig, ProjectedNewton
from .problems import KINDS, load_problem, make_problem, save_problem, write_vector
from .reference import GKSConfig, GKSpqConfig, solve_gks, solve_gkspq
from .trace import fmt, write_trace_csv

METHODS = ("pn", "pn-tik", "gks", "gkspq")
STOPS = ("kkt", "discrepancy", "dlambda", "dx")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_BUDGET, EXIT_FAIL = 0, 1, 2, 3, 4
STATUS_EXIT = {"converged": EXIT_OK, "converged-subspace": EXIT_OK, "user-stop": EXIT_OK,
               "max-iterations": EXIT_BUDGET, "budget-exhausted": EXIT_BUDGET}

DEFAULTS = {
    "out": "out", "seed": 0, "kind": "spike", "n": 200, "noise": 0.1, "density": 0.01,
    "bandwidth": None, "dim": 1, "problem": None, "reg_op": "problem", "method": "pn",
    "p": 1.0, "beta": 1e-5, "lambda0": 1e5, "eta": None, "tau_tilde": None, "alpha": None,
    "stop": "discrepancy", "tol": 1e-6, "max_iter": None, "budget_matvecs": None,
    "methods": "pn,gks,gkspq", "runs": 20, "workers": 1, "write_matrices": False,
}

STUDY_METRICS = ("iterations", "F_norm", "rel_dlambda", "rel_dx", "discrepancy_mismatch", "rel_error")
ERR_CHANGE_TOL = 1e-3
ERR_CHANGE_COUNT = 3


class UsageError(Exception):
    pass


def _global_args(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--config", default=S, help="JSON file with option defaults")


def _problem_args(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--kind", choices=KINDS, default=S)
    p.add_argument("--n", type=int, default=S, help="signal length (piecewise: image side)")
    p.add_argument("--noise", type=float, default=S, help="relative noise level")
    p.add_argument("--density", type=float, default=S)
    p.add_argument("--bandwidth", type=float, default=S)
    p.add_argument("--dim", type=int, choices=(1, 2), default=S)
    p.add_argument("--eta", type=float, default=S)
    p.add_argument("--problem", default=S, help="load a generated problem directory")
    p.add_argument("--reg-op", dest="reg_op", choices=("problem", "identity"), default=S)


def _solver_args(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--p", type=float, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--lambda0", type=float, default=S)
    p.add_argument("--tau-tilde", dest="tau_tilde", type=float, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--stop", choices=STOPS, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=S)
    p.add_argument("--budget-matvecs", dest="budget_matvecs", type=int, default=S)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="projnewton", description=__doc__.splitlines()[0])
    _global_args(ap)
    sub = ap.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", help="write a test problem to --out")
    _global_args(g)
    _problem_args(g)
    g.add_argument("--write-matrices", dest="write_matrices", action="store_true", default=argparse.SUPPRESS)
    s = sub.add_parser("solve", help="run one solver")
    _global_args(s)
    _problem_args(s)
    _solver_args(s)
    s.add_argument("--method", choices=METHODS, default=argparse.SUPPRESS)
    c = sub.add_parser("compare", help="run several solvers under one matvec budget")
    _global_args(c)
    _problem_args(c)
    _solver_args(c)
    c.add_argument("--methods", default=argparse.SUPPRESS, help="comma-separated subset of " + ",".join(METHODS))
    t = sub.add_parser("study-stopping", help="repeat Projected Newton over seeds, stop on error stagnation")
    _global_args(t)
    _problem_args(t)
    _solver_args(t)
    t.add_argument("--runs", type=int, default=argparse.SUPPRESS)
    t.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    return ap


def resolve_options(ns: argparse.Namespace) -> dict:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    given = vars(ns).copy()
    opts = dict(DEFAULTS)
    cfg = given.pop("config", None)
    if cfg is not None:
        try:
            data = json.loads(Path(cfg).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {cfg}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        for k, v in data.items():
            key = k.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {k!r}")
            opts[key] = v
    opts.update(given)
    if opts["method"] not in METHODS or opts["stop"] not in STOPS or opts["kind"] not in KINDS:
        raise UsageError("invalid method, stop rule or kind in config")
    return opts


def _problem_kwargs(o: dict) -> dict:
    kw = {}
    if o["kind"] == "spike":
        kw.update(density=o["density"], dim=o["dim"])
        if o["bandwidth"] is not None:
            kw["blur_bandwidth"] = o["bandwidth"]
    elif o["bandwidth"] is not None:
        kw["bandwidth"] = o["bandwidth"]
    return kw


def get_problem(o: dict, seed: int | None = None):
    if o["problem"]:
        prob = load_problem(o["problem"])
    else:
        prob = make_problem(o["kind"], o["n"], o["noise"], o["seed"] if seed is None else seed,
                            eta=1.0 if o["eta"] is None else o["eta"], **_problem_kwargs(o))
    if o["reg_op"] == "identity":
        prob = replace(prob, L=identity_operator(prob.n))
    return prob


def _pn_config(o: dict, method: str) -> PNConfig:
    return PNConfig(lambda0=o["lambda0"], eta=o["eta"] if o["problem"] else None,
                    max_iterations=o["max_iter"] or 500, stop_rule=o["stop"], tol=o["tol"],
                    mode="tikhonov" if method == "pn-tik" else "general",
                    budget_matvecs=o["budget_matvecs"], seed=o["seed"])


def run_method(prob, method: str, o: dict, callback=None):
    """Run one solver; returns ``(x, lam, status, trace)``."""
    if method in ("pn", "pn-tik"):
        pen = quadratic() if method == "pn-tik" else lp_smooth(o["p"], o["beta"])
        r = ProjectedNewton.from_problem(prob, pen, _pn_config(o, method), callback=callback,
                                         method=method).run()
        return r.x, r.lam, r.status, r.trace
    eta = o["eta"] if o["problem"] else None
    if method == "gks":
        r = solve_gks(prob, GKSConfig(max_iterations=o["max_iter"] or 200, tol=o["tol"],
                                      budget_matvecs=o["budget_matvecs"], eta=eta, seed=o["seed"]))
        return r.x, r.lam, r.status, r.trace
    alpha = o["alpha"]
    if alpha is None:
        pn = ProjectedNewton.from_problem(prob, lp_smooth(o["p"], o["beta"]), _pn_config(o, "pn")).run()
        alpha = 1.0 / pn.lam
    tau_tilde = o["tau_tilde"]
    if tau_tilde is None:
        # sparsity (square L) vs. differences
        tau_tilde = 1e-4 if prob.L.nrows == prob.n else 1e-3
    r = solve_gkspq(prob, alpha, tau_tilde, GKSpqConfig(max_iterations=o["max_iter"] or 200,
                                                        budget_matvecs=o["budget_matvecs"], eta=eta,
                                                        seed=o["seed"]))
    return r.x, r.lam, r.status, r.trace


def write_pgm(path, x, N: int) -> None:
    """8-bit binary PGM of a column-stacked N x N image, linear min-max scaling."""
    X = np.asarray(x, dtype=np.float64).reshape((N, N), order="F")
    lo, hi = float(X.min()), float(X.max())
    scaled = np.zeros_like(X) if hi <= lo else (X - lo) / (hi - lo)
    img = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{N} {N}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _image_side(prob):
    if prob.meta.get("dim", 1) == 2:
        N = prob.meta.get("N") or math.isqrt(prob.n)
        if N * N == prob.n:
            return N
    return None


def _summary(method, status, lam, trace, prob) -> dict:
    last = trace[-1] if trace else None
    d = {"method": method, "status": status, "iterations": last.k if last else 0,
         "lambda": lam, "alpha": 1.0 / lam if lam else None, "sigma": prob.sigma}
    if last is not None:
        d.update(F_norm=last.F_norm, discrepancy_mismatch=last.discrepancy_mismatch,
                 rel_dlambda=last.rel_dlambda, rel_dx=last.rel_dx, rel_error=last.rel_error,
                 matvec_A=last.matvec_A, matvec_At=last.matvec_At, matvec_L=last.matvec_L,
                 matvec_Lt=last.matvec_Lt)
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def cmd_generate(o: dict) -> int:
    prob = get_problem(o)
    out = save_problem(prob, o["out"], write_matrices=bool(o["write_matrices"]))
    print(f"wrote {o['kind']} problem (n={prob.n}, sigma={prob.sigma:.6g}) to {out}")
    return EXIT_OK


def cmd_solve(o: dict) -> int:
    prob = get_problem(o)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    x, lam, status, trace = run_method(prob, o["method"], o)
    write_trace_csv(out / "trace.csv", trace)
    write_vector(out / "x.f64", x)
    N = _image_side(prob)
    if N is not None:
        write_pgm(out / "x.pgm", x, N)
    summary = _summary(o["method"], status, lam, trace, prob)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"{o['method']}: {status} after {summary['iterations']} iterations; "
          f"mismatch {summary.get('discrepancy_mismatch')}, rel. error {summary.get('rel_error')}")
    return STATUS_EXIT.get(status, EXIT_FAIL)


def cmd_compare(o: dict) -> int:
    prob = get_problem(o)
    if prob.x_ex is None:
        raise UsageError("compare needs a problem with a known exact solution")
    methods = [m.strip() for m in str(o["methods"]).split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown methods {bad}; choose from {METHODS}")
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows, summaries, worst = [], [], EXIT_OK
    for m in methods:
        x, lam, status, trace = run_method(prob, m, o)
        rows.extend(r for r in trace if r.k >= 1)
        summaries.append(_summary(m, status, lam, trace, prob))
        worst = max(worst, STATUS_EXIT.get(status, EXIT_FAIL))
        print(f"{m}: {status}, {len(trace)} rows, final rel. error {summaries[-1].get('rel_error')}")
    write_trace_csv(out / "compare.csv", rows, extra_columns={"matvecs_total": lambda r: r.matvecs})
    (out / "compare_summary.json").write_text(json.dumps(summaries, indent=2) + "\n")
    return worst


def error_stagnation_callback():
    """Stop once the relative change of the error stays below 1e-3 three times in a row."""
    state = {"prev": None, "count": 0}

    def cb(solver, row):
        e = row.rel_error
        prev, state["prev"] = state["prev"], e
        if prev is None or not (math.isfinite(e) and prev > 0):
            return False
        state["count"] = state["count"] + 1 if abs(e - prev) / prev < ERR_CHANGE_TOL else 0
        return state["count"] >= ERR_CHANGE_COUNT

    return cb


def _study_one(args):
    o, seed = args
    prob = get_problem(o, seed=seed)
    if prob.x_ex is None:
        raise UsageError("study-stopping needs generated problems with known solutions")
    pen = lp_smooth(o["p"], o["beta"])
    r = ProjectedNewton.from_problem(prob, pen, _pn_config(o, "pn"),
                                     callback=error_stagnation_callback()).run()
    last = r.trace[-1]
    return {"seed": seed, "status": r.status, "iterations": r.iterations, "F_norm": last.F_norm,
            "rel_dlambda": last.rel_dlambda, "rel_dx": last.rel_dx,
            "discrepancy_mismatch": last.discrepancy_mismatch, "rel_error": last.rel_error}


def cmd_study_stopping(o: dict) -> int:
    runs = int(o["runs"])
    if runs < 2:
        raise UsageError("study-stopping needs --runs >= 2")
    if o["problem"]:
        raise UsageError("study-stopping generates its own problems; drop --problem")
    # the stagnation rule decides when to stop; the rule below only caps the run
    o = dict(o, stop="kkt", tol=0.0)
    jobs = [(o, o["seed"] + i) for i in range(runs)]
    if int(o["workers"]) > 1:
        with ProcessPoolExecutor(max_workers=int(o["workers"])) as ex:
            results = list(ex.map(_study_one, jobs))
    else:
        results = [_study_one(j) for j in jobs]
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    with (out / "runs.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["seed", "status", *STUDY_METRICS]
        w.writerow(cols)
        for r in results:
            w.writerow([fmt(r[c]) for c in cols])
    with (out / "stats.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std", "runs"])
        for m in STUDY_METRICS:
            vals = np.array([float(r[m]) for r in results])
            w.writerow([m, fmt(float(np.mean(vals))), fmt(float(np.std(vals))), runs])
    its = np.mean([r["iterations"] for r in results])
    print(f"{runs} runs: mean iterations {its:.1f}, statistics in {out / 'stats.csv'}")
    return EXIT_OK if all(STATUS_EXIT.get(r["status"], EXIT_FAIL) == EXIT_OK for r in results) else EXIT_BUDGET


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "compare": cmd_compare,
            "study-stopping": cmd_study_stopping}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = ns.command
    del ns.command
    try:
        o = resolve_options(ns)
        return COMMANDS[command](o)
    except (UsageError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ProjNewtonError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
