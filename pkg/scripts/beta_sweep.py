"""Effect of the smoothing parameter beta on sparse deblurring with p = 1.

For each beta the solver runs to a small KKT residual; the final relative
error and iteration count are written to a CSV.
"""
import argparse
import csv
from pathlib import Path

from projnewton import PNConfig, lp_smooth, solve_projected_newton, spike_problem

BETAS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default="results/beta_sweep")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with (out / "beta_sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "beta", "status", "iterations", "rel_error", "lambda"])
        for seed in range(args.seeds):
            prob = spike_problem(args.n, level=args.noise, seed=seed)
            for beta in BETAS:
                res = solve_projected_newton(prob, lp_smooth(1.0, beta), PNConfig(stop_rule="kkt", tol=1e-6))
                err = res.trace[-1].rel_error
                w.writerow([seed, beta, res.status, res.iterations, f"{err:.17g}", f"{res.lam:.17g}"])
                print(f"seed={seed} beta={beta:.0e} {res.status:20s} its={res.iterations:4d} err={err:.4f}")


if __name__ == "__main__":
    main()
