"""Repeat Projected Newton over many noise realizations, stopping each run
once the error stagnates, and tabulate the four stopping metrics at that
point. Thin wrapper around the ``study-stopping`` subcommand.
"""
import argparse
import sys

from projnewton.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/stopping")
    args = ap.parse_args()
    for noise in (0.01, 0.05, 0.1):
        code = cli_main(["study-stopping", "--kind", "spike", "--n", str(args.n), "--noise", str(noise),
                         "--runs", str(args.runs), "--workers", str(args.workers),
                         "--out", f"{args.out}/noise_{noise:g}"])
        if code != 0:
            sys.exit(code)


if __name__ == "__main__":
    main()
