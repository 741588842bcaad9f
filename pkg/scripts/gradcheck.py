"""Finite-difference check of the hand-written backward pass on random small instances."""
import argparse
import time

from castgraph import gradcheck


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eps", type=float, default=1e-4)
    ap.add_argument("--tol", type=float, default=1e-4)
    args = ap.parse_args()

    t0 = time.perf_counter()
    results = gradcheck.run(args.trials, args.seed, args.eps)
    for i, r in enumerate(results):
        flag = "ok " if r.max_rel_error <= args.tol else "BAD"
        print(f"{flag} trial {i:3d}  max rel err {r.max_rel_error:.3e}  ({r.worst_param}, {r.n_entries} entries)")
    worst = max(r.max_rel_error for r in results)
    print(f"worst {worst:.3e}  tol {args.tol:g}  {time.perf_counter() - t0:.1f}s")
    raise SystemExit(0 if worst <= args.tol else 1)


if __name__ == "__main__":
    main()
