"""Share of small random instances on which the swap phase reaches the global optimum.

    python3 scripts/pam_optimality.py --instances 1000 --seeds 0 1 2 3 4
"""

import argparse
import itertools

import numpy as np

from regfreq.cluster import pam


def optimum(x, k):
    return min(np.abs(x[:, None] - x[list(m)][None, :]).min(axis=1).sum()
               for m in itertools.combinations(range(x.size), k))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--max-n", type=int, default=12)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()
    for seed in args.seeds:
        rng = np.random.default_rng(seed)
        hits = 0
        for _ in range(args.instances):
            k = int(rng.integers(2, 4))
            x = rng.random(int(rng.integers(k, args.max_n + 1)))
            best = optimum(x, k)
            hits += abs(pam(x, k).total_cost - best) <= 1e-12 * (1 + best)
        print(f"seed {seed}: optimum reached on {hits / args.instances:.3f}")


if __name__ == "__main__":
    main()
