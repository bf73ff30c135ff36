"""Timing of the single-season pipeline on a large synthetic grid.

    python3 scripts/scale_benchmark.py --sites 20000 --k 3
"""

import argparse
import time

import numpy as np

from regfreq import pipeline
from regfreq.cluster import cluster_field, scan_field
from regfreq.ingest import seasonal_wet_sample
from regfreq.synth import RegionSpec, SynthSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sites", type=int, default=20_000)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-scan", action="store_true")
    args = ap.parse_args()

    sizes = [args.sites // 3 + (i < args.sites % 3) for i in range(3)]
    regions = [RegionSpec(0.8, xi, (2.0, 8.0), n) for xi, n in zip((0.05, 0.2, 0.4), sizes)]
    spec = SynthSpec(regions=regions, years=40, seasons=["JJA"], seed=args.seed)

    t = time.perf_counter()
    samples = {s.site_id: seasonal_wet_sample(s, "JJA") for s, _ in generate(spec)}
    print(f"generate + wet samples: {time.perf_counter() - t:.1f} s")
    t = time.perf_counter()
    field = pipeline.omega_field(samples, "JJA")
    print(f"omega: {time.perf_counter() - t:.1f} s")
    if not args.skip_scan:
        t = time.perf_counter()
        scan_field(field)
        print(f"k scan 2..10: {time.perf_counter() - t:.1f} s")
    t = time.perf_counter()
    part = cluster_field(field, args.k)
    print(f"PAM k={args.k}: {time.perf_counter() - t:.1f} s")
    t = time.perf_counter()
    fit = pipeline.fit_season(samples, part.assignment, "JJA", threads=args.threads)
    print(f"fit (3 levels): {time.perf_counter() - t:.1f} s, unfitted {len(fit.unfitted)}")
    t = time.perf_counter()
    pipeline.return_levels(fit, samples, (10, 50, 100))
    print(f"return levels: {time.perf_counter() - t:.1f} s")
    t = time.perf_counter()
    pipeline.validate_fit(fit, samples, np.random.default_rng(args.seed), seed=args.seed)
    print(f"validate (1/8 subsample): {time.perf_counter() - t:.1f} s")


if __name__ == "__main__":
    main()
