#!/usr/bin/env python3
"""Monte Carlo excision sweep over the amplitude cube, printed as a table."""

import argparse

import numpy as np

from nlsqp.lattice import Box, make_spec
from nlsqp.newton import excision_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--delta", type=float, default=1e-3)
    ap.add_argument("--j", default="2")
    ap.add_argument("--p", type=int, default=1)
    ap.add_argument("--epsilons", default="1e-1,1e-2,1e-3,1e-4")
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    js = [int(x) for x in args.j.split(",")]
    spec = make_spec(d=1, b=len(js), p=args.p, delta=args.delta, j_list=js,
                     amplitudes=[0.5] * len(js))
    eps = [float(x) for x in args.epsilons.split(",")]
    res = excision_sweep(spec, eps, n_samples=args.samples, seed=args.seed,
                         box=Box(4, max(abs(j) for j in js) + 1))
    print(f"{'epsilon':>10} {'excised':>10} {'fraction':>10}")
    for e, c, f in zip(res.epsilons, res.counts, res.fractions):
        print(f"{e:>10.1e} {c:>10d} {f:>10.4f}")
    print(f"diophantine fitted-kappa quantiles (5/50/95%): "
          f"{np.percentile(res.dio_kappas, [5, 50, 95])}")


if __name__ == "__main__":
    main()
