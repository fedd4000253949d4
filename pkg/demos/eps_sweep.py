#!/usr/bin/env python3
"""eps -> 0 continuation in 1D: successive solutions and level sets converge.

    python3 demos/eps_sweep.py [--gamma 0.5] [--n 4097] [--stages 6]
"""
import argparse

from quenchlab.geometry import extract_free_boundary, hausdorff_distance
from quenchlab.model import EllipticOperator, SingularityParams, alpha
from quenchlab.radial import exact_power_profile
from quenchlab.solver import Grid, ProblemSpec, continuation_sweep, resolution_floor

ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
ap.add_argument("--gamma", type=float, default=0.5)
ap.add_argument("--n", type=int, default=4097)
ap.add_argument("--stages", type=int, default=6)
args = ap.parse_args()

g, a = args.gamma, alpha(args.gamma)
grid = Grid.interval(0.0, 1.0, args.n)
floor = resolution_floor(grid, g)
c = exact_power_profile(g).c_star
spec = ProblemSpec(SingularityParams(g, floor), EllipticOperator.trace(N=1), grid,
                   lambda x: c * x.clip(0.0) ** a,
                   schedule=ProblemSpec.continuation_schedule(2**args.stages * floor, args.stages))
sweep = continuation_sweep(spec)
fbs = [extract_free_boundary(r.u, 2.0 * r.epsilon**a) for r in sweep.results]
print(f"{'k':>2} {'eps':>10} {'fb point':>10} {'sup diff':>10} {'hausdorff':>10}")
for k, (r, fb) in enumerate(zip(sweep.results, fbs)):
    diff = f"{sweep.differences[k - 1]:10.3e}" if k else " " * 10
    haus = f"{hausdorff_distance(fbs[k - 1], fb):10.3e}" if k else " " * 10
    print(f"{k:2d} {r.epsilon:10.4g} {fb.points[:, 0].max():10.4f} {diff} {haus}")
