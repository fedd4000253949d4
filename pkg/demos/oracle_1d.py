#!/usr/bin/env python3
"""1D solve against the exact profile c x^alpha, then Pucci radial profiles by shooting.

    python3 demos/oracle_1d.py [--gamma 0.5] [--n 1025]
"""
import argparse

import numpy as np

from quenchlab.model import EllipticOperator, SingularityParams, alpha
from quenchlab.radial import exact_power_profile, leading_coefficient, radial_shoot
from quenchlab.solver import Grid, ProblemSpec, continuation_sweep, resolution_floor

ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
ap.add_argument("--gamma", type=float, default=0.5)
ap.add_argument("--n", type=int, default=1025)
args = ap.parse_args()

g, a = args.gamma, alpha(args.gamma)
grid = Grid.interval(0.0, 1.0, args.n)
exact = exact_power_profile(g)
c = exact.c_star
floor = resolution_floor(grid, g)
spec = ProblemSpec(SingularityParams(g, floor), EllipticOperator.trace(N=1), grid,
                   lambda x: c * np.maximum(x, 0.0) ** a,
                   schedule=ProblemSpec.continuation_schedule(64 * floor, 6))
sweep = continuation_sweep(spec)
x = grid.axes()[0]
ref = exact.dense(x)[0]
print(f"gamma {g}  alpha {a:.4f}  c {c:.6f}  n {args.n}")
print(f"{'eps':>10} {'rel sup err':>12} {'sup diff':>10}")
for k, r in enumerate(sweep.results):
    err = np.max(np.abs(r.u.values - ref)) / np.max(ref)
    diff = f"{sweep.differences[k - 1]:10.3e}" if k else ""
    print(f"{r.epsilon:10.4g} {err:12.4e} {diff}")

print("\nradial profiles u ~ c r^alpha in 2D")
for op in (EllipticOperator.trace(N=2), EllipticOperator.pucci_plus(1.0, 2.0),
           EllipticOperator.pucci_minus(1.0, 2.0)):
    prof = radial_shoot(g, op, 2)
    print(f"  {op.kind:7s} shooting c {prof.c_star:.6f}   leading-order c {leading_coefficient(g, op, 2):.6f}")
