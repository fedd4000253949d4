#!/usr/bin/env python3
"""Tune and certify the flat-core radial supersolution for a few operators.

    python3 demos/barrier.py [--gamma 0.5] [--eta 1.0]
"""
import argparse

import numpy as np

from quenchlab.barrier import build_barrier, certify_supersolution, rescale_barrier
from quenchlab.model import EllipticOperator

ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
ap.add_argument("--gamma", type=float, default=0.5)
ap.add_argument("--eta", type=float, default=1.0)
args = ap.parse_args()

print(f"{'operator':10s} {'A':>10s} {'inner':>9s} {'annulus':>9s} {'outer':>9s}  certified")
for op in (EllipticOperator.trace(N=2), EllipticOperator.pucci_plus(1.0, 2.0),
           EllipticOperator.pucci_minus(1.0, 2.0)):
    b = build_barrier(args.gamma, 0.25, args.eta, op)
    cert = certify_supersolution(b)
    m = cert.worst_margin
    print(f"{op.kind:10s} {b.A:10.4g} {m['inner']:9.3g} {m['annulus']:9.3g} {m['outer']:9.3g}  {cert.passed}")

b = build_barrier(args.gamma, 0.25, args.eta, EllipticOperator.trace(N=2))
print("\nrescaled trace barrier: core value 2 sigma0 eps^alpha, certificate gap in unit variables")
for eps in (1.0, 0.5, 0.1):
    rb = rescale_barrier(b, eps)
    ok, gap = rb.certify()
    print(f"  eps {eps:4g}  theta(0) {float(rb.theta(0.0)):.4e}  ok {ok}  gap {gap:.3g}")
