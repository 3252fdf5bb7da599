"""
From contributions to pruning ratios
====================================

Layers with larger contributions are pruned less, and the average ratio stays
at the global target.
"""

import warnings

import numpy as np

from layershap import allocate_ratios

phi = [1.0, 2.0, 3.0]
plan = allocate_ratios(phi, rho=0.5, lam=0.1)
print(plan.ratios)

###############################################################################
# lambda sets how far ratios may move. Each ratio stays within 2*lambda of rho.

phi = np.array([0.145, 0.031, 0.026, 0.036, 0.075, 0.025])
for lam in (0.0, 0.05, 0.1, 0.2):
    ratios = np.array(allocate_ratios(phi, 0.6, lam).ratios)
    print(f"lambda={lam:4}: {np.round(ratios, 3)}  mean={ratios.mean():.3f}")

###############################################################################
# Only the ordering and spacing of the contributions matter: shifting or
# scaling them by a positive factor gives the same plan.

a = allocate_ratios(phi, 0.6, 0.1).ratios
b = allocate_ratios(3 * phi + 7, 0.6, 0.1).ratios
print("\nscale/shift invariant:", np.allclose(a, b))

###############################################################################
# Near the ends of [0, 1] a ratio can leave the interval. It is clipped, the
# plan is flagged and the mean drifts away from rho.

with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    plan = allocate_ratios(phi, 0.05, 0.1)
print(plan.ratios, "clamped:", plan.clamped)
for w in caught:
    print("warning:", w.message)
