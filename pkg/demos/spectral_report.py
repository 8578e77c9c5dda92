"""Low-lying spectrum of the fibered generator L_k.

For each lam the dispersion E(k) of the eigenvalue branching off zero is
quadratic, E(k) ~ D k^2, and the rest of the spectrum sits a finite
distance above it.  The script prints D from the linear solve, the same
number from a finite-difference Hessian of E(k), the weak-coupling
prediction D0 / lam^2, and the observed gap against its lower bound.

Run:  python3 demos/spectral_report.py
"""

import numpy as np

from tbflip import nearest_neighbor
from tbflip.spectral import Truncation, spectral_report

h = nearest_neighbor(1)
trunc = Truncation(12, 2, 2)
print(f"truncation: pos_radius={trunc.pos_radius}, set_size={trunc.set_size}, set_radius={trunc.set_radius}")
print("  lam   D(solve)   D(hessian)   D0/lam^2     gap   gap bound")
for lam in (0.2, 0.4, 0.8, 1.0, 2.0):
    rep = spectral_report(lam, 1.0, h, trunc, gap=True)
    D, Dh, D0 = rep.D_matrix[0, 0], rep.D_hessian[0, 0], rep.D0_matrix[0, 0]
    gap = np.nan if rep.gap_observed is None else rep.gap_observed
    print(f"{lam:5.1f} {D:10.4f} {Dh:12.4f} {D0 / lam**2:10.4f} {gap:8.4f} {rep.delta_lambda:10.4f}")
    for w in rep.warnings:
        print(f"      warning: {w}")

rep = spectral_report(1.0, 1.0, h, trunc, k_points=[np.array([s]) for s in (0.0, 0.1, 0.2, 0.3)], gap=False)
print("\nE(k) at lam = 1 against D k^2:")
for k, e in rep.E_of_k:
    print(f"  k = {k[0]:.2f}   E = {e.real:.6f}{e.imag:+.1e}i   D k^2 = {rep.D_matrix[0, 0] * k[0]**2:.6f}")
