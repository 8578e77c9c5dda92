"""Diffusion of a particle in a flipping potential, measured two ways.

A particle starts on the origin of Z with nearest-neighbour hopping and an
on-site potential of +-lam whose signs flip at rate r.  Without the potential
the spread is ballistic (M2 ~ t^2).  With it, the disorder-averaged density
spreads diffusively (M2 ~ 2 D t) and D can also be read off the fibered
generator without sampling anything.

Run:  python3 demos/diffusion_benchmark.py [n_traj]
"""

import sys

import numpy as np

from tbflip import EnsembleSpec, LatticeWindow, fit_diffusion_m2, nearest_neighbor, run_ensemble, second_moment
from tbflip.spectral import CharacterBasis, Truncation, diffusion_matrix

n_traj = int(sys.argv[1]) if len(sys.argv) > 1 else 200
h = nearest_neighbor(1)
window = LatticeWindow(1, 512)
times = np.linspace(2.0, 50.0, 25)

print(f"Monte Carlo: {n_traj} flip trajectories on {window.shape[0]} sites, t up to {times[-1]:g}")
for lam in (0.0, 1.0):
    field = run_ensemble(EnsembleSpec(h, lam, 1.0, window, n_traj, 20240601, times))
    m2, _ = second_moment(field)
    est = fit_diffusion_m2(field, (20.0, 50.0))
    print(f"\nlam = {lam}")
    print("   t      M2       M2/t")
    for t, v in zip(times[::4], m2.value[::4]):
        print(f"{t:5.1f} {v:9.2f} {v / t:8.3f}")
    # at lam = 0 the growth is ballistic and the fit is flagged
    flags = "; ".join(est.flags) or "none"
    print(f"M2 fit: D = {est.D[0, 0]:.4f} +- {est.stderr[0, 0]:.4f}, R^2 = {est.r2:.5f}, flags: {flags}")

D, info = diffusion_matrix(CharacterBasis.truncated(1, Truncation(12, 3, 3)), 1.0, 1.0, h)
print(f"\nfibered generator at lam = 1: D = {D[0, 0]:.5f} (solver: {info.method})")
