"""Propagation of ``i d/dt psi = (T + lam v(omega(t))) psi`` along flip paths.

Between flip events the Hamiltonian is constant, so a trajectory is a
product of exact exponentials.  Two independent references are provided
for cross-checking: the time-ordered (Dyson) series summed exactly on the
piecewise-constant Hamiltonian, and the density-matrix equation integrated
with dense matrix exponentials.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.linalg as la

from . import _kernels
from .lattice import HoppingKernel, LatticeWindow, WaveFunction, hopping_matrix
from .markov import PotentialPath

__all__ = [
    "PropagatorTolerance",
    "Propagator",
    "propagate_constant",
    "evolve_trajectory",
    "evolve_checkpoints",
    "dyson_partial_sum",
    "dyson_terms",
    "evolve_density_oracle",
    "hamiltonian_dense",
    "checkpoint_grid",
]

MAX_DYSON_ORDER = 12
MAX_DENSITY_SITES = 8


@dataclass(frozen=True)
class PropagatorTolerance:
    eps_step: float = 1e-14
    # |psi|^2 below this is treated as zero when the active box shrinks
    trim: float = 1e-28

    def __post_init__(self):
        if not 0 < self.eps_step <= 1e-10:
            raise ValueError("eps_step must lie in (0, 1e-10]")


class Propagator:
    """Hamiltonian data for one (kernel, window, lam) triple, reusable across trajectories."""

    def __init__(self, h: HoppingKernel, window: LatticeWindow, lam: float, tol: PropagatorTolerance | None = None):
        self.h = h
        self.window = window
        self.lam = float(lam)
        self.tol = tol or PropagatorTolerance()
        T = hopping_matrix(h, window)
        self.indptr = T.indptr.astype(np.int64)
        self.indices = T.indices.astype(np.int64)
        self.data = T.data.astype(np.complex128)
        self.norm_bound = h.l1_norm() + abs(self.lam)
        self.h_max = _kernels.step_limit(self.norm_bound, self.tol.eps_step)
        self.offs = window.offsets().astype(np.int64)
        self.strides = np.array([window.side ** (window.dim - 1 - j) for j in range(window.dim)], dtype=np.int64)
        self.hop_range = h.range()
        self.disp = np.array(h.displacements, dtype=np.int64).reshape(-1, window.dim)
        self.amps = np.array(h.amplitudes, dtype=np.complex128)

    def constant(self, psi: np.ndarray, spins: np.ndarray, dt: float) -> np.ndarray:
        return _kernels.propagate_full(self.indptr, self.indices, self.data, self.lam,
                                       np.asarray(spins, dtype=np.int8), np.asarray(psi, dtype=np.complex128),
                                       float(dt), self.norm_bound, self.tol.eps_step, self.h_max)

    def run(self, psi0: np.ndarray, path: PotentialPath, checkpoints) -> tuple[np.ndarray, float, int]:
        """psi at each checkpoint, discarded mass and number of propagation steps."""
        cps = np.asarray(checkpoints, dtype=float)
        if np.any(np.diff(cps) < 0):
            raise ValueError("checkpoints must be sorted")
        if len(cps) and cps[-1] > path.t_max:
            raise ValueError(f"checkpoint {cps[-1]} beyond path horizon {path.t_max}")
        out = np.zeros((len(cps), self.window.n_sites), dtype=np.complex128)
        trimmed, steps = _kernels.evolve_path(
            self.disp, self.amps, self.lam, path.initial, path.times, path.sites,
            cps, np.asarray(psi0, dtype=np.complex128), self.offs, self.window.side, self.strides,
            self.hop_range, self.norm_bound, self.tol.eps_step, self.h_max, self.tol.trim, out)
        return out, trimmed, steps


def _check_finite(psi: WaveFunction):
    if not np.all(np.isfinite(psi.amplitudes)):
        raise ValueError("wave function has non-finite amplitudes")


def propagate_constant(psi: WaveFunction, h: HoppingKernel, lam: float, spins, dt: float,
                       tol: PropagatorTolerance | None = None) -> WaveFunction:
    """``exp(-i dt (T + lam diag(spins))) psi`` on the whole window."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    _check_finite(psi)
    prop = Propagator(h, psi.window, lam, tol)
    return WaveFunction(psi.window, prop.constant(psi.amplitudes, spins, dt))


def evolve_checkpoints(psi0: WaveFunction, path: PotentialPath, checkpoints, h: HoppingKernel, lam: float,
                       tol: PropagatorTolerance | None = None) -> np.ndarray:
    """Amplitudes at every checkpoint time, shape ``(n_checkpoints, n_sites)``."""
    _check_finite(psi0)
    prop = Propagator(h, psi0.window, lam, tol)
    out, _, _ = prop.run(psi0.amplitudes, path, checkpoints)
    return out


def evolve_trajectory(psi0: WaveFunction, path: PotentialPath, t: float, h: HoppingKernel, lam: float,
                      tol: PropagatorTolerance | None = None) -> WaveFunction:
    """psi at time ``t`` along ``path``."""
    if t > path.t_max or t < 0:
        raise ValueError(f"t={t} outside path horizon [0, {path.t_max}]")
    return WaveFunction(psi0.window, evolve_checkpoints(psi0, path, [t], h, lam, tol)[0])


def hamiltonian_dense(h: HoppingKernel, window: LatticeWindow, lam: float, spins) -> np.ndarray:
    return hopping_matrix(h, window).toarray() + lam * np.diag(np.asarray(spins, dtype=float))


def _intervals(path: PotentialPath, t: float):
    """(duration, spins) for each constant piece of H on [0, t]."""
    n = np.searchsorted(path.times, t, side="right")
    spins = path.initial.copy()
    start = 0.0
    for te, s in zip(path.times[:n], path.sites[:n]):
        yield te - start, spins.copy()
        spins[s] = -spins[s]
        start = te
    yield t - start, spins.copy()


def dyson_terms(psi0: WaveFunction, path: PotentialPath, t: float, order: int, h: HoppingKernel,
                lam: float) -> np.ndarray:
    """The first ``order + 1`` terms of the time-ordered series, shape ``(order + 1, n_sites)``.

    Term ``m`` is ``u_m(t)`` with ``u_0 = psi0`` and
    ``u_m(s) = -i int_0^s H(r) u_{m-1}(r) dr``.  On each interval where H is
    constant every ``u_m`` is a polynomial in the local time, so the
    integrals are carried exactly as polynomial coefficients.
    """
    if order > MAX_DYSON_ORDER or order < 0:
        raise ValueError(f"order must lie in [0, {MAX_DYSON_ORDER}]")
    if t < 0 or t > path.t_max:
        raise ValueError("t outside path horizon")
    n = psi0.window.n_sites
    T = hopping_matrix(h, psi0.window).toarray()
    values = np.zeros((order + 1, n), dtype=complex)
    values[0] = psi0.amplitudes
    for dt, spins in _intervals(path, t):
        H = T + lam * np.diag(spins.astype(float))
        # coef[m][p]: coefficient of (s - s_start)^p in u_m
        coef = np.zeros((order + 1, order + 1, n), dtype=complex)
        coef[:, 0] = values
        for m in range(1, order + 1):
            for p in range(m):
                coef[m, p + 1] = -1j * (H @ coef[m - 1, p]) / (p + 1)
        powers = dt ** np.arange(order + 1)
        values = np.einsum("mpn,p->mn", coef, powers)
    return values


def dyson_partial_sum(psi0: WaveFunction, path: PotentialPath, t: float, order: int, h: HoppingKernel,
                      lam: float) -> WaveFunction:
    """``psi0 + sum_{m=1}^{order} (-i)^m int_{simplex} H(r_1)...H(r_m) psi0``."""
    return WaveFunction(psi0.window, dyson_terms(psi0, path, t, order, h, lam).sum(axis=0))


def dyson_term_bound(norm_H: float, t: float, m: int) -> float:
    """``(||H|| t)^m / m!``, the simplex-volume bound on term ``m`` for unit psi0."""
    return (norm_H * t) ** m / factorial(m)


def evolve_density_oracle(rho0: np.ndarray, path: PotentialPath, t: float, h: HoppingKernel, lam: float,
                          window: LatticeWindow) -> np.ndarray:
    """Full density matrix at ``t`` via ``rho -> U rho U^H`` with dense exponentials per interval."""
    if window.n_sites > MAX_DENSITY_SITES:
        raise ValueError(f"density oracle limited to {MAX_DENSITY_SITES} sites")
    rho = np.array(rho0, dtype=complex)
    T = hopping_matrix(h, window).toarray()
    for dt, spins in _intervals(path, t):
        U = la.expm(-1j * dt * (T + lam * np.diag(spins.astype(float))))
        rho = U @ rho @ U.conj().T
    return rho


def checkpoint_grid(t_max: float, n_geometric: int = 6, n_linear: int = 16) -> np.ndarray:
    """Geometric times ``t_max / 2^m`` plus a linear grid on ``[t_max/2, t_max]``."""
    geo = t_max / 2.0 ** np.arange(n_geometric, 0, -1)
    lin = np.linspace(t_max / 2, t_max, n_linear)
    return np.unique(np.concatenate([[0.0], geo, lin]))
