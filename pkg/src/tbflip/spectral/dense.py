"""Dense reference computations on tiny periodic windows with the full spin space.

Three independent routes to the averaged density matrix are available:

* the unfibered generator ``L = i[H(s), .] + B`` on ``l^2(W x W) (x) C^{2^N}``,
* the fibered operator ``L_k`` built directly on spin configurations, and
* the fibered operator in the character basis from :mod:`.operators`.

Agreement among them checks orientation conventions that are easy to get
wrong (shift direction of the spin set, sign of the phase).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from ..lattice import HoppingKernel, LatticeWindow, hopping_matrix
from ..markov import _configurations, flip_generator_dense
from .basis import CharacterBasis, DimensionError
from .operators import build_L

__all__ = [
    "MAX_DENSE_DIM",
    "unfibered_generator",
    "unfibered_density",
    "config_fiber_operator",
    "walsh_transform",
    "character_fiber_operator",
    "dense_equivalence",
    "rho_hat",
    "fibered_cf",
    "PilletReport",
    "pillet_oracle",
    "FiberReport",
    "fiber_consistency",
]

MAX_DENSE_DIM = 4096


def _check_dim(window: LatticeWindow, squared: bool):
    n = window.n_sites
    dim = (n * n if squared else n) * 2**n
    if dim > MAX_DENSE_DIM:
        mem = dim * dim * 16 / 2**20
        raise DimensionError(f"dense operator of dimension {dim} (~{mem:.0f} MiB) exceeds limit {MAX_DENSE_DIM}")
    return dim


def _shift_configs(window: LatticeWindow, disp) -> np.ndarray:
    """Row index of ``sigma_z s`` for every configuration row ``s``, with ``(sigma_z s)(y) = s(y + z)``."""
    n = window.n_sites
    conf = _configurations(n)
    src = window.shift_index(np.arange(n), disp)
    shifted = conf[:, src]
    bits = (shifted < 0).astype(np.int64)
    return bits @ (1 << np.arange(n))


def unfibered_generator(h: HoppingKernel, window: LatticeWindow, lam: float, rate: float) -> np.ndarray:
    """Dense ``i (H(s) rho - rho H(s)) + B`` with index order ``(x, y, s)``."""
    _check_dim(window, squared=True)
    n = window.n_sites
    ns = 2**n
    T = hopping_matrix(h, window).toarray()
    conf = _configurations(n).astype(float)
    I = np.eye(n)
    L = np.zeros((n * n * ns, n * n * ns), dtype=complex)
    ad_T = np.kron(T, I) - np.kron(I, T.T)
    B = flip_generator_dense(n, rate)
    # (x, y, s) -> ((x * n + y) * ns + s)
    L += np.kron(1j * ad_T, np.eye(ns))
    v = conf.T  # v[x, s]
    diff = (v[:, None, :] - v[None, :, :]).reshape(n * n * ns)
    L += np.diag(1j * lam * diff)
    L += np.kron(np.eye(n * n), B)
    return L


def unfibered_density(h: HoppingKernel, window: LatticeWindow, lam: float, rate: float, t: float,
                      rho0: np.ndarray) -> np.ndarray:
    """``E rho_t`` as ``sum_s mu(s) [exp(-t L) (rho0 (x) 1)](., ., s)``."""
    n = window.n_sites
    ns = 2**n
    L = unfibered_generator(h, window, lam, rate)
    v0 = np.kron(np.asarray(rho0, dtype=complex).reshape(-1), np.ones(ns))
    vt = la.expm(-t * L) @ v0
    return vt.reshape(n, n, ns).mean(axis=2)


def config_fiber_operator(h: HoppingKernel, window: LatticeWindow, k, lam: float, rate: float) -> np.ndarray:
    """Fibered ``L_k`` on functions ``phi(x, s)``, index order ``(x, s)``, built from the definitions.

    ``K_k phi(x, s) = sum_z h(z) [phi(x - z, s) - exp(-i k.z) phi(x - z, sigma_z s)]`` and
    ``V phi(x, s) = (s_x - s_0) phi(x, s)``.
    """
    _check_dim(window, squared=False)
    n = window.n_sites
    ns = 2**n
    k = np.atleast_1d(np.asarray(k, dtype=float))
    conf = _configurations(n).astype(float)
    K = np.zeros((n * ns, n * ns), dtype=complex)
    rows_s = np.arange(ns)
    for z, val in h.items():
        src_x = window.shift_index(np.arange(n), -np.asarray(z))
        sig = _shift_configs(window, z)
        phase = np.exp(-1j * float(np.dot(k, z)))
        for x in range(n):
            r = x * ns + rows_s
            K[r, src_x[x] * ns + rows_s] += val
            K[r, src_x[x] * ns + sig] -= val * phase
    V = np.diag((conf.T - conf[:, 0][None, :]).reshape(n * ns))
    B = np.kron(np.eye(n), flip_generator_dense(n, rate))
    return 1j * K + 1j * lam * V + B


def walsh_transform(window: LatticeWindow, basis: CharacterBasis) -> tuple[np.ndarray, np.ndarray]:
    """``(U, U_inv)`` mapping ``phi(x, s)`` to character coefficients and back.

    ``c_(x, A) = sum_s mu(s) e_A(s) phi(x, s)``; rows follow the order of ``basis``.
    """
    n = window.n_sites
    ns = 2**n
    conf = _configurations(n).astype(float)
    U = np.zeros((len(basis), n * ns))
    Uinv = np.zeros((n * ns, len(basis)))
    for i, (x, A) in enumerate(basis.elements):
        xi = int(window.index(x))
        sites = [int(window.index(a)) for a in A]
        eA = np.prod(conf[:, sites], axis=1) if sites else np.ones(ns)
        U[i, xi * ns:(xi + 1) * ns] = eA / ns
        Uinv[xi * ns:(xi + 1) * ns, i] = eA
    return U, Uinv


def character_fiber_operator(h: HoppingKernel, window: LatticeWindow, k, lam: float, rate: float):
    basis = CharacterBasis.periodic_full(window.dim, window.side, max_dim=MAX_DENSE_DIM)
    return basis, build_L(basis, k, lam, rate, h).toarray()


def dense_equivalence(h: HoppingKernel, window: LatticeWindow, k, lam: float, rate: float) -> float:
    """Max entrywise difference between the character-basis ``L_k`` and the transformed direct one."""
    basis, Lc = character_fiber_operator(h, window, k, lam, rate)
    U, Uinv = walsh_transform(window, basis)
    Ld = U @ config_fiber_operator(h, window, k, lam, rate) @ Uinv
    return float(np.abs(Ld - Lc).max())


def rho_hat(rho0: np.ndarray, window: LatticeWindow, k) -> np.ndarray:
    """``rho_hat_{0;k}(x) = sum_y exp(-i k.y) rho0(x - y, -y)`` with minimal-image ``y``."""
    n = window.n_sites
    k = np.atleast_1d(np.asarray(k, dtype=float))
    offs = window.offsets()
    out = np.zeros(n, dtype=complex)
    for yi in range(n):
        y = offs[yi]
        my = int(window.index(-y))
        xs = window.shift_index(np.arange(n), -y)
        out += np.exp(-1j * float(np.dot(k, y))) * rho0[xs, my]
    return out


def fibered_cf(h: HoppingKernel, window: LatticeWindow, lam: float, rate: float, t: float, k,
               rho0: np.ndarray) -> complex:
    """``<delta_0 (x) 1, exp(-t L_k) rho_hat_{0;k} (x) 1>`` in the full character basis.

    With ``(sigma_z s)(y) = s(y + z)`` this equals ``sum_x exp(+i k.x) E rho_t(x, x)``,
    the characteristic function at ``-k``; the two agree for reflection-symmetric models.
    """
    basis, L = character_fiber_operator(h, window, k, lam, rate)
    v = np.zeros(len(basis), dtype=complex)
    rh = rho_hat(rho0, window, k)
    coords = window.all_coords()
    for xi in range(window.n_sites):
        v[basis.index((tuple(int(c) for c in coords[xi]), ()))] = rh[xi]
    w = la.expm(-t * L) @ v
    return complex(w[basis.kernel_index])


def _delta_rho(window: LatticeWindow) -> np.ndarray:
    rho = np.zeros((window.n_sites, window.n_sites), dtype=complex)
    rho[0, 0] = 1.0
    return rho


@dataclass
class PilletReport:
    t: float
    diag: np.ndarray
    cf: np.ndarray
    ks: np.ndarray
    mc_mean: np.ndarray | None = None
    mc_stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def z_scores(self) -> np.ndarray | None:
        if self.mc_mean is None:
            return None
        return np.abs(self.mc_mean - self.diag) / self.mc_stderr

    def passed(self, n_sigma: float = 3.0) -> bool:
        z = self.z_scores
        return bool(z is not None and np.all(z <= n_sigma))


def pillet_oracle(h: HoppingKernel, window: LatticeWindow, lam: float, rate: float, t: float,
                  rho0: np.ndarray | None = None, field=None) -> PilletReport:
    """``E rho_t(x, x)`` from the fibered semigroup on every dual-grid ``k``, inverted by DFT.

    If ``field`` (a :class:`~tbflip.ensemble.MeanField` with a checkpoint at
    ``t``) is given, its site means and errors are attached for comparison.
    """
    _check_dim(window, squared=False)
    rho0 = _delta_rho(window) if rho0 is None else np.asarray(rho0, dtype=complex)
    ks = window.dual_grid()
    cf = np.array([fibered_cf(h, window, lam, rate, t, k, rho0) for k in ks])
    offs = window.offsets()
    phases = np.exp(-1j * offs @ ks.T)  # [x, k]
    diag = (phases @ cf).real / window.n_sites
    rep = PilletReport(t, diag, cf, ks, meta={"lam": lam, "rate": rate, "side": window.side})
    if field is not None:
        c = field.index_of(t)
        rep.mc_mean = field.mean[c]
        rep.mc_stderr = field.site_stderr()[c]
    return rep


@dataclass
class FiberReport:
    ks: np.ndarray
    direct: np.ndarray
    fibered: np.ndarray

    @property
    def max_error(self) -> float:
        return float(np.abs(self.direct - self.fibered).max())

    def passed(self, tol: float = 1e-9) -> bool:
        return self.max_error <= tol


def fiber_consistency(h: HoppingKernel, window: LatticeWindow, lam: float, rate: float, t: float,
                      rho0: np.ndarray | None = None) -> FiberReport:
    """``sum_x exp(i k.x) E rho_t(x, x)`` from the unfibered generator vs the fibered semigroup."""
    rho0 = _delta_rho(window) if rho0 is None else np.asarray(rho0, dtype=complex)
    rho_t = unfibered_density(h, window, lam, rate, t, rho0)
    ks = window.dual_grid()
    offs = window.offsets()
    direct = np.exp(1j * offs @ ks.T).T @ np.diag(rho_t)
    fibered = np.array([fibered_cf(h, window, lam, rate, t, k, rho0) for k in ks])
    return FiberReport(ks, direct, fibered)
