"""Dispersion eigenvalue ``E(k)``, diffusion matrix, weak-coupling limit and spectral gap of ``L_k``.

``D = Hess E(0) / 2`` is computed two ways: by deflated linear solves
``D_ij = Re <u_i, L_0^{-1} u_j>`` with ``u_j = dK_j(0) delta_0 (x) 1``, and by
central differences of ``E(k)`` from shift-invert iteration.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from ..lattice import HoppingKernel, hopping_norm
from ..markov import MarkovConstants, flip_constants
from .basis import CharacterBasis, Truncation
from .operators import build_B, build_K, build_L, build_V, hopping_vectors

__all__ = [
    "EigenResult",
    "eigenvalue_near_zero",
    "SolveInfo",
    "diffusion_matrix",
    "hessian_fd",
    "weak_coupling_D0",
    "gap_delta_lambda",
    "GapReport",
    "spectral_gap_check",
    "low_spectrum",
    "SpectralReport",
    "spectral_report",
]

log = logging.getLogger(__name__)

DEFAULT_SHIFT = -1e-3


def _unit(n, i):
    return sp.csr_matrix(([1.0 + 0j], ([i], [i])), shape=(n, n))


@dataclass
class EigenResult:
    E: complex
    vector: np.ndarray
    residual: float
    iterations: int
    converged: bool
    second: complex | None = None
    nearby: np.ndarray | None = None


def eigenvalue_near_zero(basis: CharacterBasis, k, lam: float, rate: float, h: HoppingKernel,
                         shift: float = DEFAULT_SHIFT, tol: float = 1e-10, maxiter: int = 100,
                         n_second: int = 0) -> EigenResult:
    """Eigenvalue of ``L_k`` closest to ``shift`` by inverse iteration on a sparse LU factorization.

    The start vector is ``delta_0 (x) 1``, the exact kernel vector at ``k = 0``.
    ``n_second > 0`` also runs Arnoldi on the shift-inverted operator with
    the converged eigenpair deflated and returns the ``n_second`` eigenvalues
    found there (``second`` is the one of smallest real part).
    """
    L = build_L(basis, k, lam, rate, h).matrix
    n = L.shape[0]
    lu = sla.splu((L - shift * sp.identity(n, format="csr")).tocsc())
    v = basis.unit((basis.origin, ()))
    E = 0j
    res = np.inf
    it = 0
    for it in range(1, maxiter + 1):
        w = lu.solve(v)
        v = w / np.linalg.norm(w)
        Lv = L @ v
        E = np.vdot(v, Lv)
        res = float(np.linalg.norm(Lv - E * v))
        if res <= tol:
            break
    # slow contraction (branch close to the rest of the spectrum): refine with the Rayleigh quotient as shift
    for _ in range(5 if res > tol else 0):
        lu_e = sla.splu((L - E * sp.identity(n, format="csr")).tocsc())
        for _ in range(3):
            it += 1
            w = lu_e.solve(v)
            v = w / np.linalg.norm(w)
            Lv = L @ v
            E = np.vdot(v, Lv)
            res = float(np.linalg.norm(Lv - E * v))
            if res <= tol:
                break
        if res <= tol:
            break
    out = EigenResult(complex(E), v, res, it, res <= tol)
    if n_second:
        # left eigenvector for an oblique deflation
        u = basis.unit((basis.origin, ()))
        for _ in range(maxiter):
            wl = lu.solve(u, trans="H")
            u = wl / np.linalg.norm(wl)
            if np.linalg.norm(L.conj().T @ u - np.conj(E) * u) <= tol:
                break
        s = np.vdot(u, v)

        def matvec(x):
            x = x - v * (np.vdot(u, x) / s)
            y = lu.solve(x)
            return y - v * (np.vdot(u, y) / s)

        op = sla.LinearOperator((n, n), matvec=matvec, dtype=complex)
        nu = sla.eigs(op, k=n_second, which="LM", return_eigenvectors=False, tol=1e-12,
                      v0=np.ones(n, dtype=complex) / np.sqrt(n))
        lam_ev = shift + 1.0 / nu
        out.nearby = lam_ev[np.argsort(lam_ev.real)]
        out.second = complex(out.nearby[0])
    return out


@dataclass
class SolveInfo:
    method: str
    residuals: list
    iterations: list
    flags: list = field(default_factory=list)


def _deflated_L0(basis: CharacterBasis, lam: float, rate: float, h: HoppingKernel):
    L0 = build_L(basis, np.zeros(basis.dim), lam, rate, h)
    i0 = basis.kernel_index
    # L_0 vanishes on row and column (0, empty); adding that projector makes it invertible
    return (L0.matrix + _unit(len(basis), i0)).tocsc(), L0


def diffusion_matrix(basis: CharacterBasis, lam: float, rate: float, h: HoppingKernel,
                     tol: float = 1e-10, method: str = "gmres") -> tuple[np.ndarray, SolveInfo]:
    """``D_ij = Re <u_i, L_0^{-1} u_j>`` with the kernel direction deflated.

    ``method="gmres"`` uses restarted GMRES preconditioned by ``(B + 1)^{-1}``
    and falls back to a sparse LU solve (flagged) if the residual target is
    missed; ``method="direct"`` uses the LU solve only.
    """
    A, L0 = _deflated_L0(basis, lam, rate, h)
    U = hopping_vectors(basis, h)
    d = basis.dim
    Y = np.zeros_like(U)
    info = SolveInfo(method, [], [])
    if L0.clipped and lam != 0 and basis.truncation is not None and basis.truncation.set_size == 0:
        info.flags.append("potential term clipped entirely by the truncation")
    precond = None
    if method == "gmres":
        diag = 2.0 * rate * basis.set_sizes() + 1.0
        precond = sla.LinearOperator(A.shape, matvec=lambda x: x / diag, dtype=complex)
    lu = None
    for j in range(d):
        b = U[:, j]
        bn = np.linalg.norm(b)
        y = None
        if method == "gmres":
            count = [0]

            def cb(_):
                count[0] += 1

            y, code = sla.gmres(A, b, M=precond, rtol=tol / 10, atol=0.0, restart=200, maxiter=50,
                                callback=cb, callback_type="pr_norm")
            res = np.linalg.norm(A @ y - b) / bn
            if code != 0 or res > tol:
                info.flags.append(f"gmres stagnated on axis {j} (relative residual {res:.2e}); LU fallback")
                y = None
            else:
                info.iterations.append(count[0])
        if y is None:
            if lu is None:
                try:
                    lu = sla.splu(A)
                except RuntimeError as exc:
                    info.flags.append(f"deflated L_0 is singular on this truncation ({exc})")
                    return np.full((d, d), np.nan), info
            y = lu.solve(b)
            info.iterations.append(0)
        info.residuals.append(float(np.linalg.norm(A @ y - b) / bn))
        Y[:, j] = y
    D = np.real(U.conj().T @ Y)
    D = (D + D.T) / 2
    if np.linalg.eigvalsh(D).min() <= 0:
        info.flags.append("D not positive definite")
    return D, info


def hessian_fd(basis: CharacterBasis, lam: float, rate: float, h: HoppingKernel, step: float = 1e-3,
               **kw) -> np.ndarray:
    """``Hess E(0) / 2`` by central differences of the dispersion eigenvalue."""
    d = basis.dim

    def E(k):
        return eigenvalue_near_zero(basis, k, lam, rate, h, **kw).E.real

    e0 = E(np.zeros(d))
    H = np.zeros((d, d))
    for i in range(d):
        ei = np.eye(d)[i] * step
        H[i, i] = (E(ei) - 2 * e0 + E(-ei)) / step**2
        for j in range(i):
            ej = np.eye(d)[j] * step
            H[i, j] = H[j, i] = (E(ei + ej) - E(ei - ej) - E(-ei + ej) + E(-ei - ej)) / (4 * step**2)
    return H / 2


def weak_coupling_D0(basis: CharacterBasis, rate: float, h: HoppingKernel) -> tuple[np.ndarray, dict]:
    """Limit of ``lam^2 D(lam)`` as ``lam -> 0``.

    ``Gamma0 = P0 V P0perp (i K_0 + B)^{-1} P0perp V P0`` on the e_empty
    sector; ``D0_ij = Re <u_i, Gamma0^{-1} u_j>`` with ``Gamma0`` inverted off
    ``(0, empty)``.
    """
    K = build_K(basis, np.zeros(basis.dim), h).matrix
    V = build_V(basis).matrix
    B = build_B(basis, rate).matrix
    empty = basis.sector_mask(empty=True)
    e_idx = np.flatnonzero(empty)
    o_idx = np.flatnonzero(~empty)
    A = (1j * K + B).tocsr()[o_idx][:, o_idx].tocsc()
    lu = sla.splu(A)
    keep = [i for i in e_idx if i != basis.kernel_index]
    rhs = V.tocsr()[o_idx][:, keep].toarray()
    Z = lu.solve(rhs)
    G = (V.tocsr()[keep][:, o_idx] @ Z)
    U = hopping_vectors(basis, h)[keep]
    cond = float(np.linalg.cond(G))
    Y = np.linalg.solve(G, U)
    D0 = np.real(U.conj().T @ Y)
    D0 = (D0 + D0.T) / 2
    herm = (G + G.conj().T) / 2
    diag = {"cond_gamma0": cond, "min_re_gamma0": float(np.linalg.eigvalsh(herm).min())}
    if cond > 1e12:
        diag["flag"] = "near-singular Gamma0"
    return D0, diag


def gap_delta_lambda(lam: float, rate: float, h: HoppingKernel,
                     constants: MarkovConstants | None = None) -> tuple[float, float]:
    """Closed-form lower bound on the nonzero spectrum of ``L_0`` and its small-``lam`` coefficient.

    ``delta = (1/T) lam^2 chi^2 / ((2 + gamma + 2 T ||h||_inf + 4 T lam)^2 + lam^2 chi^2)``
    and ``delta ~ c lam^2`` with ``c = chi^2 / (T (2 + gamma + 2 T ||h||_inf)^2)``.
    """
    mc = constants or flip_constants(rate)
    T, g, chi = mc.gap_T, mc.sector_gamma, mc.nondeg_chi
    hn = hopping_norm(h)
    lam = abs(lam)
    den = (2 + g + 2 * T * hn + 4 * T * lam) ** 2 + lam**2 * chi**2
    delta = (1 / T) * lam**2 * chi**2 / den
    c = chi**2 / (T * (2 + g + 2 * T * hn) ** 2)
    return float(delta), float(c)


def low_spectrum(L: sp.spmatrix, max_re: float, dense_limit: int = 1500, n_per_shift: int = 16) -> np.ndarray:
    """Eigenvalues of ``L`` with real part below ``max_re``.

    Dense for small matrices; otherwise a shift-invert Arnoldi sweep along
    the real axis (eigenvalues in this region are found to be nearly real).
    """
    n = L.shape[0]
    if n <= dense_limit:
        ev = np.linalg.eigvals(L.toarray())
        return np.sort_complex(ev[ev.real < max_re])
    found = []
    shifts = np.linspace(-0.01, max_re, 6)
    for s in shifts:
        lu = sla.splu((L - s * sp.identity(n, format="csc")).tocsc())
        op = sla.LinearOperator((n, n), matvec=lu.solve, dtype=complex)
        nu = sla.eigs(op, k=n_per_shift, which="LM", return_eigenvectors=False, tol=1e-10)
        found.append(s + 1.0 / nu)
    ev = np.concatenate(found)
    ev = ev[ev.real < max_re]
    # merge duplicates found from neighbouring shifts
    ev = ev[np.argsort(ev.real)]
    keep = []
    for z in ev:
        if not keep or np.min(np.abs(np.array(keep) - z)) > 1e-7 * max(1.0, abs(z)):
            keep.append(z)
    return np.array(keep)


@dataclass
class GapReport:
    lam: float
    delta_lambda: float
    gap: float
    gap_doubled: float
    drift: float
    zero_multiplicity: int
    wedge_bound: float
    wedge_violation: float
    eigenvalues: np.ndarray
    dimensions: tuple

    @property
    def passed(self) -> bool:
        return (self.gap >= self.delta_lambda and self.drift <= 0.05 and self.zero_multiplicity == 1
                and self.wedge_violation <= 0)


def spectral_gap_check(lam: float, rate: float, h: HoppingKernel, trunc: Truncation = Truncation(),
                       constants: MarkovConstants | None = None, zero_tol: float = 1e-8) -> GapReport:
    """Smallest nonzero real part of the spectrum of ``L_0`` at ``trunc`` and with doubled ``pos_radius``.

    Eigenvalues are detected in ``Re z < 1/T``; each is checked against the
    numerical-range wedge ``|Im z| <= ||h||_inf + 2 lam + gamma Re z``.
    """
    mc = constants or flip_constants(rate)
    delta, _ = gap_delta_lambda(lam, rate, h, mc)
    max_re = 1.0 / mc.gap_T
    gaps, dims, evs, zeros = [], [], [], []
    for tr in (trunc, trunc.doubled_positions()):
        basis = CharacterBasis.truncated(h.dim, tr)
        L = build_L(basis, np.zeros(h.dim), lam, rate, h).matrix
        ev = low_spectrum(L, max_re)
        nz = ev[np.abs(ev) > zero_tol]
        zeros.append(int(np.sum(np.abs(ev) <= zero_tol)))
        gaps.append(float(nz.real.min()) if len(nz) else np.inf)
        dims.append(len(basis))
        evs.append(ev)
    bound = hopping_norm(h) + 2 * abs(lam)
    ev = evs[0]
    nz = ev[np.abs(ev) > zero_tol]
    viol = float(np.max(np.abs(nz.imag) - bound - mc.sector_gamma * nz.real)) if len(nz) else -np.inf
    drift = abs(gaps[1] - gaps[0]) / gaps[0]
    return GapReport(lam, delta, gaps[0], gaps[1], drift, zeros[0], bound, viol, ev, tuple(dims))


@dataclass
class SpectralReport:
    lam: float
    rate: float
    truncation: Truncation
    dimension: int
    E_of_k: list
    D_matrix: np.ndarray
    D_hessian: np.ndarray
    D0_matrix: np.ndarray
    delta_lambda: float
    gap_observed: float | None
    solver: dict
    warnings: list = field(default_factory=list)
    gap_report: GapReport | None = None

    def to_dict(self) -> dict:
        out = {}
        for key, val in asdict(self).items():
            if key == "gap_report":
                continue
            if isinstance(val, np.ndarray):
                val = val.tolist()
            out[key] = val
        out["truncation"] = asdict(self.truncation)
        out["E_of_k"] = [{"k": list(map(float, k)), "re": e.real, "im": e.imag} for k, e in self.E_of_k]
        g = self.gap_report
        if g is not None:
            out["gap_check"] = {"gap": g.gap, "gap_doubled": g.gap_doubled, "drift": g.drift,
                                "zero_multiplicity": g.zero_multiplicity, "wedge_bound": g.wedge_bound,
                                "wedge_violation": g.wedge_violation, "dimensions": list(g.dimensions),
                                "passed": g.passed}
        return out


def spectral_report(lam: float, rate: float, h: HoppingKernel, trunc: Truncation = Truncation(),
                    k_points=None, gap: bool = True) -> SpectralReport:
    """Run every spectral computation for one parameter set."""
    basis = CharacterBasis.truncated(h.dim, trunc)
    warnings = []
    D, info = diffusion_matrix(basis, lam, rate, h)
    warnings += info.flags
    nan = np.full((h.dim, h.dim), np.nan)
    d0info = {"cond_gamma0": float("nan")}
    if np.all(np.isfinite(D)):
        Dh = hessian_fd(basis, lam, rate, h)
        D0, d0info = weak_coupling_D0(basis, rate, h)
        if "flag" in d0info:
            warnings.append(d0info["flag"])
    else:
        Dh, D0 = nan, nan
    if k_points is None:
        k_points = [np.eye(h.dim)[0] * s for s in (0.0, 0.05, 0.1, 0.2, 0.3)]
    Ek = []
    for k in k_points:
        try:
            r = eigenvalue_near_zero(basis, k, lam, rate, h)
        except RuntimeError as exc:
            warnings.append(f"E(k) failed at k={np.atleast_1d(k).tolist()}: {exc}")
            Ek.append((np.atleast_1d(k), complex(np.nan, np.nan)))
            continue
        if not r.converged:
            warnings.append(f"E(k) not converged at k={np.atleast_1d(k).tolist()} (residual {r.residual:.2e})")
        Ek.append((np.atleast_1d(k), r.E))
    delta, _ = gap_delta_lambda(lam, rate, h)
    gap_obs = g = None
    if gap:
        g = spectral_gap_check(lam, rate, h, trunc)
        gap_obs = g.gap
        if g.gap < delta:
            warnings.append(f"observed gap {g.gap:.4g} below closed-form bound {delta:.4g}")
    rel = np.abs(D - Dh).max() / np.abs(D).max()
    if np.isfinite(rel) and rel > 1e-4:
        warnings.append(f"direct and Hessian D differ by {rel:.2e}")
    return SpectralReport(lam, rate, trunc, len(basis), Ek, D, Dh, D0, delta, gap_obs,
                          {"method": info.method, "residuals": info.residuals, "iterations": info.iterations,
                           "cond_gamma0": d0info["cond_gamma0"]}, warnings, g)
