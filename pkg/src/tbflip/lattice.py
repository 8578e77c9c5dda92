"""Periodic lattice windows, translation-invariant hopping kernels and wave functions."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

__all__ = [
    "LatticeWindow",
    "HoppingKernel",
    "WaveFunction",
    "ValidationReport",
    "nearest_neighbor",
    "validate_hopping",
    "apply_hopping",
    "symbol_eval",
    "hopping_norm",
    "hopping_matrix",
    "perturbation_constant",
    "window_side_for",
]


@dataclass(frozen=True)
class LatticeWindow:
    """Periodic box ``[0, side)^dim`` standing in for ``Z^dim``.

    Sites are numbered in row-major order; site 0 is the origin.
    """

    dim: int
    side: int
    boundary: str = "periodic"

    def __post_init__(self):
        if self.dim < 1 or self.side < 1:
            raise ValueError(f"window needs dim >= 1 and side >= 1, got {self.dim}, {self.side}")
        if self.boundary != "periodic":
            raise ValueError("only periodic windows are supported")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dim

    @property
    def n_sites(self) -> int:
        return self.side**self.dim

    def coords(self, index):
        return np.array(np.unravel_index(index, self.shape)).T

    def index(self, coords) -> np.ndarray:
        c = np.asarray(coords) % self.side
        return np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), self.shape)

    def all_coords(self) -> np.ndarray:
        """``(n_sites, dim)`` array of coordinates in site order."""
        return self.coords(np.arange(self.n_sites))

    def offsets(self) -> np.ndarray:
        """Minimal-image displacement of every site from the origin, in ``[-side//2, side - side//2)``."""
        c = self.all_coords()
        return (c + self.side // 2) % self.side - self.side // 2

    def shift_index(self, index, disp) -> np.ndarray:
        """Site index of ``coords(index) + disp`` with periodic wrap."""
        return self.index(self.coords(index) + np.asarray(disp))

    def dual_grid(self) -> np.ndarray:
        """Wavevectors ``2 pi m / side`` in ``[-pi, pi)`` on every axis, shape ``(n_sites, dim)``."""
        m = self.offsets()
        return 2 * np.pi * m / self.side

    def snap_k(self, k) -> np.ndarray:
        """Nearest dual-grid wavevector to ``k``."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        step = 2 * np.pi / self.side
        return np.round(k / step) * step


@dataclass(frozen=True)
class HoppingKernel:
    """Finite-support hopping amplitudes ``h(x)``; ``T psi(x) = sum_y h(x - y) psi(y)``."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for disp, val in dict(self.entries).items():
            key = tuple(int(v) for v in np.atleast_1d(disp))
            clean[key] = clean.get(key, 0) + complex(val)
        object.__setattr__(self, "entries", clean)

    @property
    def dim(self) -> int:
        return len(next(iter(self.entries)))

    @property
    def displacements(self) -> np.ndarray:
        return np.array(list(self.entries.keys()), dtype=np.int64).reshape(len(self.entries), -1)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array(list(self.entries.values()), dtype=complex)

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.amplitudes.imag == 0))

    def range(self) -> int:
        """Largest l1 hop length; bounds how far one application of T spreads support."""
        return int(np.abs(self.displacements).sum(axis=1).max())

    def l1_norm(self) -> float:
        return float(np.abs(self.amplitudes).sum())

    def items(self):
        return self.entries.items()


def nearest_neighbor(dim: int, t: float = 1.0) -> HoppingKernel:
    """``h(+-e_j) = t`` for every axis; symbol ``2 t sum_j cos k_j``."""
    entries = {}
    for j in range(dim):
        e = np.zeros(dim, dtype=int)
        e[j] = 1
        entries[tuple(e)] = t
        entries[tuple(-e)] = t
    return HoppingKernel(entries)


@dataclass
class ValidationReport:
    self_adjoint: bool
    spans: bool
    finite_second_moment: bool
    messages: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.self_adjoint and self.spans and self.finite_second_moment

    def __bool__(self):
        return self.passed


def validate_hopping(h: HoppingKernel, d: int, atol: float = 1e-12) -> ValidationReport:
    """Check self-adjointness, non-degeneracy and finite second moment of ``h``.

    Non-degeneracy is the rank condition on the support: the displacement
    vectors with nonzero amplitude must span ``R^d``.  For finite support
    this is the same as asking that no nonzero ``k`` is orthogonal to every
    hop.
    """
    if not h.entries:
        raise ValueError("hopping kernel is empty")
    msgs = []
    if any(len(x) != d for x in h.entries):
        raise ValueError(f"kernel displacements must have length {d}")

    sa = True
    for x, val in h.items():
        partner = h.entries.get(tuple(-v for v in x), 0.0)
        if abs(partner - np.conj(val)) > atol:
            sa = False
            msgs.append(f"h({tuple(-v for v in x)}) = {partner} != conj(h({x})) = {np.conj(val)}")

    support = np.array([x for x, v in h.items() if abs(v) > atol], dtype=float).reshape(-1, d)
    rank = np.linalg.matrix_rank(support) if len(support) else 0
    spans = rank == d
    if not spans:
        msgs.append(f"support spans a {rank}-dimensional subspace of R^{d}")

    moment = sum(float(np.dot(x, x)) * abs(v) for x, v in h.items())
    finite = bool(np.isfinite(moment))
    if not finite:
        msgs.append("second moment of |h| is not finite")
    return ValidationReport(sa, spans, finite, msgs)


def symbol_eval(h: HoppingKernel, k) -> complex:
    """``h_hat(k) = sum_x exp(-i k.x) h(x)``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    return complex(np.sum(h.amplitudes * np.exp(-1j * (h.displacements @ k))))


def _symbol_grid(h: HoppingKernel, n: int) -> tuple[np.ndarray, np.ndarray]:
    d = h.dim
    axes = [2 * np.pi * np.arange(n) / n] * d
    ks = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    vals = np.abs(np.exp(-1j * ks @ h.displacements.T.astype(float)) @ h.amplitudes)
    return ks, vals


def hopping_norm(h: HoppingKernel, tol: float = 1e-9, n0: int = 16, n_max: int = 4096) -> float:
    """Operator norm ``max_k |h_hat(k)|`` on ``l^2(Z^d)``.

    The torus is sampled on grids that double in resolution; the best few
    grid points are polished by a local optimizer.  Stops once two successive
    grids agree to ``tol``.
    """
    d = h.dim
    prev = None
    n = n0
    while True:
        ks, vals = _symbol_grid(h, n)
        best = vals.max()
        for i in np.argsort(vals)[-min(4, len(vals)):]:
            res = minimize(lambda k: -abs(symbol_eval(h, k)), ks[i], method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 2000})
            best = max(best, -res.fun)
        if prev is not None and abs(best - prev) < tol:
            return float(best)
        if n >= n_max or n ** d > 4_000_000:
            return float(best)
        prev = best
        n *= 2


def perturbation_constant(h: HoppingKernel) -> float:
    """``sum_z |z| |h(z)|``, a bound on ``||L_k - L_0|| / |k|``."""
    return float(sum(np.linalg.norm(x) * abs(v) for x, v in h.items()))


def hopping_matrix(h: HoppingKernel, window: LatticeWindow) -> sp.csr_matrix:
    """Sparse matrix of T on the periodic window (coincident wraps are summed)."""
    n = window.n_sites
    idx = np.arange(n)
    rows, cols, vals = [], [], []
    for disp, val in h.items():
        # (T psi)(x) gets h(z) psi(x - z)
        rows.append(idx)
        cols.append(window.shift_index(idx, -np.asarray(disp)))
        vals.append(np.full(n, val, dtype=complex))
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return mat.tocsr()


@dataclass
class WaveFunction:
    window: LatticeWindow
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(self.window.n_sites)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @classmethod
    def delta(cls, window: LatticeWindow, site: int = 0) -> "WaveFunction":
        amp = np.zeros(window.n_sites, dtype=complex)
        amp[site] = 1.0
        return cls(window, amp)


def apply_hopping(h: HoppingKernel, psi: WaveFunction) -> WaveFunction:
    """``(T psi)(x) = sum_z h(z) psi(x - z)`` with periodic wrap."""
    w = psi.window
    grid = psi.amplitudes.reshape(w.shape)
    out = np.zeros_like(grid)
    for disp, val in h.items():
        out += val * np.roll(grid, shift=disp, axis=tuple(range(w.dim)))
    return WaveFunction(w, out.reshape(-1))


def window_side_for(h: HoppingKernel, t_max: float, margin: int = 10) -> int:
    """Smallest side keeping the ballistic cone ``||T|| t_max + margin`` inside half the window."""
    reach = h.l1_norm() * t_max + margin
    return int(2 * np.ceil(reach) + 2)


def iter_box(dim: int, radius: int):
    """All integer points of the cube ``[-radius, radius]^dim``."""
    return itertools.product(range(-radius, radius + 1), repeat=dim)
