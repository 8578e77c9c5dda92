"""Sparse builders for the fibered operators ``K_k``, ``V``, ``B`` and ``L_k = i K_k + i lam V + B``.

Column ``(x, A)`` of each matrix holds the image of ``delta_x (x) e_A``:

* ``B``: ``2 r |A| (x, A)``
* ``V``: ``(x, A ^ {x}) - (x, A ^ {0})``
* ``K_k``: ``sum_z h(z) [(x+z, A) - exp(-i k.z) (x+z, A+z)]``

Images outside a truncated basis are dropped and counted; the result is
the compression of the operator onto the basis span.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..lattice import HoppingKernel
from .basis import CharacterBasis

__all__ = ["SparseOperator", "build_B", "build_V", "build_K", "build_dK", "build_L", "hopping_vectors", "export_coo"]


@dataclass
class SparseOperator:
    matrix: sp.csr_matrix
    kind: str
    k: np.ndarray | None = None
    clipped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other


def _assemble(basis: CharacterBasis, triples, kind, k=None, **meta) -> SparseOperator:
    n = len(basis)
    rows, cols, vals = [], [], []
    clipped = 0
    for col, target, val in triples:
        row = basis.index(target)
        if row is None:
            clipped += 1
            continue
        rows.append(row)
        cols.append(col)
        vals.append(val)
    mat = sp.coo_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return SparseOperator(mat, kind, None if k is None else np.atleast_1d(k), clipped, dict(meta, truncation=basis.truncation))


def build_B(basis: CharacterBasis, rate: float) -> SparseOperator:
    """Flip generator: diagonal ``2 r |A|``."""
    diag = 2.0 * rate * basis.set_sizes()
    return SparseOperator(sp.diags(diag.astype(complex), format="csr"), "B", meta={"rate": rate, "truncation": basis.truncation})


def build_V(basis: CharacterBasis) -> SparseOperator:
    """Multiplication by ``omega(x) - omega(0)``."""
    origin = basis.origin

    def triples():
        for col, (x, A) in enumerate(basis.elements):
            if x == origin:
                continue
            yield col, (x, basis.toggle(A, x)), 1.0
            yield col, (x, basis.toggle(A, origin)), -1.0

    return _assemble(basis, triples(), "V")


def build_K(basis: CharacterBasis, k, h: HoppingKernel) -> SparseOperator:
    """Fibered commutator with the hopping operator at wavevector ``k``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    hops = [(z, val, np.exp(-1j * float(np.dot(k, z)))) for z, val in h.items()]

    def triples():
        for col, (x, A) in enumerate(basis.elements):
            for z, val, phase in hops:
                xz = basis.wrap(tuple(a + b for a, b in zip(x, z)))
                yield col, (xz, A), val
                yield col, (xz, basis.shift_set(A, z)), -val * phase

    return _assemble(basis, triples(), "K", k)


def build_dK(basis: CharacterBasis, k, h: HoppingKernel, axis: int) -> SparseOperator:
    """Derivative of ``K_k`` along ``k_axis``: ``(x, A) -> sum_z i z_axis h(z) e^{-ik.z} (x+z, A+z)``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))

    def triples():
        for col, (x, A) in enumerate(basis.elements):
            for z, val in h.items():
                if z[axis] == 0:
                    continue
                xz = basis.wrap(tuple(a + b for a, b in zip(x, z)))
                yield col, (xz, basis.shift_set(A, z)), 1j * z[axis] * val * np.exp(-1j * float(np.dot(k, z)))

    return _assemble(basis, triples(), f"dK{axis}", k)


def build_L(basis: CharacterBasis, k, lam: float, rate: float, h: HoppingKernel) -> SparseOperator:
    """``L_k = i K_k + i lam V + B`` on the given basis."""
    K = build_K(basis, k, h)
    V = build_V(basis)
    B = build_B(basis, rate)
    mat = (1j * K.matrix + 1j * lam * V.matrix + B.matrix).tocsr()
    return SparseOperator(mat, "L", K.k, K.clipped + V.clipped,
                          {"lam": lam, "rate": rate, "truncation": basis.truncation, "clip_K": K.clipped, "clip_V": V.clipped})


def hopping_vectors(basis: CharacterBasis, h: HoppingKernel) -> np.ndarray:
    """Columns ``dK_j(0) delta_0 (x) 1 = i sum_z z_j h(z) (z, ())`` for ``j < d``."""
    u = np.zeros((len(basis), basis.dim), dtype=complex)
    for z, val in h.items():
        idx = basis.index((basis.wrap(z), ()))
        if idx is None:
            raise ValueError(f"hop {z} lies outside the basis")
        u[idx] += 1j * np.asarray(z) * val
    return u


def export_coo(op: SparseOperator, basis: CharacterBasis, path) -> None:
    """Write ``row col re im`` lines preceded by a header listing the basis labels."""
    coo = op.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# operator {op.kind} dim {op.dimension} nnz {coo.nnz} clipped {op.clipped}\n")
        if op.k is not None:
            fh.write(f"# k {' '.join(repr(float(v)) for v in op.k)}\n")
        for i, (x, A) in enumerate(basis.elements):
            fh.write(f"# basis {i} x={list(x)} A={[list(a) for a in A]}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v.real)!r} {float(v.imag)!r}\n")
