"""Truncated character basis ``delta_x (x) e_A`` of ``l^2(Z^d) (x) L^2(Omega)``.

``e_A(omega) = prod_{a in A} omega(a)`` are orthonormal under the uniform
product measure, so a vector in the fibered space is a coefficient array
over pairs ``(x, A)``.  Positions are integer tuples, spin sets are sorted
tuples of positions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

__all__ = ["Truncation", "CharacterBasis", "estimate_dimension", "DimensionError"]


class DimensionError(ValueError):
    """Raised when a basis would exceed the allowed dimension."""


@dataclass(frozen=True)
class Truncation:
    """Finite section of the fibered space.

    ``|x|_1 <= pos_radius``, ``|A| <= set_size`` and every ``a in A`` within
    l1 distance ``set_radius`` of ``0`` or of ``x``.
    """

    pos_radius: int = 12
    set_size: int = 2
    set_radius: int = 2

    def __post_init__(self):
        if min(self.pos_radius, self.set_size, self.set_radius) < 0:
            raise ValueError("truncation parameters must be nonnegative")

    def doubled_positions(self) -> "Truncation":
        return Truncation(2 * self.pos_radius, self.set_size, self.set_radius)


def _l1_ball(dim: int, radius: int) -> list[tuple[int, ...]]:
    pts = [p for p in itertools.product(range(-radius, radius + 1), repeat=dim) if sum(map(abs, p)) <= radius]
    return sorted(pts)


def estimate_dimension(dim: int, trunc: Truncation) -> int:
    """Upper bound on the basis size, computed without enumerating it."""
    n_x = len(_l1_ball(dim, trunc.pos_radius)) if dim <= 3 and trunc.pos_radius <= 200 else (2 * trunc.pos_radius + 1) ** dim
    n_s = 2 * len(_l1_ball(dim, trunc.set_radius))
    n_sets = sum(comb(n_s, j) for j in range(min(trunc.set_size, n_s) + 1))
    return n_x * n_sets


class CharacterBasis:
    """Ordered list of ``(x, A)`` pairs with an index lookup.

    With ``period`` set, coordinates wrap modulo ``period`` (a periodic
    window); otherwise the basis lives on ``Z^d`` and images falling outside
    it are clipped by the operator builders.
    """

    def __init__(self, dim: int, elements, period: int | None = None, truncation: Truncation | None = None):
        self.dim = dim
        self.period = period
        self.truncation = truncation
        self.elements = list(elements)
        self._index = {el: i for i, el in enumerate(self.elements)}
        if len(self._index) != len(self.elements):
            raise ValueError("duplicate basis elements")

    def __len__(self):
        return len(self.elements)

    def __contains__(self, el):
        return el in self._index

    def __iter__(self):
        return iter(self.elements)

    def index(self, el) -> int | None:
        return self._index.get(el)

    @property
    def origin(self) -> tuple[int, ...]:
        return (0,) * self.dim

    @property
    def kernel_index(self) -> int:
        """Position of ``delta_0 (x) 1``."""
        return self._index[(self.origin, ())]

    def wrap(self, x) -> tuple[int, ...]:
        if self.period is None:
            return tuple(x)
        return tuple(int(v) % self.period for v in x)

    def shift_set(self, A, disp) -> tuple:
        return tuple(sorted(self.wrap(tuple(a + z for a, z in zip(site, disp))) for site in A))

    def toggle(self, A, site) -> tuple:
        """Symmetric difference ``A ^ {site}``: multiplication of ``e_A`` by ``omega(site)``."""
        s = set(A)
        s ^= {site}
        return tuple(sorted(s))

    def sector_mask(self, empty: bool = True) -> np.ndarray:
        """Boolean mask of elements with ``A`` empty (or non-empty)."""
        return np.array([(len(A) == 0) == empty for _, A in self.elements])

    def set_sizes(self) -> np.ndarray:
        return np.array([len(A) for _, A in self.elements], dtype=float)

    def unit(self, el) -> np.ndarray:
        v = np.zeros(len(self), dtype=complex)
        v[self._index[el]] = 1.0
        return v

    @classmethod
    def truncated(cls, dim: int, trunc: Truncation, max_dim: int = 200_000) -> "CharacterBasis":
        """Basis on ``Z^d`` for the given truncation, ``(0, ())`` first."""
        est = estimate_dimension(dim, trunc)
        if est > max_dim:
            raise DimensionError(f"truncation {trunc} gives up to {est} basis elements (limit {max_dim})")
        xs = _l1_ball(dim, trunc.pos_radius)
        ball = _l1_ball(dim, trunc.set_radius)
        origin = (0,) * dim
        elements = [(origin, ())]
        for x in xs:
            near = sorted(set(ball) | {tuple(b + c for b, c in zip(p, x)) for p in ball})
            for size in range(min(trunc.set_size, len(near)) + 1):
                for A in itertools.combinations(near, size):
                    if x == origin and size == 0:
                        continue
                    elements.append((x, A))
        return cls(dim, elements, period=None, truncation=trunc)

    @classmethod
    def periodic_full(cls, dim: int, side: int, max_dim: int = 200_000) -> "CharacterBasis":
        """Every ``(x, A)`` on the periodic window ``Z_side^dim`` (all ``2^N`` spin sets)."""
        sites = list(itertools.product(range(side), repeat=dim))
        n = len(sites)
        if n * 2**n > max_dim:
            raise DimensionError(f"periodic window with {n} sites needs {n * 2**n} basis elements (limit {max_dim})")
        origin = (0,) * dim
        elements = [(origin, ())]
        for x in sites:
            for size in range(n + 1):
                for A in itertools.combinations(sites, size):
                    if x == origin and size == 0:
                        continue
                    elements.append((x, A))
        return cls(dim, elements, period=side)
