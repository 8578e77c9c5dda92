"""The flip process: independent +-1 spins flipping at Poisson times.

Every trajectory draws from its own counter-based stream keyed by
``(master_seed, trajectory_index)``, so ensembles replay exactly and do not
depend on the order in which trajectories are run.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeWindow

__all__ = [
    "FlipProcessConfig",
    "PotentialPath",
    "MarkovConstants",
    "trajectory_rng",
    "sample_invariant",
    "sample_path",
    "sample_trajectory",
    "potential_at",
    "flip_generator_dense",
    "character_vector",
    "flip_constants",
    "derive_flip_constants",
]

MAX_DENSE_SITES = 12


@dataclass(frozen=True)
class FlipProcessConfig:
    rate: float
    window: LatticeWindow

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"flip rate must be positive, got {self.rate}")


@dataclass
class PotentialPath:
    """Initial spins plus the ordered flip events on ``(0, t_max]``.

    Paths are right continuous: at an event time the spin already has its
    post-flip value.
    """

    initial: np.ndarray
    times: np.ndarray
    sites: np.ndarray
    t_max: float
    rate: float = 1.0
    window: LatticeWindow | None = None
    seed: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=np.int8)
        self.times = np.asarray(self.times, dtype=float)
        self.sites = np.asarray(self.sites, dtype=np.int64)
        if np.any(np.abs(self.initial) != 1):
            raise ValueError("spins must be exactly +-1")
        if len(self.times) != len(self.sites):
            raise ValueError("times and sites must have equal length")
        if len(self.times) and (np.any(np.diff(self.times) <= 0) or self.times[0] <= 0):
            raise ValueError("event times must be positive and strictly increasing")
        if len(self.times) and self.times[-1] > self.t_max:
            raise ValueError("event beyond t_max")

    @property
    def n_sites(self) -> int:
        return len(self.initial)

    @property
    def n_events(self) -> int:
        return len(self.times)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("# tbflip potential path v1\n")
        buf.write(f"seed {' '.join(str(s) for s in self.seed)}\n")
        buf.write(f"rate {float(self.rate)!r}\n")
        if self.window is not None:
            buf.write(f"window {self.window.dim} {self.window.side}\n")
        buf.write(f"t_max {float(self.t_max)!r}\n")
        buf.write("initial " + "".join("+" if s > 0 else "-" for s in self.initial) + "\n")
        for t, s in zip(self.times, self.sites):
            buf.write(f"{float(t)!r} {int(s)}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "PotentialPath":
        header, times, sites = {}, [], []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            if key in ("seed", "rate", "window", "t_max", "initial"):
                header[key] = rest.strip()
            else:
                times.append(float(key))
                sites.append(int(rest))
        if "initial" not in header or "t_max" not in header:
            raise ValueError("path text lacks 'initial' or 't_max'")
        window = None
        if "window" in header:
            d, side = header["window"].split()
            window = LatticeWindow(int(d), int(side))
        seed = tuple(int(s) for s in header.get("seed", "").split())
        initial = np.array([1 if c == "+" else -1 for c in header["initial"]], dtype=np.int8)
        return cls(initial, np.array(times), np.array(sites, dtype=np.int64), float(header["t_max"]),
                   float(header.get("rate", 1.0)), window, seed)


@dataclass(frozen=True)
class MarkovConstants:
    """Gap time ``T``, sector constant ``gamma`` and non-degeneracy ``chi`` of the generator."""

    gap_T: float
    sector_gamma: float
    nondeg_chi: float


def trajectory_rng(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for one trajectory; ``stream`` separates auxiliary uses of the same index."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def sample_invariant(cfg: FlipProcessConfig, rng: np.random.Generator) -> np.ndarray:
    """Independent uniform +-1 spins on every window site."""
    return (2 * rng.integers(0, 2, size=cfg.window.n_sites) - 1).astype(np.int8)


def sample_path(cfg: FlipProcessConfig, t_max: float, rng: np.random.Generator, initial=None) -> PotentialPath:
    """Flip events from the aggregate clock: exponential gaps at rate ``r N``, uniform sites."""
    if not t_max >= 0:
        raise ValueError("t_max must be nonnegative")
    n = cfg.window.n_sites
    if t_max == 0:
        initial = np.ones(n, dtype=np.int8) if initial is None else initial
        return PotentialPath(initial, np.zeros(0), np.zeros(0, dtype=np.int64), 0.0, cfg.rate, cfg.window)
    total = cfg.rate * n
    chunk = int(total * t_max + 6 * np.sqrt(total * t_max) + 16)
    gaps = rng.exponential(1.0 / total, size=chunk)
    times = np.cumsum(gaps)
    while times[-1] <= t_max:
        more = np.cumsum(rng.exponential(1.0 / total, size=chunk)) + times[-1]
        times = np.concatenate([times, more])
    times = times[times <= t_max]
    sites = rng.integers(0, n, size=len(times))
    if initial is None:
        initial = np.ones(n, dtype=np.int8)
    return PotentialPath(initial, times, sites, float(t_max), cfg.rate, cfg.window)


def sample_trajectory(cfg: FlipProcessConfig, t_max: float, master_seed: int, index: int) -> PotentialPath:
    """Stationary path for trajectory ``index``: invariant initial spins, then flips."""
    rng = trajectory_rng(master_seed, index)
    initial = sample_invariant(cfg, rng)
    path = sample_path(cfg, t_max, rng, initial=initial)
    path.seed = (int(master_seed), int(index))
    return path


def potential_at(path: PotentialPath, t: float) -> np.ndarray:
    """Spin configuration at time ``t`` (flips at times ``<= t`` applied)."""
    if t < 0 or t > path.t_max:
        raise ValueError(f"t={t} outside [0, {path.t_max}]")
    n = np.searchsorted(path.times, t, side="right")
    parity = np.bincount(path.sites[:n], minlength=path.n_sites) % 2
    return (path.initial * np.where(parity, -1, 1)).astype(np.int8)


def _configurations(n: int) -> np.ndarray:
    """``(2^n, n)`` spins; bit j of the row index set means spin j is -1."""
    idx = np.arange(2**n)[:, None]
    return np.where((idx >> np.arange(n)) & 1, -1, 1).astype(np.int8)


def flip_generator_dense(n: int, rate: float) -> np.ndarray:
    """``B f(s) = r sum_j [f(s) - f(s with spin j flipped)]`` on ``{-1, 1}^n``."""
    if n > MAX_DENSE_SITES:
        raise ValueError(f"dense generator limited to {MAX_DENSE_SITES} sites, got {n}")
    dim = 2**n
    B = np.eye(dim) * rate * n
    idx = np.arange(dim)
    for j in range(n):
        B[idx, idx ^ (1 << j)] -= rate
    return B


def character_vector(n: int, A) -> np.ndarray:
    """Values of ``e_A(s) = prod_{a in A} s_a`` over all configurations."""
    conf = _configurations(n)
    return np.prod(conf[:, list(A)], axis=1).astype(float) if len(A) else np.ones(2**n)


def flip_constants(rate: float) -> MarkovConstants:
    """Closed form for independent flips: ``T = 1/(2r)``, ``gamma = 0``, ``chi = 1/(sqrt(2) r)``."""
    return MarkovConstants(1.0 / (2 * rate), 0.0, 1.0 / (np.sqrt(2) * rate))


def derive_flip_constants(rate: float, n: int = 4) -> MarkovConstants:
    """Same constants read off the dense generator on ``n`` sites.

    The smallest nonzero eigenvalue gives ``1/T``; the antisymmetric part of
    ``B`` bounds ``gamma``; ``chi = ||B^{-1}(s_1 - s_0)||`` in ``L^2(mu)``.
    """
    B = flip_generator_dense(n, rate)
    ev = np.linalg.eigvalsh((B + B.T) / 2)
    gap = ev[ev > 1e-9].min()
    asym = np.abs(B - B.T).max()
    gamma = 0.0 if asym == 0 else float(np.linalg.norm((B - B.T) / 2, 2) / gap)
    f = character_vector(n, [1]) - character_vector(n, [0])
    g = np.linalg.lstsq(B, f, rcond=None)[0]
    g -= g.mean()
    chi = float(np.sqrt(np.mean(g**2)))
    return MarkovConstants(float(1 / gap), gamma, chi)
