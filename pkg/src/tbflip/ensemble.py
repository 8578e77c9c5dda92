"""Monte Carlo estimation of the disorder-averaged density ``E|psi_t(x)|^2``.

Trajectories are grouped into contiguous batches by index; per-batch sums
are kept so that every linear functional of the mean field (characteristic
function, second moments) gets a bootstrap error bar from the same resampling
of batches.  Reductions run in trajectory-index order, so a fixed seed gives
bitwise-identical output.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .evolution import Propagator, PropagatorTolerance
from .lattice import HoppingKernel, LatticeWindow, WaveFunction
from .markov import FlipProcessConfig, sample_trajectory, trajectory_rng

__all__ = [
    "EnsembleError",
    "EnsembleSpec",
    "MeanField",
    "Functional",
    "DiffusionEstimate",
    "run_ensemble",
    "characteristic_function",
    "second_moment",
    "moment_matrix",
    "loglog_slope",
    "fit_diffusion_m2",
    "fit_diffusion_cf",
]

log = logging.getLogger(__name__)

MAX_BATCHES = 200
N_BOOTSTRAP = 200
NORM_ABORT = 1e-6
BOUNDARY_SITES = 5
BOUNDARY_MASS = 1e-6


class EnsembleError(RuntimeError):
    """A trajectory lost unitarity beyond the abort threshold."""


@dataclass
class EnsembleSpec:
    h: HoppingKernel
    lam: float
    rate: float
    window: LatticeWindow
    n_traj: int
    master_seed: int
    checkpoints: np.ndarray
    psi0: WaveFunction | None = None
    tol: PropagatorTolerance = field(default_factory=PropagatorTolerance)

    def __post_init__(self):
        self.checkpoints = np.asarray(self.checkpoints, dtype=float)
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")
        if len(self.checkpoints) == 0 or np.any(np.diff(self.checkpoints) <= 0) or self.checkpoints[0] < 0:
            raise ValueError("checkpoints must be nonnegative and strictly increasing")
        if not self.rate > 0:
            raise ValueError("flip rate must be positive")
        if self.psi0 is None:
            self.psi0 = WaveFunction.delta(self.window)

    @property
    def t_max(self) -> float:
        return float(self.checkpoints[-1])


@dataclass
class Functional:
    """A linear functional of the mean field at every checkpoint, with bootstrap replicates."""

    times: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    replicates: np.ndarray

    def covariance(self) -> np.ndarray:
        if self.replicates.shape[0] < 2:
            return np.full((len(self.times), len(self.times)), np.nan)
        return np.atleast_2d(np.cov(self.replicates, rowvar=False))


@dataclass
class MeanField:
    """Per-checkpoint site means of ``|psi_t(x)|^2`` plus the batch sums behind them."""

    times: np.ndarray
    window: LatticeWindow
    mean: np.ndarray
    batch_sums: np.ndarray
    batch_counts: np.ndarray
    n_traj: int
    master_seed: int = 0
    max_norm_drift: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._weights = None

    @property
    def n_batches(self) -> int:
        return len(self.batch_counts)

    def bootstrap_weights(self) -> np.ndarray:
        """``(N_BOOTSTRAP, n_batches)`` resampling counts, fixed by the master seed."""
        if self._weights is None:
            rng = trajectory_rng(self.master_seed, 0, stream=1)
            nb = self.n_batches
            idx = rng.integers(0, nb, size=(N_BOOTSTRAP, nb))
            w = np.zeros((N_BOOTSTRAP, nb))
            for r in range(N_BOOTSTRAP):
                w[r] = np.bincount(idx[r], minlength=nb)
            self._weights = w
        return self._weights

    def functional(self, weights: np.ndarray) -> Functional:
        """Apply ``sum_x weights(x) field(x)``; ``weights`` may be complex."""
        weights = np.asarray(weights)
        value = self.mean @ weights
        sums = self.batch_sums @ weights
        if self.n_batches < 2:
            reps = np.zeros((0, len(self.times)), dtype=value.dtype)
            se = np.full(len(self.times), np.nan)
        else:
            W = self.bootstrap_weights()
            reps = (W @ sums.reshape(self.n_batches, -1)) / (W @ self.batch_counts)[:, None]
            reps = reps.reshape(N_BOOTSTRAP, len(self.times))
            if np.iscomplexobj(reps):
                se = np.std(reps.real, axis=0, ddof=1) + 1j * np.std(reps.imag, axis=0, ddof=1)
            else:
                se = np.std(reps, axis=0, ddof=1)
        return Functional(self.times, value, se, reps)

    def site_stderr(self) -> np.ndarray:
        """Bootstrap standard error of every site mean, shape ``(n_checkpoints, n_sites)``."""
        if self.n_batches < 2:
            return np.full_like(self.mean, np.nan)
        W = self.bootstrap_weights()
        flat = self.batch_sums.reshape(self.n_batches, -1)
        reps = (W @ flat) / (W @ self.batch_counts)[:, None]
        return np.std(reps, axis=0, ddof=1).reshape(self.mean.shape)

    def trace(self) -> np.ndarray:
        return self.mean.sum(axis=1)

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[i], t, rel_tol=1e-12, abs_tol=1e-12):
            raise KeyError(f"no checkpoint at t={t}")
        return i


def run_ensemble(spec: EnsembleSpec, progress_every: int = 0) -> MeanField:
    """Average ``|psi_t|^2`` over ``spec.n_traj`` stationary trajectories."""
    window = spec.window
    cfg = FlipProcessConfig(spec.rate, window)
    prop = Propagator(spec.h, window, spec.lam, spec.tol)
    n_cp = len(spec.checkpoints)
    nb = min(spec.n_traj, MAX_BATCHES)
    # trajectory i goes to batch i * nb // n_traj
    bounds = [(b * spec.n_traj + nb - 1) // nb for b in range(nb + 1)]
    batch_sums = np.zeros((nb, n_cp, window.n_sites))
    counts = np.diff(bounds).astype(float)
    norm0 = spec.psi0.norm ** 2
    max_drift = 0.0
    for b in range(nb):
        acc = batch_sums[b]
        for i in range(bounds[b], bounds[b + 1]):
            path = sample_trajectory(cfg, spec.t_max, spec.master_seed, i)
            out, trimmed, _ = prop.run(spec.psi0.amplitudes, path, spec.checkpoints)
            rho = out.real**2 + out.imag**2
            drift = np.abs(rho.sum(axis=1) - norm0)
            j = int(np.argmax(drift))
            max_drift = max(max_drift, float(drift[j]))
            if drift[j] > NORM_ABORT:
                raise EnsembleError(f"trajectory {i}: norm drift {drift[j]:.3e} at t={spec.checkpoints[j]} "
                                    f"(events {path.n_events}, trimmed mass {trimmed:.3e})")
            acc += rho
            if progress_every and (i + 1) % progress_every == 0:
                log.info("trajectory %d/%d", i + 1, spec.n_traj)
    mean = batch_sums.sum(axis=0) / spec.n_traj
    return MeanField(spec.checkpoints.copy(), window, mean, batch_sums, counts, spec.n_traj, spec.master_seed, max_drift,
                     {"lam": spec.lam, "rate": spec.rate})


def _displacements(window: LatticeWindow) -> np.ndarray:
    return window.offsets().astype(float)


def characteristic_function(field: MeanField, k) -> tuple[Functional, np.ndarray]:
    """``sum_x exp(-i k.x) field(x)`` at every checkpoint, with ``k`` snapped to the dual grid.

    Returns the functional and the snapped wavevector.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    ks = field.window.snap_k(k)
    phase = np.exp(-1j * (_displacements(field.window) @ ks))
    return field.functional(phase), ks


def boundary_mass(field: MeanField) -> np.ndarray:
    """Mass within ``BOUNDARY_SITES`` of the window edge at each checkpoint."""
    offs = field.window.offsets()
    half = field.window.side // 2
    near = np.any(np.abs(offs) >= half - BOUNDARY_SITES, axis=1)
    return field.mean[:, near].sum(axis=1)


def second_moment(field: MeanField) -> tuple[Functional, np.ndarray]:
    """``sum_x |x|^2 field(x)`` with minimal-image ``x``, plus a per-checkpoint validity mask."""
    x = _displacements(field.window)
    valid = boundary_mass(field) <= BOUNDARY_MASS
    return field.functional((x**2).sum(axis=1)), valid


def moment_matrix(field: MeanField) -> list[list[Functional]]:
    """``sum_x x_i x_j field(x)`` for every pair of axes."""
    x = _displacements(field.window)
    d = x.shape[1]
    return [[field.functional(x[:, i] * x[:, j]) for j in range(d)] for i in range(d)]


def loglog_slope(times, values) -> float:
    """Least-squares slope of ``log values`` against ``log times``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    return float(np.polyfit(np.log(times), np.log(values), 1)[0])


@dataclass
class DiffusionEstimate:
    D: np.ndarray
    method: str
    covariance: np.ndarray
    fit_window: tuple[float, float]
    r2: float
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return bool(self.flags)

    @property
    def stderr(self) -> np.ndarray:
        d = self.D.shape[0]
        return np.sqrt(np.abs(np.diag(self.covariance))).reshape(d, d)

    def trace_stderr(self) -> float:
        d = self.D.shape[0]
        sel = [i * d + i for i in range(d)]
        return float(np.sqrt(self.covariance[np.ix_(sel, sel)].sum()))


def _linfit(x, y):
    """Slope, intercept and R^2 of an ordinary least-squares line."""
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return coef[0], coef[1], r2


def fit_diffusion_m2(field: MeanField, window: tuple[float, float] | None = None) -> DiffusionEstimate:
    """D from the growth of ``sum_x x_i x_j field(x)`` over ``[t_max/2, t_max]``.

    ``M_ij(t) ~ 2 D_ij t`` for diffusive spreading, so ``D_ij`` is half the
    fitted slope.  Flags: poor linear fit (R^2 < 0.95), log-log growth
    exponent outside ``[0.75, 1.25]``, boundary contamination, indefinite D.
    """
    t_max = field.times[-1]
    lo, hi = window if window is not None else (t_max / 2, t_max)
    sel = (field.times >= lo - 1e-12) & (field.times <= hi + 1e-12)
    if sel.sum() < 5:
        raise ValueError(f"need at least 5 checkpoints in [{lo}, {hi}], have {int(sel.sum())}")
    t = field.times[sel]
    mom = moment_matrix(field)
    d = len(mom)
    D = np.zeros((d, d))
    reps = []
    for i in range(d):
        for j in range(d):
            f = mom[i][j]
            D[i, j] = _linfit(t, f.value[sel])[0] / 2
            if f.replicates.shape[0]:
                reps.append(np.polyfit(t, f.replicates[:, sel].T, 1)[0] / 2)
            else:
                reps.append(np.full(1, np.nan))
    reps = np.array(reps).T
    cov = np.cov(reps, rowvar=False) if reps.shape[0] > 1 else np.full((d * d, d * d), np.nan)
    total, valid = second_moment(field)
    _, _, r2 = _linfit(t, total.value[sel])
    expo = loglog_slope(t, total.value[sel]) if np.all(total.value[sel] > 0) else float("nan")
    flags = []
    if r2 < 0.95:
        flags.append(f"nonlinear M2 (R^2={r2:.4f})")
    if not 0.75 <= expo <= 1.25:
        flags.append(f"non-diffusive growth exponent {expo:.3f}")
    if not np.all(valid[sel]):
        flags.append("mass near the window boundary")
    D = (D + D.T) / 2
    if np.linalg.eigvalsh(D).min() <= 0:
        flags.append("D not positive definite")
    return DiffusionEstimate(D, "m2_slope", np.atleast_2d(cov), (float(lo), float(hi)), float(r2), flags,
                             {"exponent": expo, "n_points": int(sel.sum())})


def fit_diffusion_cf(field: MeanField, ks, tau: float, times=None) -> DiffusionEstimate:
    """D from ``-ln Re CF(k/sqrt(tau), tau t) = c + t sum_ij D_ij k_i k_j``.

    Every ``k`` is rescaled by ``1/sqrt(tau)`` and snapped to the dual grid;
    the regression uses the snapped values.  Points whose real part is not
    positive at three standard errors are dropped.
    """
    ks = [np.atleast_1d(np.asarray(k, dtype=float)) for k in ks]
    d = field.window.dim
    times = field.times[field.times > 0] if times is None else np.asarray(times, dtype=float)
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    rows, ys, rep_ys, snap = [], [], [], []
    dropped = 0
    for k in ks:
        cf, q = characteristic_function(field, k / math.sqrt(tau))
        kk = q * math.sqrt(tau)
        snap.append(float(np.linalg.norm(kk - k)))
        for T in times:
            c = field.index_of(T)
            re = cf.value[c].real
            se = cf.stderr[c].real if np.isfinite(cf.stderr[c].real) else 0.0
            if re - 3 * se <= 0:
                dropped += 1
                continue
            t = T / tau
            rows.append([t * kk[i] * kk[j] * (1 if i == j else 2) for i, j in pairs] + [1.0])
            ys.append(-math.log(re))
            if cf.replicates.shape[0]:
                rep_ys.append(-np.log(np.clip(cf.replicates[:, c].real, 1e-300, None)))
    flags = []
    n = len(ys)
    if n < 6:
        flags.append(f"only {n} usable CF points")
    X = np.array(rows, dtype=float).reshape(n, len(pairs) + 1)
    y = np.array(ys)
    D = np.full((d, d), np.nan)
    cov = np.full((d * d, d * d), np.nan)
    r2 = float("nan")
    intercept = intercept_se = float("nan")
    if n >= len(pairs) + 1:
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        ss_tot = np.sum((y - y.mean()) ** 2)
        r2 = float(1 - np.sum(resid**2) / ss_tot) if ss_tot > 0 else 1.0
        D = _pairs_to_matrix(coef[:-1], pairs, d)
        intercept = float(coef[-1])
        if rep_ys and len(rep_ys) == n:
            Y = np.array(rep_ys)
            C = np.linalg.lstsq(X, Y, rcond=None)[0]
            mats = np.array([_pairs_to_matrix(C[:-1, r], pairs, d).ravel() for r in range(C.shape[1])])
            cov = np.cov(mats, rowvar=False)
            intercept_se = float(np.std(C[-1], ddof=1))
        if r2 < 0.99:
            flags.append(f"non-Gaussian CF profile (R^2={r2:.4f})")
        if np.linalg.eigvalsh(D).min() <= 0:
            flags.append("D not positive definite")
    return DiffusionEstimate(D, "cf_fit", np.atleast_2d(cov), (float(times.min()), float(times.max())), r2, flags,
                             {"intercept": intercept, "intercept_se": intercept_se, "n_points": n,
                              "dropped": dropped, "max_snap_error": max(snap) if snap else 0.0})


def _pairs_to_matrix(vals, pairs, d):
    D = np.zeros((d, d))
    for v, (i, j) in zip(vals, pairs):
        D[i, j] = D[j, i] = v
    return D
