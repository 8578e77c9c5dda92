"""Compiled inner loops for propagating ``psi`` under ``H = T + lam diag(spins)``.

``exp(-i dt H) psi`` is summed as a Taylor series whose length is fixed a
priori from ``||H|| dt`` so that the first omitted term is below ``tol``.
The trajectory kernel works on a box of sites around the significant part
of ``psi``; the box is padded by the maximal number of Taylor terms times the
hop range, so no term ever needs a site outside it.  Flip events at sites
outside the box cannot change the state over the step and are applied
without interrupting it.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MAX_TERMS = 12


@njit(cache=True)
def n_terms(theta, tol):
    """Smallest m with theta^(m+1)/(m+1)! <= tol."""
    m = 0
    bound = theta
    while bound > tol:
        m += 1
        bound = bound * theta / (m + 1)
        if m > 200:
            break
    return m


def step_limit(norm_bound: float, tol: float, max_terms: int = MAX_TERMS) -> float:
    """Largest step whose Taylor remainder after ``max_terms`` terms is below ``tol``."""
    theta = (math.factorial(max_terms + 1) * tol) ** (1.0 / (max_terms + 1))
    return theta / norm_bound


@njit(cache=True)
def _taylor_rows(rows, indptr, indices, data, lam, spins, psi, dt, m, term, new):
    """psi <- sum_{j<=m} (-i dt H)^j / j! psi on ``rows``; term/new must be zero off ``rows``."""
    nr = rows.shape[0]
    for a in range(nr):
        i = rows[a]
        term[i] = psi[i]
    for j in range(1, m + 1):
        c = -1j * dt / j
        for a in range(nr):
            i = rows[a]
            acc = lam * spins[i] * term[i]
            for p in range(indptr[i], indptr[i + 1]):
                acc += data[p] * term[indices[p]]
            new[i] = c * acc
        for a in range(nr):
            i = rows[a]
            psi[i] += new[i]
            term[i] = new[i]
    for a in range(nr):
        i = rows[a]
        term[i] = 0.0
        new[i] = 0.0


@njit(cache=True)
def propagate_full(indptr, indices, data, lam, spins, psi, dt, norm_bound, tol, h_max):
    """exp(-i dt H) psi on every site, in equal substeps no longer than ``h_max``."""
    n = psi.shape[0]
    out = psi.copy()
    if dt <= 0.0:
        return out
    rows = np.arange(n)
    term = np.zeros(n, dtype=np.complex128)
    new = np.zeros(n, dtype=np.complex128)
    nsub = int(math.ceil(dt / h_max))
    h = dt / nsub
    m = n_terms(norm_bound * h, tol)
    for _ in range(nsub):
        _taylor_rows(rows, indptr, indices, data, lam, spins, out, h, m, term, new)
    return out


@njit(cache=True)
def _box_bounds(psi, gidx, n_cells, offs, side, thr, pad, lo, width, full):
    """Padded bounding box, in minimal-image offsets, of cells with |psi|^2 > thr."""
    d = offs.shape[1]
    hi = np.empty(d, dtype=np.int64)
    for j in range(d):
        lo[j] = side
        hi[j] = -side
    found = False
    for a in range(n_cells):
        i = gidx[a]
        v = psi[i]
        if v.real * v.real + v.imag * v.imag > thr:
            found = True
            for j in range(d):
                o = offs[i, j]
                if o < lo[j]:
                    lo[j] = o
                if o > hi[j]:
                    hi[j] = o
    if not found:
        for j in range(d):
            lo[j] = 0
            hi[j] = 0
    for j in range(d):
        lo[j] -= pad
        hi[j] += pad
        full[j] = hi[j] - lo[j] + 1 >= side
        if full[j]:
            lo[j] = -(side // 2)
            hi[j] = lo[j] + side - 1
        width[j] = hi[j] - lo[j] + 1


@njit(cache=True)
def _layout(lo, width, full, side, strides, halo, gidx, inner, halo_dst, halo_src):
    """Local padded grid for the box.

    Fills ``gidx``/``inner`` (global and local index of each box cell) and the
    halo copy pairs for axes that wrap around the whole window.  Returns
    ``(n_cells, n_halo, local_size)``.
    """
    d = lo.shape[0]
    lw = np.empty(d, dtype=np.int64)
    ls = np.empty(d, dtype=np.int64)
    for j in range(d):
        lw[j] = width[j] + 2 * halo
    size = 1
    for j in range(d - 1, -1, -1):
        ls[j] = size
        size *= lw[j]
    cnt = np.zeros(d, dtype=np.int64)
    n_cells = 0
    n_halo = 0
    for q in range(size):
        inside = True
        wraps = True
        src = 0
        g = 0
        for j in range(d):
            c = cnt[j] - halo
            if c < 0 or c >= width[j]:
                inside = False
                if not full[j]:
                    wraps = False
                c = c % width[j]
            src += (c + halo) * ls[j]
            g += ((lo[j] + c) % side) * strides[j]
        if inside:
            gidx[n_cells] = g
            inner[n_cells] = q
            n_cells += 1
        elif wraps:
            halo_dst[n_halo] = q
            halo_src[n_halo] = src
            n_halo += 1
        for j in range(d - 1, -1, -1):
            cnt[j] += 1
            if cnt[j] < lw[j]:
                break
            cnt[j] = 0
    return n_cells, n_halo, size, ls


@njit(cache=True, fastmath=True)
def _taylor_local(q0, q1, doff, ar, ai, pot, mask, lr, li, dt, m, tr, ti, nr, ni, halo_dst, halo_src, n_halo):
    """loc <- sum_{j<=m} (-i dt H)^j / j! loc on the local grid, real and imaginary parts split.

    Cells in ``[q0, q1)`` are swept contiguously; halo cells inside the range
    are kept at zero by ``mask`` and refilled from their periodic images.
    Loops run over zero-based views so the compiler can vectorize them.
    """
    n = q1 - q0
    P = pot[q0:q1]
    M = mask[q0:q1]
    LR = lr[q0:q1]
    LI = li[q0:q1]
    TR = tr[q0:q1]
    TI = ti[q0:q1]
    NR = nr[q0:q1]
    NI = ni[q0:q1]
    for i in range(n):
        TR[i] = LR[i]
        TI[i] = LI[i]
    for j in range(1, m + 1):
        for b in range(n_halo):
            tr[halo_dst[b]] = tr[halo_src[b]]
            ti[halo_dst[b]] = ti[halo_src[b]]
        for i in range(n):
            NR[i] = P[i] * TR[i]
            NI[i] = P[i] * TI[i]
        for z in range(doff.shape[0]):
            o = doff[z]
            SR = tr[q0 - o:q1 - o]
            SI = ti[q0 - o:q1 - o]
            hr = ar[z]
            hi = ai[z]
            if hi == 0.0:
                for i in range(n):
                    NR[i] += hr * SR[i]
                    NI[i] += hr * SI[i]
            else:
                for i in range(n):
                    NR[i] += hr * SR[i] - hi * SI[i]
                    NI[i] += hr * SI[i] + hi * SR[i]
        c = dt / j
        # multiply by -i c, accumulate, and keep as the next term
        for i in range(n):
            r = M[i] * c * NI[i]
            im = -M[i] * c * NR[i]
            LR[i] += r
            LI[i] += im
            TR[i] = r
            TI[i] = im


@njit(cache=True)
def evolve_path(disp, amps, lam, spins0, times, sites, checkpoints, psi0,
                offs, side, strides, hop_range, norm_bound, tol, h_max, thr, out):
    """Propagate ``psi0`` through a flip path, storing psi at each checkpoint in ``out``.

    ``disp``/``amps`` list the hops ``(T psi)(x) = sum_z h(z) psi(x - z)``.
    Returns ``(trimmed_mass, n_steps)``; ``trimmed_mass`` is the squared norm
    discarded below ``thr`` when the box shrinks.
    """
    n = psi0.shape[0]
    d = offs.shape[1]
    psi = psi0.copy()
    spins = spins0.copy()
    m_max = n_terms(norm_bound * h_max, tol)
    # rebuild the box once the terms applied since the last build could have
    # carried amplitude across half of the padding
    budget = m_max + 1
    pad = 2 * budget * hop_range
    halo = hop_range
    cap = 1
    for j in range(d):
        cap *= side + 2 * halo
    lr = np.zeros(cap)
    li = np.zeros(cap)
    tr = np.zeros(cap)
    ti = np.zeros(cap)
    nr = np.zeros(cap)
    ni = np.zeros(cap)
    pot = np.zeros(cap)
    mask = np.zeros(cap)
    ar = amps.real.copy()
    ai = amps.imag.copy()
    gidx = np.arange(n)
    inner = np.empty(n, dtype=np.int64)
    halo_dst = np.empty(cap, dtype=np.int64)
    halo_src = np.empty(cap, dtype=np.int64)
    where = np.full(n, -1, dtype=np.int64)
    lo = np.empty(d, dtype=np.int64)
    width = np.empty(d, dtype=np.int64)
    full = np.empty(d, dtype=np.bool_)
    doff = np.empty(amps.shape[0], dtype=np.int64)
    n_cells = n
    n_halo = 0
    size = 0
    since = budget + 1
    n_ev = times.shape[0]
    n_cp = checkpoints.shape[0]
    ev = 0
    cp = 0
    t = 0.0
    trimmed = 0.0
    steps = 0
    fresh = True
    q0 = 0
    q1 = 0
    while cp < n_cp and checkpoints[cp] <= 0.0:
        out[cp, :] = psi
        cp += 1
    while cp < n_cp:
        if since > budget:
            if not fresh:
                for a in range(n_cells):
                    q = inner[a]
                    psi[gidx[a]] = complex(lr[q], li[q])
            fresh = False
            _box_bounds(psi, gidx, n_cells, offs, side, thr, pad, lo, width, full)
            for a in range(n_cells):
                where[gidx[a]] = -1
            old_cells = n_cells
            old = gidx[:old_cells].copy()
            for q in range(size):
                lr[q] = 0.0
                li[q] = 0.0
                tr[q] = 0.0
                ti[q] = 0.0
                nr[q] = 0.0
                ni[q] = 0.0
                pot[q] = 0.0
                mask[q] = 0.0
            n_cells, n_halo, size, ls = _layout(lo, width, full, side, strides, halo, gidx, inner, halo_dst, halo_src)
            for z in range(amps.shape[0]):
                o = 0
                for j in range(d):
                    o += disp[z, j] * ls[j]
                doff[z] = o
            for a in range(n_cells):
                g = gidx[a]
                q = inner[a]
                where[g] = q
                lr[q] = psi[g].real
                li[q] = psi[g].imag
                pot[q] = lam * spins[g]
                mask[q] = 1.0
            q0 = inner[0]
            q1 = inner[n_cells - 1] + 1
            for a in range(old_cells):
                g = old[a]
                if where[g] < 0:
                    v = psi[g]
                    trimmed += v.real * v.real + v.imag * v.imag
                    psi[g] = 0.0
            since = 0

        t_end = min(t + h_max, checkpoints[cp])
        while ev < n_ev and times[ev] <= t_end:
            s = sites[ev]
            if where[s] >= 0:
                t_end = times[ev]
                break
            spins[s] = -spins[s]
            ev += 1
        dt = t_end - t
        if dt > 0.0:
            m = n_terms(norm_bound * dt, tol)
            _taylor_local(q0, q1, doff, ar, ai, pot, mask, lr, li, dt, m, tr, ti, nr, ni, halo_dst, halo_src, n_halo)
            steps += 1
            since += m
        t = t_end
        while ev < n_ev and times[ev] <= t:
            s = sites[ev]
            spins[s] = -spins[s]
            if where[s] >= 0:
                pot[where[s]] = lam * spins[s]
            ev += 1
        if cp < n_cp and checkpoints[cp] <= t:
            for a in range(n_cells):
                q = inner[a]
                psi[gidx[a]] = complex(lr[q], li[q])
            while cp < n_cp and checkpoints[cp] <= t:
                out[cp, :] = psi
                cp += 1
    return trimmed, steps
