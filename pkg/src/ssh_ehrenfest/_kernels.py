"""Compiled inner loops for batched Ehrenfest propagation.

Every trajectory in a batch is advanced independently with the same sequence
of floating-point operations, so results do not depend on batch composition.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np


@nb.njit(cache=True)
def tridiag_eigh(diag, off, d, e, z):
    """Eigen-decompose a real symmetric tridiagonal matrix by implicit QL.

    ``diag`` (n) and ``off`` (n-1) are the input. ``d`` receives the
    eigenvalues (unsorted) and ``z`` the eigenvectors as ROWS; ``e`` is
    scratch of length n. Returns the number of QL sweeps, or -1 on failure.
    """
    n = diag.shape[0]
    for i in range(n):
        d[i] = diag[i]
        for j in range(n):
            z[i, j] = 0.0
        z[i, i] = 1.0
    for i in range(n - 1):
        e[i] = off[i]
    e[n - 1] = 0.0
    sweeps = 0
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= 1e-300 + 2.220446049250313e-16 * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            sweeps += 1
            if it > 60:
                return -1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0 else -r))
            s = 1.0
            c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                for k in range(n):
                    f = z[i + 1, k]
                    z[i + 1, k] = s * z[i, k] + c * f
                    z[i, k] = c * z[i, k] - s * f
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return sweeps


@nb.njit(cache=True)
def _bond_orders(c, g_rows, g_cols, g_vals, w, out):
    """``out[n] = 2 Re (C g C^H)[n, n+1]`` using the sparse orbital 1-RDM ``g``."""
    n = c.shape[0]
    ncol = c.shape[1]
    for i in range(n):
        for j in range(ncol):
            w[i, j] = 0.0
    for idx in range(g_rows.shape[0]):
        k = g_rows[idx]
        l = g_cols[idx]
        v = g_vals[idx]
        for i in range(n):
            w[i, l] += c[i, k] * v
    for b in range(n - 1):
        acc = 0.0
        for l in range(ncol):
            x = w[b, l] * np.conj(c[b + 1, l])
            acc += x.real
        out[b] = 2.0 * acc


@nb.njit(cache=True)
def _forces(u, c, g_rows, g_cols, g_vals, alpha, k_spring, w, bonds, f):
    n = u.shape[0]
    _bond_orders(c, g_rows, g_cols, g_vals, w, bonds)
    for i in range(n):
        f[i] = 0.0
    for b in range(n - 1):
        fb = alpha * bonds[b] + k_spring * (u[b + 1] - u[b])
        f[b + 1] -= fb
        f[b] += fb
    f[0] = 0.0
    f[n - 1] = 0.0


@nb.njit(cache=True)
def chiral_exp_apply(h, c, tau, work):
    """Apply ``exp(-i H tau)`` in place to the rows of ``c`` (``H`` in hbar = 1 units).

    ``H`` is the zero-diagonal tridiagonal matrix with bond elements ``h``. In
    even/odd site order ``H = [[0, B], [B^T, 0]]`` with ``B`` lower bidiagonal,
    so its eigenpairs follow from the half-size tridiagonal ``B^T B = Y S^2 Y^T``
    with ``X = B Y / S``. Returns False if the decomposition fails.
    """
    n = c.shape[0]
    ncol = c.shape[1]
    m = n // 2
    tdiag, toff, s2, e, yt, xt, sv, a, b = work
    for j in range(m):
        bd = h[2 * j]
        tdiag[j] = bd * bd
        if j < m - 1:
            tdiag[j] += h[2 * j + 1] ** 2
            toff[j] = h[2 * j + 1] * h[2 * j + 2]
    if tridiag_eigh(tdiag, toff, s2, e, yt) < 0:
        return False
    for k in range(m):
        if s2[k] <= 0.0:
            return False
        sv[k] = math.sqrt(s2[k])
        for i in range(m):
            x = h[2 * i] * yt[k, i]
            if i > 0:
                x += h[2 * i - 1] * yt[k, i - 1]
            xt[k, i] = x / sv[k]
    for k in range(m):
        for j in range(ncol):
            a[k, j] = 0.0
            b[k, j] = 0.0
        for i in range(m):
            xk = xt[k, i]
            yk = yt[k, i]
            for j in range(ncol):
                a[k, j] += xk * c[2 * i, j]
                b[k, j] += yk * c[2 * i + 1, j]
        cs = math.cos(sv[k] * tau)
        sn = math.sin(sv[k] * tau)
        for j in range(ncol):
            aj = a[k, j]
            bj = b[k, j]
            a[k, j] = cs * aj - 1j * sn * bj
            b[k, j] = cs * bj - 1j * sn * aj
    for i in range(n):
        for j in range(ncol):
            c[i, j] = 0.0
    for k in range(m):
        for i in range(m):
            xk = xt[k, i]
            yk = yt[k, i]
            for j in range(ncol):
                c[2 * i, j] += xk * a[k, j]
                c[2 * i + 1, j] += yk * b[k, j]
    return True


def make_work(n: int, ncol: int):
    m = n // 2
    return (
        np.zeros(m),
        np.zeros(max(m - 1, 1)),
        np.zeros(m),
        np.zeros(m),
        np.zeros((m, m)),
        np.zeros((m, m)),
        np.zeros(m),
        np.zeros((m, ncol), dtype=np.complex128),
        np.zeros((m, ncol), dtype=np.complex128),
    )


@nb.njit(cache=True)
def propagate(u, p, c, g_rows, g_cols, g_vals, t0, alpha, k_spring, mass, hbar, dt, nsteps, active, work):
    """Advance every active trajectory by ``nsteps`` velocity-Verlet steps, in place.

    Nuclei: velocity Verlet with mean-field forces. Orbitals: exact exponential
    of the Hamiltonian at the half-step geometry. Clamped end sites are held
    fixed. Returns per-trajectory status (0 ok, 1 eigensolver failure).
    """
    nt, n = u.shape
    status = np.zeros(nt, dtype=np.int64)
    w = np.zeros((n, c.shape[2]), dtype=np.complex128)
    bonds = np.zeros(n - 1)
    f = np.zeros(n)
    h = np.zeros(n - 1)
    tau = dt / hbar
    for t in range(nt):
        if not active[t]:
            continue
        ut = u[t]
        pt = p[t]
        ct = c[t]
        _forces(ut, ct, g_rows, g_cols, g_vals, alpha, k_spring, w, bonds, f)
        for step in range(nsteps):
            for i in range(1, n - 1):
                pt[i] += 0.5 * dt * f[i]
            for b in range(n - 1):
                h[b] = -t0 + alpha * ((ut[b + 1] + 0.5 * dt * pt[b + 1] / mass) - (ut[b] + 0.5 * dt * pt[b] / mass))
            for i in range(1, n - 1):
                ut[i] += dt * pt[i] / mass
            if not chiral_exp_apply(h, ct, tau, work):
                status[t] = 1
                break
            _forces(ut, ct, g_rows, g_cols, g_vals, alpha, k_spring, w, bonds, f)
            for i in range(1, n - 1):
                pt[i] += 0.5 * dt * f[i]
    return status


def sparse_rdm(g_orb: np.ndarray):
    """Split an orbital-basis 1-RDM into the coordinate lists used by :func:`propagate`."""
    rows, cols = np.nonzero(np.abs(g_orb) > 0)
    return rows.astype(np.int64), cols.astype(np.int64), np.ascontiguousarray(g_orb[rows, cols], dtype=np.complex128)
