"""Hot loops of the transport solver.

Two interchangeable backends advance the coupled (bulk, wall) system with a
theta-scheme:

* numba: banded LU without pivoting plus a jitted time loop;
* numpy: scipy SuperLU factorization plus a vectorized Python time loop.

The bulk operator ``L`` is stored as five diagonals in row form,
``lrow[d, i] = L[i, i + offs[d]]``. Unknowns are ordered ``i * ny + j`` with
``j = 0`` the reactive wall row, so the bandwidth is ``ny``. The wall
coupling is reduced to an ``nx``-sized nonlinear system through the
precomputed wall block ``W = (A^-1)[wall, wall]``. A linear (Henry) wall
needs no iteration: its implicit part is added to the wall diagonal of ``A``
and the step is a single solve.

Both backends return ``(status, step, residual, newton_iters, jac_builds)``;
``status`` is one of OK, NO_CONVERGENCE, NON_FINITE.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ._accel import njit

OK = 0
NO_CONVERGENCE = 1
NON_FINITE = 2


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------


@njit(cache=True)
def band_factor(ab, k):
    """In-place Doolittle LU of a row-form band matrix (no pivoting).

    ``ab[i, k + j - i] = A[i, j]``. The operators built here are diagonally
    dominant M-matrices, so pivoting is unnecessary.
    """
    n = ab.shape[0]
    for p in range(n):
        piv = ab[p, k]
        top = min(n, p + k + 1)
        for r in range(p + 1, top):
            lv = ab[r, k + p - r]
            if lv == 0.0:
                continue
            lv = lv / piv
            ab[r, k + p - r] = lv
            for c in range(p + 1, top):
                ab[r, k + c - r] -= lv * ab[p, k + c - p]


@njit(cache=True)
def band_solve(lu, k, b, x):
    n = lu.shape[0]
    for i in range(n):
        acc = b[i]
        for j in range(max(0, i - k), i):
            acc -= lu[i, k + j - i] * x[j]
        x[i] = acc
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for j in range(i + 1, min(n, i + k + 1)):
            acc -= lu[i, k + j - i] * x[j]
        x[i] = acc / lu[i, k]


@njit(cache=True)
def wall_block_nb(lu, k, nx, ny):
    n = lu.shape[0]
    w = np.empty((nx, nx))
    e = np.zeros(n)
    col = np.empty(n)
    for q in range(nx):
        e[q * ny] = 1.0
        band_solve(lu, k, e, col)
        e[q * ny] = 0.0
        for p in range(nx):
            w[p, q] = col[p * ny]
    return w


@njit(cache=True)
def _isotherm_eliminated(x, m, da_a, da_d, inv_m, h, f, df):
    # wall rate with the surface update eliminated: h = theta * dt
    for q in range(x.size):
        free = 1.0 - m[q] * inv_m
        num = da_a * x[q] * free - da_d * m[q]
        den = 1.0 + h * (da_a * x[q] * inv_m + da_d)
        f[q] = num / den
        df[q] = (da_a * free * den - h * da_a * inv_m * num) / (den * den)


@njit(cache=True)
def advance_nb(c, m, nsteps, dt, theta, lu, k, lrow, offs, bsrc, w, nx, ny,
               da_a, da_d, inv_m, sink, tol, maxit, curve, hist_c, hist_m, keep):
    n = c.size
    rhs = np.empty(n)
    cp = np.empty(n)
    r = np.empty(nx)
    x = np.empty(nx)
    f = np.empty(nx)
    df = np.empty(nx)
    g = np.empty(nx)
    jinv = np.zeros((nx, nx))
    have_jac = False
    h = theta * dt
    coupled = da_a != 0.0 or da_d != 0.0
    total_iters = 0
    jac_builds = 0
    res = 0.0
    for step in range(nsteps):
        for i in range(n):
            acc = 0.0
            for d in range(5):
                j = i + offs[d]
                if j >= 0 and j < n:
                    acc += lrow[d, i] * c[j]
            rhs[i] = c[i] / dt - (1.0 - theta) * acc + bsrc[i]
        band_solve(lu, k, rhs, cp)
        for q in range(nx):
            r[q] = theta * cp[q * ny] + (1.0 - theta) * c[q * ny]
            x[q] = c[q * ny]
        res = 0.0
        if coupled:
            res_prev = np.inf
            it = 0
            while True:
                _isotherm_eliminated(x, m, da_a, da_d, inv_m, h, f, df)
                res = 0.0
                for p in range(nx):
                    acc = 0.0
                    for q in range(nx):
                        acc += w[p, q] * f[q]
                    g[p] = x[p] - r[p] + theta * sink * acc
                    a = abs(g[p])
                    if not (a <= res or a > res):
                        return NON_FINITE, step, np.nan, total_iters, jac_builds
                    if a > res:
                        res = a
                if res <= tol:
                    break
                if it >= maxit:
                    return NO_CONVERGENCE, step, res, total_iters, jac_builds
                if (not have_jac) or res > 0.25 * res_prev:
                    jac = np.empty((nx, nx))
                    for p in range(nx):
                        for q in range(nx):
                            jac[p, q] = theta * sink * w[p, q] * df[q]
                        jac[p, p] += 1.0
                    jinv = np.linalg.inv(jac)
                    have_jac = True
                    jac_builds += 1
                for p in range(nx):
                    acc = 0.0
                    for q in range(nx):
                        acc += jinv[p, q] * g[q]
                    x[p] -= acc
                res_prev = res
                it += 1
                total_iters += 1
            for q in range(nx):
                rhs[q * ny] -= sink * f[q]
            band_solve(lu, k, rhs, c)
            for q in range(nx):
                m[q] += dt * f[q]
        else:
            for i in range(n):
                c[i] = cp[i]
        out = 0.0
        for j in range(ny):
            v = c[(nx - 1) * ny + j]
            if not (v <= 0.0 or v > 0.0):
                return NON_FINITE, step, np.nan, total_iters, jac_builds
            out += v
        curve[step] = out / ny
        if keep:
            hist_c[step, :] = c
            hist_m[step, :] = m
    return OK, nsteps, res, total_iters, jac_builds


@njit(cache=True)
def advance_linear_nb(c, m, nsteps, dt, theta, lu, k, lrow, offs, bsrc, nx, ny,
                      da_a, da_d, sink, curve, hist_c, hist_m, keep):
    # Henry wall: the implicit part of the sink is already folded into ``lu``
    n = c.size
    rhs = np.empty(n)
    cw = np.empty(nx)
    den = 1.0 + theta * dt * da_d
    for step in range(nsteps):
        for i in range(n):
            acc = 0.0
            for d in range(5):
                j = i + offs[d]
                if j >= 0 and j < n:
                    acc += lrow[d, i] * c[j]
            rhs[i] = c[i] / dt - (1.0 - theta) * acc + bsrc[i]
        for q in range(nx):
            cw[q] = c[q * ny]
            rhs[q * ny] -= sink * (da_a * (1.0 - theta) * cw[q] - da_d * m[q]) / den
        band_solve(lu, k, rhs, c)
        for q in range(nx):
            x = theta * c[q * ny] + (1.0 - theta) * cw[q]
            m[q] += dt * (da_a * x - da_d * m[q]) / den
        out = 0.0
        for j in range(ny):
            v = c[(nx - 1) * ny + j]
            if not (v <= 0.0 or v > 0.0):
                return NON_FINITE, step, np.nan, 0, 0
            out += v
        curve[step] = out / ny
        if keep:
            hist_c[step, :] = c
            hist_m[step, :] = m
    return OK, nsteps, 0.0, 0, 0


# ---------------------------------------------------------------------------
# numpy / scipy backend
# ---------------------------------------------------------------------------


def lrow_to_csr(lrow, offs):
    n = lrow.shape[1]
    mats = []
    for d, off in enumerate(offs):
        off = int(off)
        if off >= 0:
            vals = lrow[d, : n - off]
        else:
            vals = lrow[d, -off:]
        mats.append(sp.diags(vals, off, shape=(n, n)))
    return sp.csr_matrix(sum(mats[1:], mats[0]))


def factor_np(lmat, dt, theta, wall_diag=None):
    n = lmat.shape[0]
    a = sp.identity(n, format="csc") / dt + theta * lmat.tocsc()
    if wall_diag is not None:
        a = a + sp.diags(wall_diag)
    return splu(sp.csc_matrix(a))


def wall_block_np(solver, nx, ny, n, chunk=64):
    w = np.empty((nx, nx))
    rows = np.arange(nx) * ny
    for start in range(0, nx, chunk):
        stop = min(nx, start + chunk)
        e = np.zeros((n, stop - start))
        e[rows[start:stop], np.arange(stop - start)] = 1.0
        w[:, start:stop] = solver.solve(e)[rows]
    return w


def _isotherm_eliminated_np(x, m, da_a, da_d, inv_m, h):
    free = 1.0 - m * inv_m
    num = da_a * x * free - da_d * m
    den = 1.0 + h * (da_a * x * inv_m + da_d)
    return num / den, (da_a * free * den - h * da_a * inv_m * num) / (den * den)


def advance_np(c, m, nsteps, dt, theta, solver, lmat, bsrc, w, nx, ny,
               da_a, da_d, inv_m, sink, tol, maxit, curve, hist_c, hist_m, keep):
    wall = np.arange(nx) * ny
    outlet = slice((nx - 1) * ny, nx * ny)
    h = theta * dt
    coupled = da_a != 0.0 or da_d != 0.0
    jinv = None
    total_iters = 0
    jac_builds = 0
    res = 0.0
    eye = np.eye(nx)
    for step in range(nsteps):
        rhs = c / dt - (1.0 - theta) * (lmat @ c) + bsrc
        cp = solver.solve(rhs)
        res = 0.0
        if coupled:
            r = theta * cp[wall] + (1.0 - theta) * c[wall]
            x = c[wall].copy()
            res_prev = np.inf
            it = 0
            while True:
                f, df = _isotherm_eliminated_np(x, m, da_a, da_d, inv_m, h)
                g = x - r + theta * sink * (w @ f)
                res = float(np.max(np.abs(g)))
                if not np.isfinite(res):
                    return NON_FINITE, step, np.nan, total_iters, jac_builds
                if res <= tol:
                    break
                if it >= maxit:
                    return NO_CONVERGENCE, step, res, total_iters, jac_builds
                if jinv is None or res > 0.25 * res_prev:
                    jinv = np.linalg.inv(eye + theta * sink * w * df[None, :])
                    jac_builds += 1
                x = x - jinv @ g
                res_prev = res
                it += 1
                total_iters += 1
            rhs[wall] -= sink * f
            c[:] = solver.solve(rhs)
            m += dt * f
        else:
            c[:] = cp
        if not np.all(np.isfinite(c[outlet])):
            return NON_FINITE, step, np.nan, total_iters, jac_builds
        curve[step] = c[outlet].mean()
        if keep:
            hist_c[step, :] = c
            hist_m[step, :] = m
    return OK, nsteps, res, total_iters, jac_builds


def advance_linear_np(c, m, nsteps, dt, theta, solver, lmat, bsrc, nx, ny,
                      da_a, da_d, sink, curve, hist_c, hist_m, keep):
    wall = np.arange(nx) * ny
    outlet = slice((nx - 1) * ny, nx * ny)
    den = 1.0 + theta * dt * da_d
    for step in range(nsteps):
        rhs = c / dt - (1.0 - theta) * (lmat @ c) + bsrc
        cw = c[wall].copy()
        rhs[wall] -= sink * (da_a * (1.0 - theta) * cw - da_d * m) / den
        c[:] = solver.solve(rhs)
        m += dt * (da_a * (theta * c[wall] + (1.0 - theta) * cw) - da_d * m) / den
        if not np.all(np.isfinite(c[outlet])):
            return NON_FINITE, step, np.nan, 0, 0
        curve[step] = c[outlet].mean()
        if keep:
            hist_c[step, :] = c
            hist_m[step, :] = m
    return OK, nsteps, 0.0, 0, 0
