"""Inner loops.

Kernels that call the system right-hand sides are generated twice from the
same source: compiled with numba (system built from numba dispatchers) and
as plain Python (anything else).  The remaining kernels only touch arrays and
are always compiled.
"""

from __future__ import annotations

import functools
import math

import numba
import numpy as np

THETA1 = 0.5 - 0.5 / math.sqrt(3.0)
THETA2 = 0.5 + 0.5 / math.sqrt(3.0)


def _lu_solve(A, B):
    """Solve ``A X = B`` for small dense ``A`` (partial pivoting); ``B`` is 2-d."""
    n = A.shape[0]
    r = B.shape[1]
    a = A.copy()
    b = B.copy()
    for i in range(n):
        p = i
        amax = abs(a[i, i])
        for j in range(i + 1, n):
            if abs(a[j, i]) > amax:
                amax = abs(a[j, i])
                p = j
        if p != i:
            for l in range(n):
                tmp = a[i, l]
                a[i, l] = a[p, l]
                a[p, l] = tmp
            for l in range(r):
                tmp = b[i, l]
                b[i, l] = b[p, l]
                b[p, l] = tmp
        piv = a[i, i]
        for j in range(i + 1, n):
            fac = a[j, i] / piv
            if fac != 0.0:
                for l in range(i, n):
                    a[j, l] -= fac * a[i, l]
                for l in range(r):
                    b[j, l] -= fac * b[i, l]
    x = np.empty((n, r))
    for i in range(n - 1, -1, -1):
        for l in range(r):
            s = b[i, l]
            for j in range(i + 1, n):
                s -= a[i, j] * x[j, l]
            x[i, l] = s / a[i, i]
    return x


def _lu_factor(a, piv):
    """In-place LU with partial pivoting; row swaps recorded in ``piv``."""
    n = a.shape[0]
    for i in range(n):
        p = i
        amax = abs(a[i, i])
        for j in range(i + 1, n):
            if abs(a[j, i]) > amax:
                amax = abs(a[j, i])
                p = j
        piv[i] = p
        if p != i:
            for l in range(n):
                tmp = a[i, l]
                a[i, l] = a[p, l]
                a[p, l] = tmp
        for j in range(i + 1, n):
            a[j, i] /= a[i, i]
            fac = a[j, i]
            if fac != 0.0:
                for l in range(i + 1, n):
                    a[j, l] -= fac * a[i, l]


def _lu_apply(a, piv, b):
    """Overwrite ``b`` with the solution of the system factored by :func:`_lu_factor`."""
    n = a.shape[0]
    for i in range(n):
        p = piv[i]
        if p != i:
            tmp = b[i]
            b[i] = b[p]
            b[p] = tmp
        for j in range(i):
            b[i] -= a[i, j] * b[j]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            b[i] -= a[i, j] * b[j]
        b[i] /= a[i, i]


def _build(jit: bool):
    dec = numba.njit if jit else (lambda fn: fn)
    lu_solve = dec(_lu_solve)
    lu_factor = dec(_lu_factor)
    lu_apply = dec(_lu_apply)

    @dec
    def micro_step(g, gu, Y, t0, k, u_prev, tol, maxit):
        d = u_prev.shape[0]
        t1 = t0 + THETA1 * k
        t2 = t0 + THETA2 * k
        v = u_prev + k * g(t0 + 0.5 * k, Y, u_prev)
        for it in range(maxit):
            w1 = (1.0 - THETA1) * u_prev + THETA1 * v
            w2 = (1.0 - THETA2) * u_prev + THETA2 * v
            res = v - u_prev - 0.5 * k * (g(t1, Y, w1) + g(t2, Y, w2))
            rn = 0.0
            vn = 0.0
            for i in range(d):
                rn = max(rn, abs(res[i]))
                vn = max(vn, abs(v[i]))
            if rn <= tol * (1.0 + vn):
                return v, it, rn
            jac = np.eye(d) - 0.5 * k * (THETA1 * gu(t1, Y, w1) + THETA2 * gu(t2, Y, w2))
            delta = lu_solve(jac, res.reshape(d, 1))
            for i in range(d):
                v[i] -= delta[i, 0]
        return v, maxit, rn

    @dec
    def sweep(g, gu, Y, M, u0, tol, maxit):
        d = u0.shape[0]
        k = 1.0 / M
        U = np.empty((M + 1, d))
        U[0] = u0
        worst = 0.0
        for m in range(1, M + 1):
            v, it, rn = micro_step(g, gu, Y, (m - 1) * k, k, U[m - 1], tol, maxit)
            if it >= maxit:
                worst = max(worst, rn)
            U[m] = v
        return U, worst

    @dec
    def cycle(g, gu, Y, M, u0, tol_p, max_cycles, tol, maxit):
        start = u0.copy()
        history = np.empty(max_cycles)
        defect = np.inf
        U = np.empty((M + 1, u0.shape[0]))
        worst = 0.0
        n = 0
        while n < max_cycles:
            U, w = sweep(g, gu, Y, M, start, tol, maxit)
            worst = max(worst, w)
            defect = np.sqrt(np.sum((U[M] - U[0]) ** 2))
            history[n] = defect
            n += 1
            if defect < tol_p:
                break
            start = U[M].copy()
        return U, defect, n, history[:n], worst

    @dec
    def gauss_eval(f, fy, fu, g, gy, gu, Y, U):
        M = U.shape[0] - 1
        d = U.shape[1]
        c = Y.shape[0]
        k = 1.0 / M
        fq = np.empty((M, 2, c))
        fyq = np.empty((M, 2, c, c))
        fuq = np.empty((M, 2, c, d))
        gq = np.empty((M, 2, d))
        gyq = np.empty((M, 2, d, c))
        guq = np.empty((M, 2, d, d))
        for m in range(M):
            for q in range(2):
                th = THETA1 if q == 0 else THETA2
                t = (m + th) * k
                w = (1.0 - th) * U[m] + th * U[m + 1]
                fq[m, q] = f(Y, w)
                fyq[m, q] = fy(Y, w)
                fuq[m, q] = fu(Y, w)
                gq[m, q] = g(t, Y, w)
                gyq[m, q] = gy(t, Y, w)
                guq[m, q] = gu(t, Y, w)
        return fq, fyq, fuq, gq, gyq, guq

    @dec
    def resolved(f, fy, fu, g, gy, gu, eps, y0, u0, P, nsteps, tol, maxit):
        """Trapezoidal rule for the coupled system, step ``1/P``, ``nsteps`` steps.

        Chord Newton per step (Jacobian at the predictor), increments
        predicted by linear extrapolation of the previous two.  The slow
        component is accumulated with compensated summation.
        Returns ``(y, u, max|u|, worst Newton correction)``.
        """
        c = y0.shape[0]
        d = u0.shape[0]
        n = c + d
        h = 1.0 / P
        hh = 0.5 * h
        y = y0.copy()
        ycomp = np.zeros(c)
        u = u0.copy()
        y1 = np.empty(c)
        u1 = np.empty(d)
        z = np.empty(n)
        z_old = np.empty(n)
        z_old2 = np.empty(n)
        F0 = np.empty(n)
        jac = np.empty((n, n))
        piv = np.empty(n, dtype=np.int64)
        res = np.empty(n)
        a = eps * f(y, u)
        b = g(0.0, y, u)
        for i in range(c):
            F0[i] = a[i]
        for i in range(d):
            F0[c + i] = b[i]
        umax = 0.0
        worst = 0.0
        for step in range(nsteps):
            t1 = ((step + 1) % P) * h
            if step >= 2:
                for i in range(n):
                    z[i] = 2.0 * z_old[i] - z_old2[i]
            else:
                for i in range(n):
                    z[i] = h * F0[i]
            for i in range(c):
                y1[i] = y[i] + z[i]
            for i in range(d):
                u1[i] = u[i] + z[c + i]
            A = fy(y1, u1)
            B = fu(y1, u1)
            C = gy(t1, y1, u1)
            D = gu(t1, y1, u1)
            for i in range(c):
                for j in range(c):
                    jac[i, j] = -hh * eps * A[i, j]
                for j in range(d):
                    jac[i, c + j] = -hh * eps * B[i, j]
            for i in range(d):
                for j in range(c):
                    jac[c + i, j] = -hh * C[i, j]
                for j in range(d):
                    jac[c + i, c + j] = -hh * D[i, j]
            for i in range(n):
                jac[i, i] += 1.0
            lu_factor(jac, piv)
            cn = 0.0
            for it in range(maxit):
                a = f(y1, u1)
                b = g(t1, y1, u1)
                for i in range(c):
                    res[i] = z[i] - hh * (F0[i] + eps * a[i])
                for i in range(d):
                    res[c + i] = z[c + i] - hh * (F0[c + i] + b[i])
                lu_apply(jac, piv, res)
                cn = 0.0
                for i in range(n):
                    z[i] -= res[i]
                    cn = max(cn, abs(res[i]))
                for i in range(c):
                    y1[i] = y[i] + z[i]
                for i in range(d):
                    u1[i] = u[i] + z[c + i]
                if cn <= tol:
                    break
            worst = max(worst, cn)
            for i in range(c):
                # Kahan summation of the slow increments
                inc = z[i] - ycomp[i]
                tot = y[i] + inc
                ycomp[i] = (tot - y[i]) - inc
                y[i] = tot
            for i in range(d):
                u[i] = u1[i]
                umax = max(umax, abs(u[i]))
            a = f(y, u)
            b = g(t1, y, u)
            for i in range(c):
                F0[i] = eps * a[i]
            for i in range(d):
                F0[c + i] = b[i]
            for i in range(n):
                z_old2[i] = z_old[i]
                z_old[i] = z[i]
        return y, u, umax, worst

    return {
        "micro_step": micro_step,
        "sweep": sweep,
        "cycle": cycle,
        "gauss_eval": gauss_eval,
        "resolved": resolved,
    }


@functools.lru_cache(maxsize=2)
def family(jit: bool) -> dict:
    return _build(jit)


def kernels_for(system) -> dict:
    return family(system.jitted)


# ----------------------------------------------------------------------
# array-only kernels

_lu = numba.njit(cache=True)(_lu_solve)


@numba.njit(cache=True)
def tangent_sweep(guq, gyq, k):
    """Periodic solution of the linearised micro step by shooting.

    Returns nodal sensitivities ``(M+1, d, c)`` and the monodromy matrix.
    """
    M = guq.shape[0]
    d = guq.shape[2]
    c = gyq.shape[3]
    eye = np.eye(d)
    Am = np.empty((M, d, d))
    Bm = np.empty((M, d, d))
    Cm = np.empty((M, d, c))
    for m in range(M):
        Am[m] = eye - 0.5 * k * (THETA1 * guq[m, 0] + THETA2 * guq[m, 1])
        Bm[m] = eye + 0.5 * k * ((1.0 - THETA1) * guq[m, 0] + (1.0 - THETA2) * guq[m, 1])
        Cm[m] = 0.5 * k * (gyq[m, 0] + gyq[m, 1])
    phi = eye.copy()
    part = np.zeros((d, c))
    for m in range(M):
        phi = _lu(Am[m], Bm[m] @ phi)
        part = _lu(Am[m], Bm[m] @ part + Cm[m])
    D = np.empty((M + 1, d, c))
    D[0] = _lu(eye - phi, part)
    for m in range(M):
        D[m + 1] = _lu(Am[m], Bm[m] @ D[m] + Cm[m])
    return D, phi


@numba.njit(cache=True)
def adjoint_sweep(guq, fuq, k):
    """Periodic dG(0) adjoint of the micro step, backward shooting.

    ``z[m]`` (shape ``(d, c)``) is the value on micro interval ``m+1``; column
    ``i`` belongs to slow component ``i`` of the transfer functional.
    """
    M = guq.shape[0]
    d = guq.shape[2]
    c = fuq.shape[2]
    eye = np.eye(d)
    AT = np.empty((M, d, d))
    BT = np.empty((M, d, d))
    for m in range(M):
        AT[m] = (eye - 0.5 * k * (THETA1 * guq[m, 0] + THETA2 * guq[m, 1])).T.copy()
        BT[m] = (eye + 0.5 * k * ((1.0 - THETA1) * guq[m, 0] + (1.0 - THETA2) * guq[m, 1])).T.copy()
    R = np.empty((M, d, c))
    for m in range(M):
        nxt = (m + 1) % M
        R[m] = 0.5 * k * (THETA1 * fuq[m, 0] + THETA2 * fuq[m, 1]).T + 0.5 * k * (
            (1.0 - THETA1) * fuq[nxt, 0] + (1.0 - THETA2) * fuq[nxt, 1]
        ).T
    psi = eye.copy()
    part = np.zeros((d, c))
    for m in range(M - 1, -1, -1):
        nxt = (m + 1) % M
        psi = _lu(AT[m], BT[nxt] @ psi)
        part = _lu(AT[m], BT[nxt] @ part + R[m])
    z = np.empty((M, d, c))
    z0 = _lu(eye - psi, part)
    znext = z0
    for m in range(M - 1, -1, -1):
        nxt = (m + 1) % M
        z[m] = _lu(AT[m], BT[nxt] @ znext + R[m])
        znext = z[m]
    return z, psi
