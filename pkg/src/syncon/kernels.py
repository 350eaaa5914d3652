"""Hot numeric kernels.

Everything here is numba-compatible; see :mod:`syncon._jit` for the switch
that turns compilation off.
"""

from __future__ import annotations

import numpy as np

from ._jit import njit

# status codes returned by dual_active_set
OK = 0
INFEASIBLE = 1
MAX_ITER = 2


@njit
def _drop(active, u, nact, k):
    for j in range(k, nact - 1):
        active[j] = active[j + 1]
        u[j] = u[j + 1]
    return nact - 1


@njit
def dual_active_set(H, c, C, d, meq, feas_tol, max_iter):
    """Goldfarb-Idnani dual active-set method for a strictly convex QP.

    Minimizes ``0.5 x'Hx - c'x`` subject to ``C[:meq] x = d[:meq]`` and
    ``C[meq:] x >= d[meq:]``.  ``H`` must be positive definite.

    Returns ``(x, multipliers, active_mask, iterations, status)``.  The
    multipliers satisfy ``Hx - c = sum_i multipliers[i] * C[i]`` at a solution.
    """
    n = H.shape[0]
    m = C.shape[0]
    Hinv = np.linalg.inv(H)
    Hinv = 0.5 * (Hinv + Hinv.T)
    x = Hinv @ c

    active = np.zeros(m, dtype=np.int64)
    u = np.zeros(m)
    sign = np.ones(m)
    nact = 0
    iters = 0
    status = OK

    p = 0
    while True:
        # choose the next constraint to add: equalities first, then the most
        # violated inequality
        if p < meq:
            s0 = C[p] @ x - d[p]
            if s0 > 0.0:
                sign[p] = -1.0
        else:
            p = -1
            worst = -feas_tol
            for i in range(meq, m):
                is_active = False
                for j in range(nact):
                    if active[j] == i:
                        is_active = True
                        break
                if is_active:
                    continue
                s = C[i] @ x - d[i]
                scale = 1.0 + abs(d[i])
                if s / scale < worst:
                    worst = s / scale
                    p = i
            if p < 0:
                break

        npv = sign[p] * C[p]
        bp = sign[p] * d[p]
        base = npv @ (Hinv @ npv)
        uplus = 0.0
        added = False
        while not added:
            iters += 1
            if iters > max_iter:
                status = MAX_ITER
                break
            if nact > 0:
                N = np.empty((n, nact))
                for j in range(nact):
                    N[:, j] = sign[active[j]] * C[active[j]]
                HN = Hinv @ N
                M = N.T @ HN
                r = np.linalg.solve(M, HN.T @ npv)
                z = Hinv @ npv - HN @ r
            else:
                r = np.zeros(0)
                z = Hinv @ npv

            t1 = np.inf
            k = -1
            for j in range(nact):
                if active[j] >= meq and r[j] > 0.0:
                    ratio = u[j] / r[j]
                    if ratio < t1:
                        t1 = ratio
                        k = j

            sp = npv @ x - bp
            zn = z @ npv
            if zn > 1e-13 * base:
                t2 = -sp / zn
                if t2 < 0.0:
                    t2 = 0.0
            else:
                t2 = np.inf

            t = min(t1, t2)
            if t == np.inf:
                status = INFEASIBLE
                break
            if t2 == np.inf:
                for j in range(nact):
                    u[j] -= t * r[j]
                uplus += t
                nact = _drop(active, u, nact, k)
                continue

            x = x + t * z
            for j in range(nact):
                u[j] -= t * r[j]
            uplus += t
            if t2 <= t1:
                active[nact] = p
                u[nact] = uplus
                nact += 1
                added = True
            else:
                nact = _drop(active, u, nact, k)

        if status != OK:
            break
        if p < meq:
            p += 1

    mult = np.zeros(m)
    mask = np.zeros(m, dtype=np.bool_)
    for j in range(nact):
        mult[active[j]] = sign[active[j]] * u[j]
        mask[active[j]] = True
    return x, mult, mask, iters, status


@njit
def project_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex."""
    n = v.shape[0]
    s = np.sort(v)[::-1]
    css = 0.0
    theta = 0.0
    for i in range(n):
        css += s[i]
        t = (css - 1.0) / (i + 1)
        if s[i] - t > 0.0:
            theta = t
    out = v - theta
    for i in range(n):
        if out[i] < 0.0:
            out[i] = 0.0
    return out


@njit
def projected_gradient(H, c, nonneg, sum_to_one, x0, tol, max_iter):
    """Accelerated projected gradient for ``0.5 x'Hx - c'x``.

    Fallback for the active-set method; handles only the box/simplex
    constraint families.
    """
    lmax = np.max(np.linalg.eigvalsh(H))
    step = 1.0 / max(lmax, 1e-300)
    x = x0.copy()
    yk = x0.copy()
    tk = 1.0
    for it in range(max_iter):
        g = H @ yk - c
        z = yk - step * g
        if nonneg and sum_to_one:
            xn = project_simplex(z)
        elif nonneg:
            xn = np.maximum(z, 0.0)
        elif sum_to_one:
            xn = z - (np.sum(z) - 1.0) / z.shape[0]
        else:
            xn = z
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        yk = xn + ((tk - 1.0) / tn) * (xn - x)
        if np.max(np.abs(xn - x)) < tol:
            return xn, it + 1
        x = xn
        tk = tn
    return x, max_iter


@njit
def ar1_paths(innov, rho):
    """Stationary Gaussian AR(1) paths with unit marginal variance.

    ``innov`` holds standard normal draws, shape (paths, T); the first column
    seeds the stationary initial value.
    """
    n, T = innov.shape
    out = np.empty((n, T))
    scale = np.sqrt(1.0 - rho * rho)
    for i in range(n):
        out[i, 0] = innov[i, 0]
        for t in range(1, T):
            out[i, t] = rho * out[i, t - 1] + scale * innov[i, t]
    return out


@njit
def random_walk_paths(steps):
    """Cumulative sums along time; the walk starts at 0 before the first step."""
    n, T = steps.shape
    out = np.empty((n, T))
    for i in range(n):
        acc = 0.0
        for t in range(T):
            acc += steps[i, t]
            out[i, t] = acc
    return out


@njit
def second_moments(X, y):
    """Gram ``X X'/T``, cross moment ``X y/T``, ``y'y/T`` and means for rows of X."""
    J, T = X.shape
    G = np.zeros((J, J))
    b = np.zeros(J)
    m = np.zeros(J)
    yy = 0.0
    my = 0.0
    for t in range(T):
        yt = y[t]
        yy += yt * yt
        my += yt
        for i in range(J):
            xi = X[i, t]
            b[i] += xi * yt
            m[i] += xi
            for k in range(i + 1):
                G[i, k] += xi * X[k, t]
    for i in range(J):
        for k in range(i):
            G[k, i] = G[i, k]
    return G / T, b / T, yy / T, m / T, my / T


@njit
def ife_em(y, t0, r, start, max_iter, tol):
    """Least-squares interactive fixed effects with the treated post cells missing.

    ``y`` is (units x T) with the treated unit in row 0; its entries from
    column ``t0`` on are unobserved and start at ``start``.  Each sweep removes
    unit means, takes the rank-``r`` SVD approximation and re-imputes the
    missing cells.  Returns ``(fitted_row0, iterations, change)``.
    """
    N, T = y.shape
    Y = y.copy()
    for t in range(t0, T):
        Y[0, t] = start[t - t0]
    fit0 = np.empty(T)
    change = np.inf
    it = 0
    while it < max_iter:
        it += 1
        a = np.empty(N)
        R = np.empty((N, T))
        for i in range(N):
            a[i] = np.mean(Y[i])
            R[i] = Y[i] - a[i]
        U, S, Vt = np.linalg.svd(R, full_matrices=False)
        for t in range(T):
            acc = a[0]
            for k in range(r):
                acc += U[0, k] * S[k] * Vt[k, t]
            fit0[t] = acc
        change = 0.0
        for t in range(t0, T):
            d = abs(fit0[t] - Y[0, t])
            if d > change:
                change = d
            Y[0, t] = fit0[t]
        if change < tol:
            break
    return fit0, it, change
