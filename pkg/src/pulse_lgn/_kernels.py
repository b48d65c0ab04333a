"""Compiled optimizer loops shared by the LGN fitter and the curve-fit baseline.

Both loops run the same accept/reject Adam iteration; they differ only in the
parameterization they step. The numpy functions in :mod:`pulse_lgn.lgn` remain
the reference for the model, loss and gradient and are cross-checked against
these kernels in the test suite.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def softplus_nb(x):
    return max(x, 0.0) + np.log1p(np.exp(-abs(x)))


@njit(cache=True)
def _solve_small(G, b):
    """Gaussian elimination with partial pivoting; ok=False when singular."""
    k = b.size
    A = G.copy()
    x = b.copy()
    for c in range(k):
        p = c
        best = abs(A[c, c])
        for r in range(c + 1, k):
            if abs(A[r, c]) > best:
                best = abs(A[r, c])
                p = r
        if best <= 1e-14:
            return x, False
        if p != c:
            for j in range(k):
                tmp = A[c, j]
                A[c, j] = A[p, j]
                A[p, j] = tmp
            tmp = x[c]
            x[c] = x[p]
            x[p] = tmp
        for r in range(c + 1, k):
            f = A[r, c] / A[c, c]
            for j in range(c, k):
                A[r, j] -= f * A[c, j]
            x[r] -= f * x[c]
    for c in range(k - 1, -1, -1):
        s = x[c]
        for j in range(c + 1, k):
            s -= A[c, j] * x[j]
        x[c] = s / A[c, c]
    return x, True


@njit(cache=True)
def project_nb(E, y):
    """Least-squares ``[v0..., v_inf]`` on the basis ``[E, 1]``.

    Normal equations with unit-norm column scaling; lstsq when singular.
    """
    N, n = E.shape
    k = n + 1
    G = np.zeros((k, k))
    b = np.zeros(k)
    for i in range(N):
        yi = y[i]
        for p in range(n):
            ep = E[i, p]
            b[p] += ep * yi
            for q in range(p, n):
                G[p, q] += ep * E[i, q]
            G[p, n] += ep
        b[n] += yi
    G[n, n] = N
    norms = np.empty(k)
    for p in range(k):
        norms[p] = np.sqrt(G[p, p]) if G[p, p] > 0 else 1.0
    for p in range(k):
        b[p] /= norms[p]
        for q in range(p, k):
            G[p, q] /= norms[p] * norms[q]
            G[q, p] = G[p, q]
    x, ok = _solve_small(G, b)
    if ok:
        for j in range(k):
            x[j] /= norms[j]
            if not np.isfinite(x[j]):
                ok = False
    if not ok:
        B = np.empty((N, k))
        B[:, :n] = E
        B[:, n] = 1.0
        x = np.linalg.lstsq(B, y)[0]
    return x


@njit(cache=True)
def lgn_eval(theta, t, y):
    N = t.size
    n = theta.size
    rates = np.empty(n)
    for j in range(n):
        rates[j] = softplus_nb(theta[j])
    E = np.empty((N, n))
    for i in range(N):
        for j in range(n):
            E[i, j] = np.exp(-rates[j] * t[i])
    coef = project_nb(E, y)
    L = 0.0
    g = np.zeros(n)
    for i in range(N):
        r = coef[n] - y[i]
        for j in range(n):
            r += coef[j] * E[i, j]
        L += r * r
        rt = r * t[i]
        for j in range(n):
            g[j] += rt * E[i, j]
    for j in range(n):
        # logistic(theta) is d softplus / d theta
        g[j] *= -2.0 * coef[j] / (1.0 + np.exp(-theta[j]))
    return L, g, coef


@njit(cache=True)
def lgn_descent(t, y, theta0, max_it, rel_tol, patience, lr0, growth, shrink,
                lr_max, b1, b2, exact):
    n = theta0.size
    theta = theta0.copy()
    L, g, coef = lgn_eval(theta, t, y)
    hist = np.empty(max_it + 1)
    hist[0] = L
    nh = 1
    trail = np.empty(max_it + 1)
    trail[0] = L
    m = np.zeros(n)
    s = np.zeros(n)
    lr = lr0
    tiny = 2.2250738585072014e-308
    converged = L <= exact
    it = 0
    while (not converged) and it < max_it:
        it += 1
        c1 = 1.0 - b1**it
        c2 = 1.0 - b2**it
        cand = np.empty(n)
        for j in range(n):
            m[j] = b1 * m[j] + (1.0 - b1) * g[j]
            s[j] = b2 * s[j] + (1.0 - b2) * g[j] * g[j]
            cand[j] = theta[j] - lr * (m[j] / c1) / (np.sqrt(s[j] / c2) + tiny)
        Lc, gc, cc = lgn_eval(cand, t, y)
        if np.isfinite(Lc) and Lc <= L:
            theta = cand
            L = Lc
            g = gc
            coef = cc
            hist[nh] = L
            nh += 1
            lr = min(lr * growth, lr_max)
        else:
            lr *= shrink
        trail[it] = L
        if L <= exact:
            converged = True
        elif it >= patience:
            ref = trail[it - patience]
            if ref - L <= rel_tol * ref:
                converged = True
    return theta, coef, L, it, converged, hist[:nh].copy()


@njit(cache=True)
def raw_eval(x, n, t, y):
    N = t.size
    L = 0.0
    g = np.zeros(2 * n + 1)
    E = np.empty(n)
    for i in range(N):
        r = x[2 * n] - y[i]
        for j in range(n):
            E[j] = np.exp(-t[i] / x[j])
            r += x[n + j] * E[j]
        L += r * r
        g[2 * n] += 2.0 * r
        for j in range(n):
            g[n + j] += 2.0 * r * E[j]
            g[j] += 2.0 * r * t[i] * E[j]
    for j in range(n):
        # d/dtau of a exp(-t/tau) = a t exp(-t/tau) / tau^2
        g[j] *= x[n + j] / (x[j] * x[j])
    return L, g


@njit(cache=True)
def raw_descent(t, y, x0, scale, max_it, rel_tol, patience, lr0, growth, shrink,
                lr_max, b1, b2, exact):
    n = (x0.size - 1) // 2
    k = x0.size
    x = x0.copy()
    L, g = raw_eval(x, n, t, y)
    if not np.isfinite(L):
        return x, L, 0, False
    trail = np.empty(max_it + 1)
    trail[0] = L
    m = np.zeros(k)
    s = np.zeros(k)
    lr = lr0
    tiny = 2.2250738585072014e-308
    converged = L <= exact
    it = 0
    while (not converged) and it < max_it:
        it += 1
        c1 = 1.0 - b1**it
        c2 = 1.0 - b2**it
        cand = np.empty(k)
        for j in range(k):
            m[j] = b1 * m[j] + (1.0 - b1) * g[j]
            s[j] = b2 * s[j] + (1.0 - b2) * g[j] * g[j]
            cand[j] = x[j] - lr * scale[j] * (m[j] / c1) / (np.sqrt(s[j] / c2) + tiny)
        Lc, gc = raw_eval(cand, n, t, y)
        finite = np.isfinite(Lc)
        for j in range(k):
            if not np.isfinite(gc[j]):
                finite = False
        if finite and Lc <= L:
            x = cand
            L = Lc
            g = gc
            lr = min(lr * growth, lr_max)
        else:
            lr *= shrink
        trail[it] = L
        if L <= exact:
            converged = True
        elif it >= patience:
            ref = trail[it - patience]
            if ref - L <= rel_tol * ref:
                converged = True
    return x, L, it, converged
