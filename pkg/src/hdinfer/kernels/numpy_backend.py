"""Pure-NumPy fallback for the compiled CD kernels.

Slower (Python loop over coordinates) but update-for-update identical to
``_cd.pyx``; the test suite asserts agreement between the two backends.
"""


def _soft(v, t):
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


def lasso_cd(X, resid, theta, col_ss, lam, max_sweeps, tol):
    n, p = X.shape
    maxd = 0.0
    if max_sweeps <= 0:
        return 0, 0.0
    for sweep in range(max_sweeps):
        maxd = 0.0
        for j in range(p):
            c = col_ss[j]
            if c <= 1e-12:
                continue
            col = X[:, j]
            rho = float(col @ resid) / n + c * theta[j]
            new = _soft(rho, lam) / c
            d = new - theta[j]
            if d != 0.0:
                resid -= d * col
                theta[j] = new
                maxd = max(maxd, abs(d))
        if maxd <= tol:
            return sweep + 1, maxd
    return max_sweeps, maxd


def qp_cd(S, u, g, z, mu, max_sweeps, tol, blowup):
    p = S.shape[0]
    maxd = 0.0
    if max_sweeps <= 0:
        return 0, 0.0, 1
    for sweep in range(max_sweeps):
        maxd = 0.0
        for j in range(p):
            c = S[j, j]
            if c <= 1e-12:
                continue
            val = u[j] - z[j] + c * g[j]
            new = _soft(val, mu) / c
            d = new - g[j]
            if d != 0.0:
                z += d * S[j]
                g[j] = new
                maxd = max(maxd, abs(d))
                if abs(new) > blowup:
                    return sweep + 1, maxd, 2
        if maxd <= tol:
            return sweep + 1, maxd, 0
    return max_sweeps, maxd, 1
