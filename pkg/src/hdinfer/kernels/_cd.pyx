# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled coordinate-descent sweeps.

Two kernels share the soft-threshold update:

* ``lasso_cd`` -- residual-form cyclic CD for
  min (1/2n)||y - X theta||^2 + lam ||theta||_1, with X column-major.
* ``qp_cd`` -- covariance-form cyclic CD for
  min (1/2) g' S g - u' g + mu ||g||_1, maintaining z = S g.

Both mutate their state arrays in place and must stay update-for-update
identical to ``kernels.numpy_backend``.
"""

from libc.math cimport fabs


cdef inline double _soft(double v, double t) noexcept nogil:
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


def lasso_cd(double[::1, :] X, double[::1] resid, double[::1] theta,
             double[::1] col_ss, double lam, int max_sweeps, double tol):
    """Run cyclic CD sweeps until the largest coordinate update is <= tol.

    col_ss[j] must equal ||X[:, j]||^2 / n.  Returns (sweeps_used, max_update).
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t i, j, sweep
    cdef double ninv = 1.0 / n
    cdef double c, rho, new, d, maxd
    maxd = 0.0
    if max_sweeps <= 0:
        return 0, 0.0
    with nogil:
        for sweep in range(max_sweeps):
            maxd = 0.0
            for j in range(p):
                c = col_ss[j]
                if c <= 1e-12:
                    continue
                rho = 0.0
                for i in range(n):
                    rho += X[i, j] * resid[i]
                rho = rho * ninv + c * theta[j]
                new = _soft(rho, lam) / c
                d = new - theta[j]
                if d != 0.0:
                    for i in range(n):
                        resid[i] -= d * X[i, j]
                    theta[j] = new
                    if fabs(d) > maxd:
                        maxd = fabs(d)
            if maxd <= tol:
                return sweep + 1, maxd
    return max_sweeps, maxd


def qp_cd(double[:, ::1] S, double[::1] u, double[::1] g, double[::1] z,
          double mu, int max_sweeps, double tol, double blowup):
    """CD sweeps on the box-dual form of the decorrelation program.

    z must hold S @ g on entry and does on exit (up to update round-off).
    Returns (sweeps_used, max_update, status) with status 0 converged,
    1 sweep budget exhausted, 2 iterate blow-up (infeasible mu signature).
    """
    cdef Py_ssize_t p = S.shape[0]
    cdef Py_ssize_t i, j, sweep
    cdef double c, val, new, d, maxd
    maxd = 0.0
    if max_sweeps <= 0:
        return 0, 0.0, 1
    with nogil:
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
                    for i in range(p):
                        z[i] += d * S[j, i]
                    g[j] = new
                    if fabs(d) > maxd:
                        maxd = fabs(d)
                    if fabs(new) > blowup:
                        return sweep + 1, maxd, 2
            if maxd <= tol:
                return sweep + 1, maxd, 0
    return max_sweeps, maxd, 1
