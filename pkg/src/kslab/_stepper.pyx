# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled pentadiagonal implicit stepper for the cumulative-mass equation.

One step solves the trapezoidal system

    m' - m = (dt/2) * (F(m) + F(m'))      F(m) = m_rr - m_r/r + m m_r/(2 pi r)

by two Newton iterations with the exact banded Jacobian (LAPACK dgbsv).
Derivatives use precomputed 5-point rows (4th order in the interior), so the
matrix has bandwidth 2.  Rows 0 and n-1 carry the identities m(0) = 0 and
m(r_max) = M.
"""

import numpy as np

from libc.math cimport isfinite, log
from scipy.linalg.cython_lapack cimport dgbsv

cdef double TWO_PI = 6.283185307179586476925286766559


cdef double _half_mass_ptr(double* m, double* r, Py_ssize_t n, double half) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n - 1, mid
    if m[hi] <= half:
        return r[hi]
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if m[mid] < half:
            lo = mid
        else:
            hi = mid
    if m[hi] == m[lo]:
        return r[hi]
    return r[lo] + (half - m[lo]) * (r[hi] - r[lo]) / (m[hi] - m[lo])


def _half_mass_radius(double[::1] m, double[::1] r, double half):
    """Radius where the profile crosses `half`, by bisection + chord."""
    return _half_mass_ptr(&m[0], &r[0], m.shape[0], half)


cdef inline void _apply_f(double* m, double* r, double* w1, double* w2,
                          Py_ssize_t n, double* out, double* d1_out) noexcept nogil:
    cdef Py_ssize_t i, k, j
    cdef double d1, d2
    for i in range(1, n - 1):
        d1 = 0.0
        d2 = 0.0
        for k in range(5):
            j = i - 2 + k
            if j < 0 or j > n - 1:
                continue
            d1 += w1[5 * i + k] * m[j]
            d2 += w2[5 * i + k] * m[j]
        d1_out[i] = d1
        out[i] = d2 + d1 * (m[i] / TWO_PI - 1.0) / r[i]
    out[0] = 0.0
    out[n - 1] = 0.0
    d1_out[0] = 0.0
    d1_out[n - 1] = 0.0


cdef double _newton_update(double* m, double* mk, double* f0, double* fk,
                           double* d1, double* r, double* w1, double* w2,
                           double* ab, int* ipiv, double* rhs,
                           int n, double hdt, double total_mass) noexcept nogil:
    """One Newton update of mk for G(mk) = mk - m - hdt (F(m) + F(mk)) = 0.

    Returns max|update| on success, -1.0 on a linear-solve failure.
    """
    cdef int nrhs = 1, kl = 2, ku = 2, ldab = 7, info = 0
    cdef Py_ssize_t i, k, j
    cdef double c, u, step_max = 0.0, a

    _apply_f(mk, r, w1, w2, n, fk, d1)

    rhs[0] = -mk[0]
    rhs[n - 1] = -(mk[n - 1] - total_mass)
    for i in range(1, n - 1):
        rhs[i] = -(mk[i] - m[i] - hdt * (f0[i] + fk[i]))

    # LAPACK band storage: A(i,j) -> ab[j*ldab + kl + ku + i - j] (column j
    # of the Fortran array is row j of the C-contiguous (n, 7) scratch).
    for i in range(7 * n):
        ab[i] = 0.0
    ab[4] = 1.0
    ab[7 * (n - 1) + 4] = 1.0
    for i in range(1, n - 1):
        c = (mk[i] / TWO_PI - 1.0) / r[i]
        u = d1[i] / (TWO_PI * r[i])
        for k in range(5):
            j = i - 2 + k
            if j < 0 or j > n - 1:
                continue
            ab[7 * j + 4 + i - j] += -hdt * (w2[5 * i + k] + c * w1[5 * i + k])
        ab[7 * i + 4] += 1.0 - hdt * u

    dgbsv(&n, &kl, &ku, &nrhs, ab, &ldab, ipiv, rhs, &n, &info)
    if info != 0:
        return -1.0
    for i in range(n):
        mk[i] += rhs[i]
        if not isfinite(mk[i]):
            return -1.0
        a = rhs[i] if rhs[i] >= 0.0 else -rhs[i]
        if a > step_max:
            step_max = a
    return step_max


def advance_chunk(double[::1] m, double[::1] r,
                  double[:, ::1] w1, double[:, ::1] w2,
                  double total_mass, double t, double t_target,
                  double dt0, double theta, double dr_min,
                  double mono_tol, long max_steps):
    """March m from t to t_target in place.

    dt = min(dt0, theta * t * log t * (dr_min / lam_half)^2, t_target - t)
    with lam_half the half-mass radius.  Returns (t_reached, steps, status):
    status 0 ok, 1 negative density, 2 linear-solve failure, 3 step budget.
    """
    cdef int n = m.shape[0]
    cdef double[::1] f0 = np.empty(n)
    cdef double[::1] fk = np.empty(n)
    cdef double[::1] d1 = np.empty(n)
    cdef double[::1] mk = np.empty(n)
    cdef double[::1] rhs = np.empty(n)
    cdef double[::1] ab = np.empty(7 * n)
    cdef int[::1] ipiv = np.empty(n, dtype=np.intc)

    cdef long steps = 0
    cdef int status = 0
    cdef bint last
    cdef Py_ssize_t i, it
    cdef double lam, dt, ratio, res, half = 0.5 * total_mass
    # iterate Newton until the update stalls below the rounding floor of the
    # profile (scale 8 pi); systematic solver leftover otherwise accumulates
    cdef double newton_tol = 1e-11

    with nogil:
        while t < t_target:
            if steps >= max_steps:
                status = 3
                break
            lam = _half_mass_ptr(&m[0], &r[0], n, half)
            ratio = dr_min / lam
            dt = theta * t * log(t) * ratio * ratio
            if dt > dt0:
                dt = dt0
            last = dt >= t_target - t
            if last:
                dt = t_target - t

            _apply_f(&m[0], &r[0], &w1[0, 0], &w2[0, 0], n, &f0[0], &d1[0])
            for i in range(n):
                mk[i] = m[i]
            res = 0.0
            for it in range(4):
                res = _newton_update(&m[0], &mk[0], &f0[0], &fk[0], &d1[0],
                                     &r[0], &w1[0, 0], &w2[0, 0],
                                     &ab[0], &ipiv[0], &rhs[0],
                                     n, 0.5 * dt, total_mass)
                if res < newton_tol:  # converged (or failed: res = -1)
                    break
            if res < 0.0:
                status = 2
                break
            # pivoting leaves rounding dust on the identity rows; re-pin
            mk[0] = 0.0
            mk[n - 1] = total_mass

            for i in range(n - 1):
                if mk[i + 1] - mk[i] < -mono_tol:
                    status = 1
                    break
            if status != 0:
                break

            for i in range(n):
                m[i] = mk[i]
            t = t_target if last else t + dt
            steps += 1

    return t, steps, status
