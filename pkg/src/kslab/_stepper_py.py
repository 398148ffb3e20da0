"""Pure-numpy fallback for the pentadiagonal implicit stepper.

Mirrors the compiled extension: trapezoidal steps for the cumulative-mass
equation, two Newton iterations per step with the exact banded Jacobian
(scipy solve_banded), 5-point derivative rows, identity rows at r = 0 and
r = r_max.
"""

import numpy as np
from scipy.linalg import solve_banded

TWO_PI = 2.0 * np.pi
# iterate Newton until the update stalls below the rounding floor of the
# profile (scale 8 pi); systematic solver leftover otherwise accumulates
NEWTON_TOL = 1e-11


def _half_mass_radius(m, r, half):
    """Radius where the profile crosses `half`, by bisection + chord."""
    lo, hi = 0, len(m) - 1
    if m[hi] <= half:
        return float(r[hi])
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if m[mid] < half:
            lo = mid
        else:
            hi = mid
    if m[hi] == m[lo]:
        return float(r[hi])
    return float(r[lo] + (half - m[lo]) * (r[hi] - r[lo]) / (m[hi] - m[lo]))


def _band_ranges(n):
    # row range [lo, hi] touching column i - 2 + k for each stencil slot k
    return [(max(1, 2 - k), min(n - 2, n + 1 - k)) for k in range(5)]


def _apply_f(m, r, w1, w2):
    """F(m) = m_rr - m_r/r + m m_r/(2 pi r); returns (F, m_r) at the nodes."""
    n = m.size
    d1 = np.zeros(n)
    d2 = np.zeros(n)
    for k, (lo, hi) in enumerate(_band_ranges(n)):
        rows = slice(lo, hi + 1)
        cols = slice(lo - 2 + k, hi - 1 + k)
        d1[rows] += w1[rows, k] * m[cols]
        d2[rows] += w2[rows, k] * m[cols]
    out = np.zeros(n)
    out[1:-1] = d2[1:-1] + d1[1:-1] * (m[1:-1] / TWO_PI - 1.0) / r[1:-1]
    d1[0] = d1[-1] = 0.0
    return out, d1


def _newton_update(m, mk, f0, r, w1, w2, hdt, total_mass):
    """One Newton update of mk for G(mk) = mk - m - hdt (F(m) + F(mk)) = 0.

    Returns max|update| on success, -1.0 on a linear-solve failure.
    """
    n = m.size
    fk, d1 = _apply_f(mk, r, w1, w2)
    rhs = np.empty(n)
    rhs[0] = -mk[0]
    rhs[-1] = -(mk[-1] - total_mass)
    rhs[1:-1] = -(mk[1:-1] - m[1:-1] - hdt * (f0[1:-1] + fk[1:-1]))

    safe_r = np.where(r > 0.0, r, 1.0)
    c = (mk / TWO_PI - 1.0) / safe_r
    u = d1 / (TWO_PI * safe_r)
    ab = np.zeros((5, n))
    # banded storage: A(i, j) -> ab[2 + i - j, j]; column j = i - 2 + k
    for k, (lo, hi) in enumerate(_band_ranges(n)):
        i = np.arange(lo, hi + 1)
        ab[4 - k, i - 2 + k] += -hdt * (w2[i, k] + c[i] * w1[i, k])
    ab[2, 1:-1] += 1.0 - hdt * u[1:-1]
    ab[2, 0] = 1.0
    ab[2, -1] = 1.0

    try:
        delta = solve_banded((2, 2), ab, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        return -1.0
    mk += delta
    if not np.all(np.isfinite(mk)):
        return -1.0
    return float(np.max(np.abs(delta)))


def advance_chunk(m, r, w1, w2, total_mass, t, t_target,
                  dt0, theta, dr_min, mono_tol, max_steps):
    """March m from t to t_target in place.

    dt = min(dt0, theta * t * log t * (dr_min / lam_half)^2, t_target - t)
    with lam_half the half-mass radius.  Returns (t_reached, steps, status):
    status 0 ok, 1 negative density, 2 linear-solve failure, 3 step budget.
    """
    m = np.asarray(m)
    r = np.asarray(r)
    half = 0.5 * total_mass
    steps = 0
    status = 0

    while t < t_target:
        if steps >= max_steps:
            status = 3
            break
        lam = _half_mass_radius(m, r, half)
        dt = min(dt0, theta * t * np.log(t) * (dr_min / lam) ** 2)
        last = dt >= t_target - t
        if last:
            dt = t_target - t

        f0, _ = _apply_f(m, r, w1, w2)
        mk = m.copy()
        res = 0.0
        for _ in range(4):
            res = _newton_update(m, mk, f0, r, w1, w2, 0.5 * dt, total_mass)
            if res < NEWTON_TOL:  # converged (or failed: res = -1)
                break
        if res < 0.0:
            status = 2
            break
        # pivoting leaves rounding dust on the identity rows; re-pin
        mk[0] = 0.0
        mk[-1] = total_mass

        if np.any(np.diff(mk) < -mono_tol):
            status = 1
            break

        m[:] = mk
        t = t_target if last else t + dt
        steps += 1

    return t, steps, status
