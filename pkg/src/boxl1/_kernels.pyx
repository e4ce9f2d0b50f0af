# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: box+l1 projection sweep and steepest-descent scan.

Mirrors boxl1._kernels_py exactly; see that module for the reference
semantics. Only typed memoryviews are used, so the extension builds without
the numpy C headers.
"""

from libc.math cimport fabs, isnan

NAME = "compiled"


def box_feasible(double[::1] u, double[::1] x, double eps):
    """True iff u is in [0,1]^d and ||u - x||_1 <= eps. Early exit on box."""
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double s = 0.0
    for i in range(n):
        if u[i] < 0.0 or u[i] > 1.0:
            return False
        s += fabs(u[i] - x[i])
        if s > eps:
            return False
    return True


def box_prepare(double[::1] u, double[::1] x, double[::1] a, double[::1] g):
    """Fill a = |u - x| and g = per-coordinate box headroom toward u.

    Returns sum_i min(a_i, g_i), the l1 mass reachable at lambda = 0.
    """
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double s = 0.0, diff, gi, ai
    for i in range(n):
        diff = u[i] - x[i]
        if diff > 0.0:
            gi = 1.0 - x[i]
        elif diff < 0.0:
            gi = x[i]
        else:
            gi = 0.0
        ai = fabs(diff)
        a[i] = ai
        g[i] = gi
        s += ai if ai < gi else gi
    return s


def box_sweep(double[::1] t, signed char[::1] cat, double s0, double m0,
              double eps):
    """Ascending breakpoint sweep for the dual variable of the projection.

    t must be sorted ascending and strictly positive; cat[j] is 0 for an
    |u_i-x_i| event (coordinate leaves the unit-slope regime) and 1 for an
    |u_i-x_i|-gamma_i event (coordinate enters it). s0 is the constraint
    value at lambda = 0 and m0 the initial slope count. Returns lambda*, or
    NaN when the crossing lies beyond the last supplied breakpoint.
    """
    cdef Py_ssize_t j, n = t.shape[0]
    cdef double lam_old, lam = 0.0, S = s0, M = m0
    for j in range(n):
        lam_old = lam
        lam = t[j]
        S -= M * (lam - lam_old)
        if cat[j] == 0:
            M -= 1.0
        else:
            M += 1.0
        if S < eps:
            # crossing is inside (lam_old, lam]; undo this event
            if cat[j] == 0:
                M += 1.0
            else:
                M -= 1.0
            S += M * (lam - lam_old)
            return lam_old + (S - eps) / M
    return float("nan")


def box_sweep_desc(double[::1] t, signed char[::1] cat, double eps, bint full):
    """Descending twin of box_sweep, for crossings near the largest breakpoints.

    t sorted descending, strictly positive. Walking down, a category-0 event
    enters the unit-slope regime and a category-1 event leaves it. When
    ``full`` the crossing below the last breakpoint is extrapolated;
    otherwise NaN signals that the prefix was too short.
    """
    cdef Py_ssize_t j, n = t.shape[0]
    cdef double lam_prev, S = 0.0, M = 0.0
    cdef double lam = t[0] if n > 0 else 0.0
    for j in range(n):
        lam_prev = lam
        lam = t[j]
        S += M * (lam_prev - lam)
        if S >= eps:
            return lam + (S - eps) / M
        if cat[j] == 0:
            M += 1.0
        else:
            M -= 1.0
    if not full:
        return float("nan")
    return lam + (S - eps) / M


def box_finalize(double[::1] u, double[::1] x, double[::1] a, double[::1] g,
                 double lam, double[::1] out):
    """Assemble z_i = x_i + sign(u_i-x_i) * max(0, min(a_i - lam, g_i)).

    Clamps to [0,1] exactly and returns ||z - x||_1.
    """
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double s = 0.0, w, zi
    for i in range(n):
        w = a[i] - lam
        if w > g[i]:
            w = g[i]
        if w < 0.0:
            w = 0.0
        if u[i] >= x[i]:
            zi = x[i] + w
        else:
            zi = x[i] - w
        if zi > 1.0:
            zi = 1.0
        elif zi < 0.0:
            zi = 0.0
        out[i] = zi
        s += fabs(zi - x[i])
    return s


def cum_threshold(double[::1] z_sorted, double eps):
    """Smallest 1-based k with cumulative sum >= eps, plus the sum before k.

    Returns (-1, total) when the full sum stays below eps.
    """
    cdef Py_ssize_t i, n = z_sorted.shape[0]
    cdef double acc = 0.0
    for i in range(n):
        if acc + z_sorted[i] >= eps:
            return i + 1, acc
        acc += z_sorted[i]
    return -1, acc
