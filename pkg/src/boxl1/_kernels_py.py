"""Pure-numpy fallback for the compiled kernels in ``boxl1._kernels``.

Both backends expose the same five functions with identical contracts; the
compiled one is preferred at import time (see :mod:`boxl1.kernels`). The
vectorized variants here may differ from the sequential C loops in the last
ulp (different summation order); all consumers use tolerances accordingly.
"""

import numpy as np

NAME = "python"


def box_feasible(u, x, eps):
    """True iff u is in [0,1]^d and ||u - x||_1 <= eps."""
    if u.min() < 0.0 or u.max() > 1.0:
        return False
    return bool(np.abs(u - x).sum() <= eps)


def box_prepare(u, x, a, g):
    """Fill a = |u - x| and g = box headroom toward u; return sum min(a, g)."""
    diff = u - x
    np.abs(diff, out=a)
    sgn = np.sign(diff)
    g[:] = np.where(sgn > 0, 1.0 - x, np.where(sgn < 0, x, 0.0))
    return float(np.minimum(a, g).sum())


def box_sweep(t, cat, s0, m0, eps):
    """Ascending breakpoint sweep; see the compiled twin for semantics.

    Implemented with cumulative sums instead of an early-exit loop.
    """
    delta = np.where(cat == 0, -1.0, 1.0)
    m_after = m0 + np.cumsum(delta)
    m_before = np.empty_like(m_after)
    m_before[0] = m0
    m_before[1:] = m_after[:-1]
    dt = np.diff(t, prepend=0.0)
    s_at = s0 - np.cumsum(m_before * dt)
    below = np.nonzero(s_at < eps)[0]
    if below.size == 0:
        return float("nan")
    j = int(below[0])
    s_prev = s0 if j == 0 else float(s_at[j - 1])
    lam_prev = 0.0 if j == 0 else float(t[j - 1])
    return lam_prev + (s_prev - eps) / float(m_before[j])


def box_sweep_desc(t, cat, eps, full):
    """Descending twin of box_sweep; see the compiled version for semantics."""
    delta = np.where(cat == 0, 1.0, -1.0)
    m_after = np.cumsum(delta)
    m_seg = np.empty_like(m_after)
    m_seg[0] = 0.0
    m_seg[1:] = m_after[:-1]
    dt = np.empty_like(t)
    dt[0] = 0.0
    dt[1:] = t[:-1] - t[1:]
    s_at = np.cumsum(m_seg * dt)
    hits = np.nonzero(s_at >= eps)[0]
    if hits.size:
        j = int(hits[0])
        return float(t[j] + (s_at[j] - eps) / m_seg[j])
    if not full:
        return float("nan")
    return float(t[-1] + (s_at[-1] - eps) / m_after[-1])


def box_finalize(u, x, a, g, lam, out):
    """Assemble the projected point into out; return its l1 distance to x."""
    w = np.minimum(a - lam, g)
    np.maximum(w, 0.0, out=w)
    np.copysign(w, u - x, out=w)
    np.add(x, w, out=out)
    np.clip(out, 0.0, 1.0, out=out)
    return float(np.abs(out - x).sum())


def cum_threshold(z_sorted, eps):
    """Smallest 1-based k with cumsum(z_sorted)[k-1] >= eps, and the prefix sum."""
    c = np.cumsum(z_sorted)
    k = int(np.searchsorted(c, eps, side="left"))
    if k >= z_sorted.size:
        return -1, float(c[-1]) if z_sorted.size else 0.0
    acc = 0.0 if k == 0 else float(c[k - 1])
    return k + 1, acc
