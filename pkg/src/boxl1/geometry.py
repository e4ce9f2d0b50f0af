"""Projections and steepest-descent machinery for S = B1(x, eps) ∩ [0,1]^d.

The threat set S is the l1 ball of radius eps around an anchor x, intersected
with the unit box. This module provides the exact Euclidean projection onto S
(via a breakpoint sweep over the dual variable of the budget constraint, cost
O(d log d)), the plain l1-ball projection, the clip-after-l1 approximation
kept for ablations, the box-aware steepest ascent direction of a linear
functional over S - x, the sparse top-t sign step used by the attacks, and
closed-form expressions for the expected support size of the steepest step.

Sign convention: sign(0) = 0 everywhere, so coordinates with u_i = x_i or
w_i = 0 stay frozen.
"""

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from . import kernels
from .errors import DimensionMismatchError, InvariantViolationError, ParameterError

# Negative-control hook for the `verify` CLI verb: a nonzero value is added to
# the projection's dual variable, which must make the oracle suite fail.
_LAMBDA_DEBUG_OFFSET = 0.0

# l1 budgets may overshoot by ULPs after the sweep; beyond this the residual
# is removed by rescaling the perturbation.
FEASIBILITY_TOL = 1e-9

_PREFIX_BLOCK = 4096


def set_lambda_debug_offset(value):
    """Install the fault-injection offset (verify's negative control)."""
    global _LAMBDA_DEBUG_OFFSET
    _LAMBDA_DEBUG_OFFSET = float(value)


def as_vector(a, name="vector"):
    """Validate and return a finite 1-D float64 array of length >= 1."""
    v = np.ascontiguousarray(a, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimensionMismatchError(f"{name} must be a 1-D array of length >= 1")
    if not np.all(np.isfinite(v)):
        raise InvariantViolationError(f"{name} contains NaN or Inf")
    return v


@dataclass(frozen=True)
class ThreatModel:
    """Anchor point x in [0,1]^d plus l1 radius eps > 0; defines S."""

    anchor: np.ndarray
    eps: float

    def __post_init__(self):
        v = as_vector(self.anchor, "anchor")
        object.__setattr__(self, "anchor", v)
        if v.min() < 0.0 or v.max() > 1.0:
            raise InvariantViolationError("anchor must lie in [0, 1]^d")
        eps = float(self.eps)
        if not (eps > 0.0 and math.isfinite(eps)):
            raise ParameterError("eps must be positive and finite")
        object.__setattr__(self, "eps", eps)

    @property
    def dim(self):
        return self.anchor.size

    def contains(self, z, tol=FEASIBILITY_TOL):
        z = np.asarray(z, dtype=np.float64)
        if z.min() < -tol or z.max() > 1.0 + tol:
            return False
        return bool(np.abs(z - self.anchor).sum() <= self.eps + tol)


@dataclass(frozen=True)
class SteepestStep:
    """Solution of max <w, delta> over S - x.

    delta touches at most k coordinates; inner_product is <w, delta>.
    k = 0 flags a degenerate instance (w = 0 or no movable coordinate).
    """

    delta: np.ndarray
    k: int
    inner_product: float


def clip_box(u):
    """Componentwise projection onto [0, 1]^d."""
    u = as_vector(u, "u")
    return np.clip(u, 0.0, 1.0)


def project_l1_ball(u, x, eps):
    """Euclidean projection of u onto the l1 ball of radius eps around x.

    Uses the sort-and-threshold simplex method on |u - x|, O(d log d).
    Interior points are returned unchanged (exactly).
    """
    u = as_vector(u, "u")
    x = as_vector(x, "x")
    if u.size != x.size:
        raise DimensionMismatchError("u and x must have the same length")
    if not eps > 0.0:
        raise ParameterError("eps must be positive")
    v = u - x
    av = np.abs(v)
    if av.sum() <= eps:
        return u.copy()
    srt = np.sort(av)[::-1]
    css = np.cumsum(srt)
    idx = np.arange(1, av.size + 1)
    rho = int(np.nonzero(srt * idx > css - eps)[0][-1])
    theta = (css[rho] - eps) / (rho + 1.0)
    w = np.maximum(av - theta, 0.0)
    return x + np.sign(v) * w


def _solve_lambda(a, g, s0, eps):
    """Find lambda* with sum_i max(0, min(a_i - lambda, g_i)) = eps.

    Only positive breakpoints are swept (negative ones are folded into the
    boundary slope counts). Small instances are fully sorted and swept
    ascending. Large ones are swept from the end nearer the crossing using a
    partition-selected prefix that grows only when the crossing lies beyond
    it, keeping the common case O(d + k log k): a small eps/s0 ratio puts the
    crossing among the largest breakpoints, a large one among the smallest.
    """
    K = kernels.get()
    leave = a[a > 0.0]
    enter_all = a - g
    enter = enter_all[enter_all > 0.0]
    t = np.concatenate([leave, enter])
    cat = np.concatenate(
        [np.zeros(leave.size, dtype=np.int8), np.ones(enter.size, dtype=np.int8)]
    )
    n = t.size

    def _full_ascending():
        m0 = float(np.count_nonzero((a <= g) & (a > 0.0)))
        order = np.argsort(t, kind="stable")
        lam = K.box_sweep(t[order], cat[order], s0, m0, eps)
        if math.isnan(lam):  # numerically possible only for eps ~ 0
            lam = float(t[order[-1]])
        return lam

    if n <= _PREFIX_BLOCK:
        return _full_ascending()
    if eps <= 0.5 * s0:
        q = _PREFIX_BLOCK
        while q < n:
            top = np.argpartition(t, n - q)[n - q :]
            order = top[np.argsort(-t[top], kind="stable")]
            lam = K.box_sweep_desc(t[order], cat[order], eps, False)
            if not math.isnan(lam):
                return lam
            q *= 8
        order = np.argsort(-t, kind="stable")
        return K.box_sweep_desc(t[order], cat[order], eps, True)
    m0 = float(np.count_nonzero((a <= g) & (a > 0.0)))
    q = _PREFIX_BLOCK
    while q < n:
        pref = np.argpartition(t, q)[:q]
        order = pref[np.argsort(t[pref], kind="stable")]
        lam = K.box_sweep(t[order], cat[order], s0, m0, eps)
        if not math.isnan(lam):
            return lam
        q *= 8
    return _full_ascending()


def project_box_l1(u, tm):
    """Exact Euclidean projection of u onto S = B1(x, eps) ∩ [0,1]^d.

    Solves the KKT system of the constrained least-squares problem: with
    gamma_i = max{-x_i sign(u_i - x_i), (1 - x_i) sign(u_i - x_i)} the
    solution is z_i = x_i + sign(u_i - x_i) max{0, min{|u_i - x_i| - lambda*,
    gamma_i}}, where lambda* = 0 when sum_i min{|u_i - x_i|, gamma_i} <= eps
    and otherwise solves the piecewise-linear budget equation via a sorted
    breakpoint sweep. Total cost O(d log d); feasible inputs are fixed points.
    """
    x = tm.anchor
    eps = tm.eps
    u = as_vector(u, "u")
    if u.size != x.size:
        raise DimensionMismatchError("u and anchor must have the same length")
    K = kernels.get()
    if _LAMBDA_DEBUG_OFFSET == 0.0 and K.box_feasible(u, x, eps):
        return u.copy()
    a = np.empty_like(u)
    g = np.empty_like(u)
    s0 = K.box_prepare(u, x, a, g)
    if s0 <= eps:
        lam = 0.0
    else:
        lam = _solve_lambda(a, g, s0, eps)
    if _LAMBDA_DEBUG_OFFSET != 0.0:
        lam = max(0.0, lam + _LAMBDA_DEBUG_OFFSET)
    z = np.empty_like(u)
    l1 = K.box_finalize(u, x, a, g, lam, z)
    if l1 > eps:
        z = x + (z - x) * (eps / l1)
        np.clip(z, 0.0, 1.0, out=z)
    return z


def approx_project(u, tm):
    """Clip-to-box after l1-ball projection: A(u) = (P_H ∘ P_B1)(u).

    Always lands in S, but is biased toward the interior of the l1 ball
    (||A(u) - x||_1 <= ||P_S(u) - x||_1). Kept solely for ablations against
    :func:`project_box_l1`.
    """
    x = tm.anchor
    u = as_vector(u, "u")
    if u.size != x.size:
        raise DimensionMismatchError("u and anchor must have the same length")
    return np.clip(project_l1_ball(u, x, tm.eps), 0.0, 1.0)


def steepest_descent_direction(w, tm):
    """Maximize <w, delta> subject to ||delta||_1 <= eps and x + delta in [0,1]^d.

    With z_i the box headroom in the direction of w_i, the optimum saturates
    coordinates in decreasing order of |w_i| (ties by lower index) until the
    l1 budget is spent; the support size k is data dependent. If the total
    headroom is below eps every movable coordinate saturates and k is the
    count of z_i > 0. w = 0 yields the zero step flagged with k = 0.
    """
    x = tm.anchor
    eps = tm.eps
    w = as_vector(w, "w")
    if w.size != x.size:
        raise DimensionMismatchError("w and anchor must have the same length")
    d = w.size
    sw = np.sign(w)
    z = np.maximum((1.0 - x) * sw, -x * sw)
    delta = np.zeros(d)
    if not np.any(sw):
        return SteepestStep(delta, 0, 0.0)
    order = np.argsort(-np.abs(w), kind="stable")
    k1, acc = kernels.get().cum_threshold(np.ascontiguousarray(z[order]), eps)
    if k1 < 0:
        np.multiply(z, sw, out=delta)
        k = int(np.count_nonzero(z > 0.0))
    else:
        head = order[: k1 - 1]
        delta[head] = z[head] * sw[head]
        last = order[k1 - 1]
        delta[last] = (eps - acc) * sw[last]
        k = int(k1)
    return SteepestStep(delta, k, float(w @ delta))


def sparse_sign_step(g, t):
    """Unit-l1 step from the signs of the t largest-|g| coordinates.

    Ties in |g| are broken by lower index. Selected zero entries of g stay
    zero, so the support can be smaller than t; the result has l1 norm
    exactly 1 unless g = 0, in which case the zero vector is returned.
    """
    g = as_vector(g, "g")
    d = g.size
    if not 1 <= t <= d:
        raise ParameterError(f"t must be in [1, {d}], got {t}")
    if not np.any(g):
        return np.zeros(d)
    top = np.argsort(-np.abs(g), kind="stable")[:t]
    h = np.zeros(d)
    h[top] = np.sign(g[top])
    return h / np.abs(h).sum()


def _irwin_hall_cdf_mp(eps, n):
    """P(sum of n iid U[0,1] <= eps) as an mpf, for 0 <= eps < n."""
    e = mpmath.mpf(eps)
    total = mpmath.mpf(0)
    for k in range(int(math.floor(eps)) + 1):
        term = mpmath.binomial(n, k) * (e - k) ** n
        total += term if k % 2 == 0 else -term
    return total / mpmath.factorial(n)


def irwin_hall_cdf(eps, n):
    """CDF of the sum of n iid uniforms on [0,1], clamped to [0,1].

    Returns 1 for n = 0 or eps >= n and 0 for eps <= 0 < n. The alternating
    sum is evaluated in 60-digit arithmetic; terms grow like e^eps before
    cancelling, which float64 cannot absorb at the accuracy needed here.
    """
    if n < 0:
        raise ParameterError("n must be >= 0")
    if n == 0 or eps >= n:
        return 1.0
    if eps <= 0.0:
        return 0.0
    with mpmath.workdps(60):
        val = _irwin_hall_cdf_mp(eps, n)
    return min(1.0, max(0.0, float(val)))


# Discarded tail of the m-sum is below d * 1e-22; the per-m CDF decreases in m.
_SPARSITY_TAIL_CUTOFF = mpmath.mpf("1e-22")


def expected_sparsity_closed_form(eps, d):
    """Expected support size of the steepest step for x ~ U([0,1]^d).

    Evaluates floor(eps+1) + sum over m of the alternating double sum
    sum_k (-1)^k (eps-k)^(m-1) / (k! (m-1-k)!) in 60-digit arithmetic,
    truncating once the per-m contribution is negligible. Valid for
    0 < eps <= (d-1)/2. Always at least (floor(3 eps) + 1) / 2.
    """
    eps = float(eps)
    d = int(d)
    if not (0.0 < eps <= (d - 1) / 2):
        raise ParameterError("need 0 < eps <= (d - 1) / 2")
    fe = int(math.floor(eps))
    with mpmath.workdps(60):
        e = mpmath.mpf(eps)
        total = mpmath.mpf(math.floor(eps + 1))
        for m in range(fe + 2, d + 1):
            inner = mpmath.mpf(0)
            for k in range(fe + 1):
                term = (e - k) ** (m - 1) / (
                    mpmath.factorial(k) * mpmath.factorial(m - 1 - k)
                )
                inner += term if k % 2 == 0 else -term
            total += inner
            if inner < _SPARSITY_TAIL_CUTOFF:
                break
        return float(total)


def expected_sparsity_irwin_hall(eps, d):
    """Same expectation via the sum-of-uniforms identity; cross-check path."""
    eps = float(eps)
    d = int(d)
    if not (0.0 < eps <= (d - 1) / 2):
        raise ParameterError("need 0 < eps <= (d - 1) / 2")
    with mpmath.workdps(60):
        total = mpmath.mpf(0)
        for m in range(1, d + 1):
            n = m - 1
            if n == 0 or eps >= n:
                total += 1
                continue
            c = _irwin_hall_cdf_mp(eps, n)
            total += c
            if c < _SPARSITY_TAIL_CUTOFF:
                break
        return float(total)


def sparsity_lower_bound(eps):
    """(floor(3 eps) + 1) / 2, the simple bound on the expected support size."""
    return (math.floor(3.0 * eps) + 1) / 2.0
