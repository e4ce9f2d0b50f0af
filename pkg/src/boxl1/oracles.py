"""Independent reference implementations used to validate the fast paths.

Everything here is deliberately slow and simple: Dykstra's alternating
projections for the exact projection onto S, exhaustive grid search for the
steepest step, Monte Carlo for the expected support size, and feasible-point
samplers. These are compiled into the test suite and the ``verify`` CLI verb
only; nothing on the production attack path imports this module.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .geometry import ThreatModel, as_vector, project_box_l1, project_l1_ball
from .geometry import steepest_descent_direction

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_ITER = 50000


@dataclass(frozen=True)
class OracleReport:
    value: object
    iterations: int
    residual: float


def dykstra_project(u, tm, tol=DYKSTRA_TOL, max_iter=DYKSTRA_MAX_ITER):
    """Exact projection onto S via Dykstra's algorithm between B1(x,eps) and H.

    Plain alternating projections converge to *a* point of the intersection;
    the correction vectors are what make the limit the nearest point. The
    iterate can stall for a few cycles while the corrections still move, so
    the residual tracks the l-infinity change of the iterate *and* of both
    corrections; callers should ignore non-converged runs (residual > tol).
    """
    if not tol > 0.0:
        raise ParameterError("tol must be positive")
    u = as_vector(u, "u")
    x = tm.anchor
    z = u.copy()
    p = np.zeros_like(u)
    q = np.zeros_like(u)
    residual = np.inf
    for it in range(1, max_iter + 1):
        y = project_l1_ball(z + p, x, tm.eps)
        p_new = z + p - y
        z_new = np.clip(y + q, 0.0, 1.0)
        q_new = y + q - z_new
        residual = float(
            max(
                np.max(np.abs(z_new - z)),
                np.max(np.abs(p_new - p)),
                np.max(np.abs(q_new - q)),
            )
        )
        z, p, q = z_new, p_new, q_new
        if residual < tol:
            break
    return OracleReport(value=z, iterations=it, residual=residual)


def sample_feasible(tm, rng):
    """One random point of S with a uniformly random support size.

    Draws sparsity s in {1..d}, a sign pattern, Dirichlet magnitudes summing
    to a random fraction of eps, and projects the perturbed anchor onto S so
    membership is guaranteed. Deterministic under a seeded generator.
    """
    d = tm.dim
    s = int(rng.integers(1, d + 1))
    support = rng.choice(d, size=s, replace=False)
    signs = rng.choice([-1.0, 1.0], size=s)
    mags = rng.dirichlet(np.ones(s)) * (rng.random() * tm.eps)
    delta = np.zeros(d)
    delta[support] = signs * mags
    return project_box_l1(tm.anchor + delta, tm)


def sample_feasible_batch(tm, n, rng):
    """(n, d) array of points of S, feasible by construction.

    Cheap batch variant used by the dominance tests: scaled Dirichlet
    magnitudes keep the l1 budget, and clipping to the box only shrinks
    coordinates toward the anchor, so no projection is needed.
    """
    d = tm.dim
    signs = rng.choice([-1.0, 1.0], size=(n, d))
    mags = rng.dirichlet(np.ones(d), size=n) * (rng.random((n, 1)) * tm.eps)
    z = tm.anchor + signs * mags
    np.clip(z, 0.0, 1.0, out=z)
    return z


def monte_carlo_sparsity(eps, d, n_samples, rng):
    """Sample mean and standard error of ||delta*||_0 for x ~ U([0,1]^d).

    Gradients are standard normal; the support size is read off the step
    built by steepest_descent_direction, so this exercises the production
    construction end to end.
    """
    if n_samples < 100:
        raise ParameterError("n_samples must be >= 100")
    counts = np.empty(n_samples)
    for i in range(n_samples):
        x = rng.random(d)
        w = rng.standard_normal(d)
        step = steepest_descent_direction(w, ThreatModel(x, eps))
        counts[i] = np.count_nonzero(step.delta)
    mean = float(counts.mean())
    stderr = float(counts.std(ddof=1) / np.sqrt(n_samples))
    return mean, stderr


def grid_steepest_oracle(w, tm, resolution):
    """Exhaustive grid maximizer of <w, delta> over S - x, for d <= 4.

    Per-coordinate grids span [-x_i, 1-x_i] with spacing <= 1/resolution and
    always contain 0, so rounding the true optimum toward 0 lands on a
    feasible grid point: <w, delta_grid> is within sum_i |w_i|/resolution of
    the optimum. Cost grows as resolution^d; larger d is refused.
    """
    w = as_vector(w, "w")
    x = tm.anchor
    d = w.size
    if d > 4:
        raise ParameterError("grid oracle is limited to d <= 4")
    if resolution < 1:
        raise ParameterError("resolution must be >= 1")
    if not np.any(w):
        return np.zeros(d)
    axes = []
    total = 1
    for xi in x:
        neg = np.linspace(-xi, 0.0, int(np.ceil(xi * resolution)) + 1)
        pos = np.linspace(0.0, 1.0 - xi, int(np.ceil((1.0 - xi) * resolution)) + 1)
        axis = np.unique(np.concatenate([neg, pos]))
        axes.append(axis)
        total *= axis.size
        if total > 3 * 10**7:
            raise ParameterError("grid too large; lower the resolution")
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    feasible = np.abs(pts).sum(axis=1) <= tm.eps
    pts = pts[feasible]
    best = int(np.argmax(pts @ w))
    return pts[best]


def random_feasible_attack(model, x, y, eps, n_queries, rng):
    """Baseline black-box attack: evaluate random feasible points only.

    Returns (success, queries_used) where success means some sampled point
    (including the clean one) had margin < 0. Used as the floor that the
    square attack must beat.
    """
    from .models import margin_loss

    x = as_vector(x, "x")
    tm = ThreatModel(x, eps)
    if margin_loss(model.logits(x), y) < 0.0:
        return True, 1
    for i in range(2, n_queries + 1):
        z = sample_feasible(tm, rng)
        if margin_loss(model.logits(z), y) < 0.0:
            return True, i
    return False, n_queries
