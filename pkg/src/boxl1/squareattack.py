"""Score-based black-box random search with square-shaped l1 updates.

Each proposal rewrites one random window per channel with a sign-flipped
pyramid bump mixed into the existing perturbation, reallocates the l1 budget
freed by zeroing a second window, upscales the candidate and projects it back
onto S. A candidate is accepted only if it strictly decreases the margin
loss, so the accepted-margin sequence is strictly decreasing and every
iterate is feasible.
"""

import math
from dataclasses import dataclass

import numpy as np

from .apgd import AttackResult
from .errors import DimensionMismatchError, ParameterError
from .geometry import ThreatModel, project_box_l1
from .models import margin_loss

_P_HALVING_FRACTIONS = (0.05, 0.2, 0.5, 0.8)
_MAX_CONSECUTIVE_SKIPS = 10000


@dataclass(frozen=True)
class SquareConfig:
    n_queries: int = 5000
    p_init: float = 0.8
    upscale: float = 3.0

    def __post_init__(self):
        if self.n_queries < 1:
            raise ParameterError("n_queries must be >= 1")
        if not 0.0 < self.p_init <= 1.0:
            raise ParameterError("p_init must be in (0, 1]")


@dataclass
class SquareState:
    """nu = current iterate minus the clean image; x + nu stays in S."""

    nu: np.ndarray
    loss_cur: float
    queries_used: int
    window: int


def as_image(x):
    """Validate a square (h, h, c) image tensor."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != x.shape[1]:
        raise DimensionMismatchError("expected a square image of shape (h, h, c)")
    if x.shape[0] < 1 or x.shape[2] < 1:
        raise DimensionMismatchError("image sides and channels must be >= 1")
    return x


def window_schedule(p_init, query_index, n_queries, h):
    """Window side for the given query: w = round(sqrt(p * h^2)), clamped.

    p starts at p_init and halves once the query index passes each of the
    fractions {0.05, 0.2, 0.5, 0.8} of the budget, giving the piecewise
    constant, nonincreasing schedule controlled by the single parameter p.
    """
    if not 0 <= query_index < n_queries:
        raise ParameterError("query_index out of range")
    halvings = sum(query_index >= f * n_queries for f in _P_HALVING_FRACTIONS)
    p = p_init * 0.5**halvings
    w = int(round(math.sqrt(p * h * h)))
    return max(1, min(w, h))


def pyramid_eta(w):
    """Centrally peaked nonnegative bump on a w x w window, unit l1 mass.

    eta[i, j] = sum_{k=0}^{m} 1/(k+1)^2 with m the ring depth
    min(i, j, w-1-i, w-1-j), then normalized.
    """
    if w < 1:
        raise ParameterError("w must be >= 1")
    idx = np.arange(w)
    depth = np.minimum.outer(np.minimum(idx, w - 1 - idx), np.minimum(idx, w - 1 - idx))
    weights = np.cumsum(1.0 / (np.arange(w) + 1.0) ** 2)
    eta = weights[depth]
    return eta / eta.sum()


def square_proposal(state, x, eps, w, rng, upscale=3.0):
    """One candidate update delta with x + state.nu + delta in S exactly.

    Two w x w windows are drawn per image; within each channel the first
    window is overwritten by the normalized mix of a sign-flipped pyramid and
    the window's current content, scaled to the channel's reallocated l1
    budget, while the second window is cleared. The upscaled perturbation is
    then projected onto S. Returns None when the mixed update degenerates to
    zero even after one sign resample (the query is skipped, no model call).
    """
    x = as_image(x)
    h, _, c = x.shape
    nu = state.nu.copy()
    r1, s1, r2, s2 = (int(v) for v in rng.integers(0, h - w + 1, size=4))
    w1r, w1c = slice(r1, r1 + w), slice(s1, s1 + w)
    w2r, w2c = slice(r2, r2 + w), slice(s2, s2 + w)
    union = np.zeros((h, h), dtype=bool)
    union[w1r, w1c] = True
    union[w2r, w2c] = True
    eps_unused = max(eps - float(np.abs(nu).sum()), 0.0)
    eta = pyramid_eta(w)
    for i in range(c):
        block = nu[w1r, w1c, i]
        block_norm = float(np.abs(block).sum())

        def _mix():
            rho = 1.0 if rng.integers(0, 2) == 1 else -1.0
            mixed = rho * eta
            if block_norm > 0.0:
                mixed = mixed + block / block_norm
            return mixed

        nu_temp = _mix()
        temp_norm = float(np.abs(nu_temp).sum())
        if temp_norm == 0.0:
            nu_temp = _mix()
            temp_norm = float(np.abs(nu_temp).sum())
            if temp_norm == 0.0:
                return None
        eps_avail = float(np.abs(nu[:, :, i][union]).sum()) + eps_unused / c
        nu[w2r, w2c, i] = 0.0
        nu[w1r, w1c, i] = (nu_temp / temp_norm) * eps_avail
    flat_x = x.reshape(-1)
    z = project_box_l1(
        (x + upscale * nu).reshape(-1), ThreatModel(flat_x, eps)
    ).reshape(x.shape)
    return z - (x + state.nu)


def square_attack(model, x, y, eps, cfg, rng):
    """Greedy random search on the margin loss, budgeted in model queries.

    Starts from the clean image (nu = 0), counts the initial evaluation, and
    stops on success (margin < 0) or when cfg.n_queries evaluations are
    spent. The loss_trace carries the current best margin after each query.
    """
    x = as_image(x)
    state = SquareState(
        nu=np.zeros_like(x),
        loss_cur=margin_loss(model.logits(x.reshape(-1)), y),
        queries_used=1,
        window=x.shape[0],
    )
    trace = [state.loss_cur]
    skips = 0
    while state.loss_cur >= 0.0 and state.queries_used < cfg.n_queries:
        w = window_schedule(cfg.p_init, state.queries_used, cfg.n_queries, x.shape[0])
        state.window = w
        delta = square_proposal(state, x, eps, w, rng, upscale=cfg.upscale)
        if delta is None:
            skips += 1
            if skips >= _MAX_CONSECUTIVE_SKIPS:
                break
            continue
        skips = 0
        candidate = x + state.nu + delta
        margin_new = margin_loss(model.logits(candidate.reshape(-1)), y)
        state.queries_used += 1
        if margin_new < state.loss_cur:
            state.nu = candidate - x
            state.loss_cur = margin_new
        trace.append(state.loss_cur)
    x_adv = x + state.nu
    return AttackResult(
        x_adv=x_adv,
        loss_best=state.loss_cur,
        success=state.loss_cur < 0.0,
        iterations_used=state.queries_used,
        l1_norm=float(np.abs(state.nu).sum()),
        loss_trace=trace,
        margin_trace=trace,
    )
