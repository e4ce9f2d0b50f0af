"""Adaptive projected gradient ascent in S = B1(x, eps) ∩ [0,1]^d.

Single-radius runs recompute the update sparsity and step size at fixed
checkpoints from the support size of the best iterate so far; the multi-radius
variant warm-starts through shrinking balls (3 eps, 2 eps, eps) and only the
final phase produces the reported result. Restart orchestration picks the
pointwise best run, with successful runs taking precedence.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvariantViolationError, ParameterError
from .geometry import ThreatModel, as_vector, project_box_l1, sparse_sign_step
from .models import LOSS_DLR_T, loss_and_grad, margin_loss, _loss_and_upstream
from .oracles import sample_feasible


@dataclass(frozen=True)
class ApgdConfig:
    """Schedule constants; the defaults need no tuning per model."""

    n_iter: int = 100
    k0: float = 0.2
    checkpoint_fraction: float = 0.04
    sparsity_divisor: float = 1.5
    step_decay: float = 1.5
    rho: float = 0.95
    eta_min_divisor: float = 10.0
    phases: tuple = ((0.3, 3.0), (0.3, 2.0), (0.4, 1.0))
    early_stop: bool = False
    record_iterates: bool = False

    def __post_init__(self):
        if self.n_iter < 1:
            raise ParameterError("n_iter must be >= 1")
        if not 0.0 < self.k0 <= 1.0:
            raise ParameterError("k0 must be in (0, 1]")
        if self.phases and abs(sum(f for f, _ in self.phases) - 1.0) > 1e-9:
            raise ParameterError("phase fractions must sum to 1")


@dataclass
class ApgdState:
    """Mutable per-run state, exposed for introspection in tests."""

    x_cur: np.ndarray
    x_best: np.ndarray
    loss_best: float
    eta: float
    k: float
    iter: int
    loss_trace: list


@dataclass
class AttackResult:
    x_adv: np.ndarray
    loss_best: float
    success: bool
    iterations_used: int
    l1_norm: float
    loss_trace: list
    margin_trace: list = field(default_factory=list)
    zero_grad_steps: int = 0
    phase_starts: tuple = ()
    iterates: list | None = None


def checkpoints(n_iter, fraction=0.04):
    """{m, 2m, ...} ∩ [1, n_iter] with m = ceil(fraction * n_iter)."""
    if n_iter < 1:
        raise ParameterError("n_iter must be >= 1")
    m = math.ceil(fraction * n_iter)
    return set(range(m, n_iter + 1, m))


def sparsity_update(x_best, x, d, divisor=1.5):
    """New sparsity fraction ||x_best - x||_0 / (divisor * d), floored at 1/d."""
    nnz = int(np.count_nonzero(np.asarray(x_best) - np.asarray(x)))
    return max(nnz / (divisor * d), 1.0 / d)


def step_size_update(eta_prev, k_new, k_old, eps, cfg):
    """(new step size, restart flag).

    If the sparsity barely moved (ratio >= rho) the step size decays toward
    eps / eta_min_divisor; otherwise it resets to eps and the iterate
    restarts from the best point found.
    """
    if not k_old > 0.0:
        raise ParameterError("k_old must be positive")
    if k_new / k_old >= cfg.rho:
        return max(eta_prev / cfg.step_decay, eps / cfg.eta_min_divisor), False
    return eps, True


def _random_ascent_gradient(d, rng):
    g = rng.standard_normal(d)
    while not np.any(g):  # absurdly unlikely; keeps the contract total
        g = rng.standard_normal(d)
    return g


def apgd_single(model, loss_kind, target, x, y, tm, cfg, x_init=None, rng=None):
    """One adaptive run of cfg.n_iter projected ascent steps inside tm.

    Exactly one gradient evaluation per iteration. The best-loss iterate is
    returned; with early stopping enabled, the first misclassified iterate
    takes precedence as the returned point. Every iterate is feasible.
    """
    x = as_vector(x, "x")
    d = x.size
    eps = tm.eps
    if rng is None:
        rng = np.random.default_rng(0)
    if x_init is None:
        x_init = x.copy()
    else:
        x_init = as_vector(x_init, "x_init")
        if not tm.contains(x_init):
            raise InvariantViolationError("x_init is outside the threat set")
    marks = checkpoints(cfg.n_iter, cfg.checkpoint_fraction)

    logits0 = model.logits(x_init)
    loss0, _ = _loss_and_upstream(logits0, y, loss_kind, target)
    margin0 = margin_loss(logits0, y)
    state = ApgdState(
        x_cur=x_init.copy(),
        x_best=x_init.copy(),
        loss_best=loss0,
        eta=eps,
        k=cfg.k0,
        iter=0,
        loss_trace=[loss0],
    )
    margin_trace = [margin0]
    margin_best = margin0
    iterates = [x_init.copy()] if cfg.record_iterates else None
    success_point = x_init.copy() if margin0 <= 0.0 else None
    zero_grad_steps = 0
    k_prev_cp = cfg.k0
    k_next = cfg.k0
    eta_pending = state.eta
    iterations = 0

    if not (cfg.early_stop and success_point is not None):
        for i in range(cfg.n_iter):
            at_checkpoint = (i + 1) in marks
            if at_checkpoint:
                k_new = sparsity_update(state.x_best, x, d, cfg.sparsity_divisor)
                eta_pending, restart = step_size_update(
                    state.eta, k_new, k_prev_cp, eps, cfg
                )
                k_prev_cp = k_new
                k_next = k_new
                if restart:
                    state.x_cur = state.x_best.copy()
            _, g = loss_and_grad(model, state.x_cur, y, loss_kind, target)
            if not np.any(g):
                zero_grad_steps += 1
                g = _random_ascent_gradient(d, rng)
            t = min(d, max(1, math.ceil(k_next * d)))
            u = state.x_cur + state.eta * sparse_sign_step(g, t)
            state.x_cur = project_box_l1(u, tm)
            logits_new = model.logits(state.x_cur)
            loss_new, _ = _loss_and_upstream(logits_new, y, loss_kind, target)
            margin_new = margin_loss(logits_new, y)
            state.loss_trace.append(loss_new)
            margin_trace.append(margin_new)
            if iterates is not None:
                iterates.append(state.x_cur.copy())
            if loss_new > state.loss_best:
                state.x_best = state.x_cur.copy()
                state.loss_best = loss_new
                margin_best = margin_new
            iterations = i + 1
            state.iter = iterations
            state.k = k_next
            if at_checkpoint:
                state.eta = eta_pending
            if margin_new <= 0.0 and success_point is None:
                success_point = state.x_cur.copy()
            if cfg.early_stop and margin_new <= 0.0:
                break

    if cfg.early_stop and success_point is not None:
        x_adv = success_point
        success = True
    else:
        x_adv = state.x_best
        success = margin_best <= 0.0
    return AttackResult(
        x_adv=x_adv,
        loss_best=state.loss_best,
        success=success,
        iterations_used=iterations,
        l1_norm=float(np.abs(x_adv - tm.anchor).sum()),
        loss_trace=state.loss_trace,
        margin_trace=margin_trace,
        zero_grad_steps=zero_grad_steps,
        phase_starts=(0,),
        iterates=iterates,
    )


def phase_lengths(n_iter, phases):
    """Floor every phase budget except the last, which takes the remainder."""
    lengths = [int(math.floor(f * n_iter)) for f, _ in phases[:-1]]
    lengths.append(n_iter - sum(lengths))
    if min(lengths) < 1:
        raise ParameterError("n_iter too small for the phase split")
    return lengths


def apgd_multi(model, loss_kind, target, x, y, eps, cfg, rng=None, x_init=None):
    """Shrinking-radius schedule: fresh single-radius runs at (3, 2, 1) * eps.

    Each phase projects the previous phase's output onto its own threat set
    and restarts the adaptive schedule there. Only final-phase iterates are
    feasible for radius eps, so the returned point, best loss and success
    flag come from the final phase alone; traces of all phases are kept with
    their start offsets for the curve outputs.
    """
    if not cfg.phases:
        raise ParameterError("apgd_multi needs a nonempty phase schedule")
    x = as_vector(x, "x")
    lengths = phase_lengths(cfg.n_iter, cfg.phases)
    x_start = x.copy() if x_init is None else as_vector(x_init, "x_init")
    loss_trace = []
    margin_trace = []
    iterates = [] if cfg.record_iterates else None
    phase_starts = []
    iterations = 0
    zero_grad_steps = 0
    result = None
    for p, ((_, mult), length) in enumerate(zip(cfg.phases, lengths)):
        final = p == len(cfg.phases) - 1
        tm_p = ThreatModel(x, mult * eps)
        sub_cfg = replace(
            cfg,
            n_iter=length,
            phases=(),
            early_stop=cfg.early_stop and final,
        )
        start = project_box_l1(x_start, tm_p)
        result = apgd_single(
            model, loss_kind, target, x, y, tm_p, sub_cfg, x_init=start, rng=rng
        )
        phase_starts.append(len(loss_trace))
        loss_trace.extend(result.loss_trace)
        margin_trace.extend(result.margin_trace)
        if iterates is not None:
            iterates.extend(result.iterates)
        iterations += result.iterations_used
        zero_grad_steps += result.zero_grad_steps
        x_start = result.x_adv
    return AttackResult(
        x_adv=result.x_adv,
        loss_best=result.loss_best,
        success=result.success,
        iterations_used=iterations,
        l1_norm=result.l1_norm,
        loss_trace=loss_trace,
        margin_trace=margin_trace,
        zero_grad_steps=zero_grad_steps,
        phase_starts=tuple(phase_starts),
        iterates=iterates,
    )


def _tdlr_targets(clean_logits, y, n_restarts):
    """Targets cycling over the most probable non-true classes."""
    order = np.argsort(-np.asarray(clean_logits), kind="stable")
    others = [int(c) for c in order if c != y]
    return [others[r % len(others)] for r in range(n_restarts)]


def apgd_restarts(
    model, loss_kind, x, y, eps, cfg, n_restarts, rng, clean_logits=None
):
    """Best result over n_restarts runs (multi-radius when cfg.phases is set).

    The first run starts at the clean point, later ones at random feasible
    points. For the targeted DLR loss, restart r targets the (r+1)-th most
    probable class of the clean logits. With early stopping a successful run
    short-circuits the rest. The reported loss_best is the max over executed
    runs; the returned point is from the best run, successes first.
    """
    if n_restarts < 1:
        raise ParameterError("n_restarts must be >= 1")
    x = as_vector(x, "x")
    tm = ThreatModel(x, eps)
    targets = [None] * n_restarts
    if loss_kind == LOSS_DLR_T:
        if clean_logits is None:
            clean_logits = model.logits(x)
        targets = _tdlr_targets(clean_logits, y, n_restarts)

    def _run(target, x_init):
        if cfg.phases:
            return apgd_multi(
                model, loss_kind, target, x, y, eps, cfg, rng=rng, x_init=x_init
            )
        return apgd_single(
            model, loss_kind, target, x, y, tm, cfg, x_init=x_init, rng=rng
        )

    best = None
    best_loss = -np.inf
    iterations = 0
    for r in range(n_restarts):
        x_init = x.copy() if r == 0 else sample_feasible(tm, rng)
        res = _run(targets[r], x_init)
        iterations += res.iterations_used
        best_loss = max(best_loss, res.loss_best)
        if best is None or (res.success, res.loss_best) > (best.success, best.loss_best):
            best = res
        if cfg.early_stop and res.success:
            break
    return replace(best, loss_best=best_loss, iterations_used=iterations)
