"""Losses, analytic gradients and self-contained toy classifiers.

The attack modules only see the LogitsOracle interface: logits plus an exact
transpose-Jacobian product for the input gradient. Two trainable models are
provided (linear softmax and a softplus MLP), both in float64 so gradient
checks can run at tight tolerances, plus a radial benchmark model whose
margin loss is a concave bowl. Nothing here depends on an ML framework.
"""

import abc
import copy
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvariantViolationError, ParameterError

LOSS_CE = "ce"
LOSS_DLR_T = "dlr-t"
LOSS_MARGIN = "margin"
LOSS_KINDS = (LOSS_CE, LOSS_DLR_T, LOSS_MARGIN)

_DLR_DENOM_FLOOR = 1e-12


class LogitsOracle(abc.ABC):
    """Pluggable classifier: logits and exact input-gradient products.

    logits() accepts a single (d,) point or a (B, d) batch; grad_input()
    computes J(x)^T upstream for a single point.
    """

    num_classes: int
    input_dim: int

    @abc.abstractmethod
    def logits(self, x):
        ...

    @abc.abstractmethod
    def grad_input(self, x, upstream):
        ...


def _softplus(a):
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


class LinearSoftmaxModel(LogitsOracle):
    """logits = W x + b."""

    def __init__(self, W, b):
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.size:
            raise DimensionMismatchError("W must be (K, d) with b of length K")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InvariantViolationError("parameters must be finite")
        self.W = W
        self.b = b
        self.num_classes = W.shape[0]
        self.input_dim = W.shape[1]

    @classmethod
    def initialized(cls, input_dim, num_classes, rng):
        W = rng.normal(0.0, 1.0 / math.sqrt(input_dim), size=(num_classes, input_dim))
        return cls(W, np.zeros(num_classes))

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.W @ x + self.b
        return x @ self.W.T + self.b

    def grad_input(self, x, upstream):
        return self.W.T @ np.asarray(upstream, dtype=np.float64)

    def param_grads(self, X, upstream):
        X = np.atleast_2d(X)
        U = np.atleast_2d(upstream)
        return [U.T @ X, U.sum(axis=0)]

    def apply_grads(self, grads, lr):
        self.W -= lr * grads[0]
        self.b -= lr * grads[1]

    def copy(self):
        return LinearSoftmaxModel(self.W.copy(), self.b.copy())


class MlpModel(LogitsOracle):
    """Fully connected net with softplus hidden activations and linear head.

    Softplus keeps the input gradient smooth everywhere, so central finite
    differences agree with the analytic gradient at tight tolerances.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or len(weights) < 2:
            raise DimensionMismatchError("need at least one hidden layer")
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for W, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise InvariantViolationError("parameters must be finite")
        self.input_dim = self.weights[0].shape[1]
        self.num_classes = self.weights[-1].shape[0]

    @classmethod
    def initialized(cls, sizes, rng):
        if len(sizes) < 3:
            raise DimensionMismatchError("sizes must include a hidden layer")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def _forward(self, X):
        pre = []
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = h @ W.T + b
            pre.append(a)
            h = _softplus(a)
        out = h @ self.weights[-1].T + self.biases[-1]
        return pre, out

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        _, out = self._forward(np.atleast_2d(x))
        return out[0] if single else out

    def grad_input(self, x, upstream):
        x = np.asarray(x, dtype=np.float64)
        pre, _ = self._forward(x[None, :])
        delta = np.asarray(upstream, dtype=np.float64)[None, :]
        for layer in range(len(self.weights) - 1, 0, -1):
            delta = (delta @ self.weights[layer]) * _sigmoid(pre[layer - 1])
        return (delta @ self.weights[0])[0]

    def param_grads(self, X, upstream):
        X = np.atleast_2d(X)
        U = np.atleast_2d(upstream)
        pre, _ = self._forward(X)
        acts = [X] + [_softplus(a) for a in pre]
        grads = [None] * (2 * len(self.weights))
        delta = U
        for layer in range(len(self.weights) - 1, -1, -1):
            grads[2 * layer] = delta.T @ acts[layer]
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer]) * _sigmoid(pre[layer - 1])
        return grads

    def apply_grads(self, grads, lr):
        for layer in range(len(self.weights)):
            self.weights[layer] -= lr * grads[2 * layer]
            self.biases[layer] -= lr * grads[2 * layer + 1]

    def copy(self):
        return MlpModel([W.copy() for W in self.weights], [b.copy() for b in self.biases])


class NegativeDistanceModel(LogitsOracle):
    """Two-class benchmark: logits = (0, -||x - target||^2).

    Its margin loss at y = 1 is the concave bowl -||x - target||^2, which
    makes it a closed-form testbed for the attack loops.
    """

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)
        self.input_dim = self.target.size
        self.num_classes = 2

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return np.array([0.0, -float(np.sum((x - self.target) ** 2))])
        sq = -np.sum((x - self.target) ** 2, axis=1)
        return np.stack([np.zeros_like(sq), sq], axis=1)

    def grad_input(self, x, upstream):
        return upstream[1] * (-2.0) * (np.asarray(x, dtype=np.float64) - self.target)


class CountingModel(LogitsOracle):
    """Wrapper that counts forward (logits) and backward (grad_input) calls."""

    def __init__(self, inner):
        self.inner = inner
        self.num_classes = inner.num_classes
        self.input_dim = inner.input_dim
        self.forwards = 0
        self.backwards = 0

    def logits(self, x):
        x = np.asarray(x)
        self.forwards += 1 if x.ndim == 1 else x.shape[0]
        return self.inner.logits(x)

    def grad_input(self, x, upstream):
        self.backwards += 1
        return self.inner.grad_input(x, upstream)

    def reset(self):
        self.forwards = 0
        self.backwards = 0


def cross_entropy(logits, y):
    """-log softmax(logits)_y via the log-sum-exp trick; always >= 0."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= y < logits.size:
        raise ParameterError(f"label {y} out of range for {logits.size} classes")
    m = logits.max()
    lse = m + math.log(np.exp(logits - m).sum())
    return float(lse - logits[y])


def margin_loss(logits, y):
    """z_y minus the best other logit; negative iff misclassified, 0 on ties."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= y < logits.size:
        raise ParameterError(f"label {y} out of range for {logits.size} classes")
    others = np.delete(logits, y)
    return float(logits[y] - others.max())


def classifies_correctly(logits, y):
    """Tie rule: a shared maximum counts as not correctly classified."""
    return margin_loss(logits, y) > 0.0


def dlr_targeted(logits, y, t):
    """Targeted difference-of-logits-ratio loss.

    -(z_y - z_t) / (z_(1) - (z_(3) + z_(4)) / 2) with z_(i) the i-th largest
    logit; invariant under positive scaling and shifts of the logits. The
    denominator is floored at 1e-12. The formula follows the AutoAttack
    convention and needs at least four classes.
    """
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.size
    if k < 4:
        raise ParameterError("dlr-t needs at least 4 classes")
    if not (0 <= y < k and 0 <= t < k) or t == y:
        raise ParameterError("need valid target t != y")
    srt = np.sort(logits)[::-1]
    denom = srt[0] - (srt[2] + srt[3]) / 2.0
    return float(-(logits[y] - logits[t]) / max(denom, _DLR_DENOM_FLOOR))


def _loss_and_upstream(logits, y, loss_kind, target):
    """Loss value and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.size
    if loss_kind == LOSS_CE:
        value = cross_entropy(logits, y)
        m = logits.max()
        p = np.exp(logits - m)
        p /= p.sum()
        up = p.copy()
        up[y] -= 1.0
        return value, up
    if loss_kind == LOSS_MARGIN:
        value = margin_loss(logits, y)
        others = np.delete(logits, y)
        j = int(np.argmax(others))
        j = j if j < y else j + 1
        up = np.zeros(k)
        up[y] = 1.0
        up[j] = -1.0
        return value, up
    if loss_kind == LOSS_DLR_T:
        if target is None:
            raise ParameterError("dlr-t requires a target class")
        value = dlr_targeted(logits, y, target)
        order = np.argsort(-logits, kind="stable")
        num = -(logits[y] - logits[target])
        denom = logits[order[0]] - (logits[order[2]] + logits[order[3]]) / 2.0
        dnum = np.zeros(k)
        dnum[y] -= 1.0
        dnum[target] += 1.0
        if denom > _DLR_DENOM_FLOOR:
            ddenom = np.zeros(k)
            ddenom[order[0]] += 1.0
            ddenom[order[2]] -= 0.5
            ddenom[order[3]] -= 0.5
            up = (dnum * denom - num * ddenom) / denom**2
        else:
            up = dnum / _DLR_DENOM_FLOOR
        return value, up
    raise ParameterError(f"unknown loss kind {loss_kind!r}")


def loss_and_grad(model, x, y, loss_kind, target=None):
    """Loss value and exact analytic input gradient at x."""
    logits = model.logits(x)
    value, up = _loss_and_upstream(logits, y, loss_kind, target)
    return value, model.grad_input(x, up)


def loss_value(model, x, y, loss_kind, target=None):
    logits = model.logits(x)
    value, _ = _loss_and_upstream(logits, y, loss_kind, target)
    return value


def finite_diff_grad(model, x, y, loss_kind, h=1e-5, target=None):
    """Central-difference input gradient; O(d) loss evaluations per call."""
    if not h > 0.0:
        raise ParameterError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        grad[i] = (
            loss_value(model, xp, y, loss_kind, target)
            - loss_value(model, xm, y, loss_kind, target)
        ) / (2.0 * h)
    return grad


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.size:
            raise DimensionMismatchError("inputs must be (n, d) matching labels")
        if self.labels.size and self.labels.max() >= self.num_classes:
            raise InvariantViolationError("label out of range")

    def __len__(self):
        return self.labels.size


def make_blobs(d, n, num_classes, margin, rng, noise_std=None):
    """Gaussian blobs in [0,1]^d with pairwise l1 class separation >= margin.

    Class centers sit at 0.5 +/- 0.4 per coordinate: every class flips its
    own disjoint block of coordinates in a shared random sign pattern, so any
    two centers differ in exactly 2*block coordinates and the pairwise l1
    separation is exactly 1.6 * block >= margin (margin is controlled, not
    just bounded). Samples are clipped to the box and labels are assigned
    round-robin so classes stay balanced within one.
    """
    if margin <= 0.0:
        raise ParameterError("margin must be positive")
    if num_classes < 2:
        raise ParameterError("need at least two classes")
    block = math.ceil(margin / 1.6)
    if num_classes * block > d:
        raise ParameterError(
            f"margin {margin} with {num_classes} classes not achievable in d={d}"
        )
    base = rng.choice([-1.0, 1.0], size=d)
    signs = np.tile(base, (num_classes, 1))
    for c in range(num_classes):
        signs[c, c * block : (c + 1) * block] *= -1.0
    centers = 0.5 + 0.4 * signs
    if noise_std is None:
        noise_std = margin / (10.0 * d)
    labels = np.arange(n) % num_classes
    inputs = centers[labels] + rng.normal(0.0, noise_std, size=(n, d))
    np.clip(inputs, 0.0, 1.0, out=inputs)
    return LabeledDataset(inputs=inputs, labels=labels, num_classes=num_classes)


def train_plain(model, data, epochs, lr, rng, batch_size=32):
    """Minibatch SGD on cross-entropy; deterministic under a seeded rng."""
    n = len(data)
    onehot = np.eye(model.num_classes)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            X = data.inputs[idx]
            logits = model.logits(X)
            m = logits.max(axis=1, keepdims=True)
            p = np.exp(logits - m)
            p /= p.sum(axis=1, keepdims=True)
            upstream = (p - onehot[data.labels[idx]]) / idx.size
            model.apply_grads(model.param_grads(X, upstream), lr)
    return model


def accuracy(model, data):
    """Fraction of points classified correctly under the tie rule."""
    logits = model.logits(data.inputs)
    correct = [
        classifies_correctly(logits[i], int(data.labels[i])) for i in range(len(data))
    ]
    return float(np.mean(correct)) if len(data) else 0.0


def model_copy(model):
    if hasattr(model, "copy"):
        return model.copy()
    return copy.deepcopy(model)
