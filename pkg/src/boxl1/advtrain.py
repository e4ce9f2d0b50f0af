"""Desk-scale adversarial training with the 10-step adaptive attack inside.

Each minibatch is replaced by its inner maximizers (no early stop, k0 = 0.05
by default) before the SGD step. Per-epoch snapshots feed the overfitting
probe, which reports robust accuracy under both the cheap training attack and
a 10x stronger evaluation attack so a gap between the two becomes visible.
"""

from dataclasses import dataclass

import numpy as np

from .apgd import ApgdConfig, apgd_multi, apgd_single
from .errors import ParameterError
from .geometry import ThreatModel
from .models import classifies_correctly, model_copy


@dataclass(frozen=True)
class AtConfig:
    eps_train: float
    inner_steps: int = 10
    k0: float = 0.05
    epochs: int = 10
    lr: float = 0.5
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.inner_steps < 1:
            raise ParameterError("inner_steps must be >= 1")
        if self.eps_train < 0.0:
            raise ParameterError("eps_train must be >= 0")


def adv_train(model, data, cfg, rng, snapshots=None):
    """Min-max training; eps_train = 0 degenerates to plain SGD.

    When a list is passed as snapshots, a copy of the model is appended after
    every epoch. Deterministic under a seeded rng.
    """
    inner_cfg = ApgdConfig(
        n_iter=cfg.inner_steps, k0=cfg.k0, phases=(), early_stop=False
    )
    n = len(data)
    onehot = np.eye(model.num_classes)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = data.inputs[idx]
            if cfg.eps_train > 0.0:
                batch = np.stack(
                    [
                        apgd_single(
                            model,
                            "ce",
                            None,
                            data.inputs[j],
                            int(data.labels[j]),
                            ThreatModel(data.inputs[j], cfg.eps_train),
                            inner_cfg,
                            rng=rng,
                        ).x_adv
                        for j in idx
                    ]
                )
            logits = model.logits(batch)
            m = logits.max(axis=1, keepdims=True)
            p = np.exp(logits - m)
            p /= p.sum(axis=1, keepdims=True)
            upstream = (p - onehot[data.labels[idx]]) / idx.size
            model.apply_grads(model.param_grads(batch, upstream), lr=cfg.lr)
        if snapshots is not None:
            snapshots.append(model_copy(model))
    return model


def robust_accuracy_under(model, data, attack_fn):
    """Fraction of points that stay correctly classified after attack_fn.

    attack_fn(model, x, y) returns an AttackResult; cleanly misclassified
    points count as broken without spending attack budget.
    """
    robust = 0
    for i in range(len(data)):
        x = data.inputs[i]
        y = int(data.labels[i])
        if not classifies_correctly(model.logits(x), y):
            continue
        if not attack_fn(model, x, y).success:
            robust += 1
    return robust / len(data)


def overfitting_probe(
    snapshots,
    train_data,
    test_data,
    eps,
    rng,
    probe_every=1,
    inner_steps=10,
    k0=0.05,
    eval_iters=100,
):
    """Robust accuracy of each snapshot under the training and eval attacks.

    Rows are (epoch, split, attack, robust_accuracy) with attack either
    'train-attack' (inner_steps single-radius, the one used in training) or
    'eval-attack' (eval_iters multi-radius). A widening gap between the two
    curves is the overfitting signature this probe exists to expose.
    """
    train_cfg = ApgdConfig(n_iter=inner_steps, k0=k0, phases=(), early_stop=True)
    eval_cfg = ApgdConfig(n_iter=eval_iters, early_stop=True)

    def train_atk(model, x, y):
        return apgd_single(
            model, "ce", None, x, y, ThreatModel(x, eps), train_cfg, rng=rng
        )

    def eval_atk(model, x, y):
        return apgd_multi(model, "ce", None, x, y, eps, eval_cfg, rng=rng)

    rows = []
    for epoch, snap in enumerate(snapshots, start=1):
        if epoch % probe_every != 0 and epoch != len(snapshots):
            continue
        for split, data in (("train", train_data), ("test", test_data)):
            rows.append((epoch, split, "train-attack", robust_accuracy_under(snap, data, train_atk)))
            rows.append((epoch, split, "eval-attack", robust_accuracy_under(snap, data, eval_atk)))
    return rows
