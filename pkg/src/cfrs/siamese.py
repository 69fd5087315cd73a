"""Siamese training: contrastive loss, ADAM, and embedding similarity."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .errors import ParameterError, TrainingError
from .network import EmbeddingNet, NetworkParams, prepare_input

log = logging.getLogger(__name__)

SIMILARITY_EPS = 1e-6


@dataclass(frozen=True)
class ContrastiveConfig:
    margin: float = 1.0

    def __post_init__(self):
        if not self.margin > 0:
            raise ParameterError(f"margin must be positive, got {self.margin}")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 70
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ParameterError("ADAM betas must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")


def contrastive_loss(e1: np.ndarray, e2: np.ndarray, same_class: bool,
                     cfg: ContrastiveConfig = ContrastiveConfig()) -> float:
    """Half squared distance for genuine pairs, half squared hinge for impostors."""
    d = float(np.linalg.norm(np.asarray(e1, float) - np.asarray(e2, float)))
    if same_class:
        return 0.5 * d * d
    h = max(0.0, cfg.margin - d)
    return 0.5 * h * h


def similarity(e1: np.ndarray, e2: np.ndarray) -> float:
    """S_d = 1 / (D_w + eps)."""
    d = float(np.linalg.norm(np.asarray(e1, float) - np.asarray(e2, float)))
    return 1.0 / (d + SIMILARITY_EPS)


def batch_contrastive(emb: np.ndarray, pairs: Sequence[tuple[int, int, bool]],
                      cfg: ContrastiveConfig = ContrastiveConfig()) -> tuple[float, np.ndarray]:
    """Mean loss over ``(a, b, same)`` index pairs into ``emb`` and its gradient."""
    grad = np.zeros_like(emb)
    total = 0.0
    for a, b, same in pairs:
        diff = emb[a] - emb[b]
        d = float(np.sqrt(np.dot(diff, diff)))
        if same:
            total += 0.5 * d * d
            g = diff
        elif d < cfg.margin:
            total += 0.5 * (cfg.margin - d) ** 2
            # d/d(e_a) of 0.5 (m - d)^2 = -(m - d) diff / d
            g = -(cfg.margin - d) / d * diff if d > 0 else np.zeros_like(diff)
        else:
            continue
        grad[a] += g
        grad[b] -= g
    n = max(len(pairs), 1)
    return total / n, grad / n


class Adam:
    """ADAM with bias correction, updating parameter arrays in place."""

    def __init__(self, params: NetworkParams, cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.t = 0
        names = params.spec.trainable()
        self.m = {k: np.zeros_like(params[k]) for k in names}
        self.v = {k: np.zeros_like(params[k]) for k in names}

    def step(self, params: NetworkParams, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, g in grads.items():
            m, v, p = self.m[name], self.v[name], params.tensors[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            denom = np.sqrt(v)
            denom /= np.sqrt(bc2)
            denom += c.eps
            np.divide(m, denom, out=denom)
            denom *= c.lr / bc1
            p -= denom


def _first_nonfinite(named: list[tuple[str, np.ndarray]]) -> str | None:
    for name, arr in named:
        if not np.all(np.isfinite(arr)):
            return name
    return None


def backward_and_step(net: EmbeddingNet, adam: Adam, images: np.ndarray,
                      pairs: Sequence[tuple[int, int, bool]],
                      cfg: ContrastiveConfig = ContrastiveConfig()) -> float:
    """One optimisation step over a group of images and the pairs drawn from it.

    Both members of every pair go through the same parameters, so gradients
    from the two siamese branches sum into the shared tensors.
    """
    params = net.params
    params.training = True
    emb = net.forward(images)
    loss, d_emb = batch_contrastive(emb.astype(np.float64), pairs, cfg)
    bad = _first_nonfinite([("input", images), ("embeddings", emb)])
    if bad is None and not np.isfinite(loss):
        bad = "loss"
    if bad is not None:
        raise TrainingError(f"non-finite values in {bad}")
    grads = net.backward(d_emb.astype(params.dtype))
    bad = _first_nonfinite([(f"grad[{k}]", grads[k]) for k in params.spec.trainable()])
    if bad is not None:
        raise TrainingError(f"non-finite values in {bad}")
    adam.step(params, grads)
    bad = _first_nonfinite([(k, params[k]) for k, _ in params.spec.param_shapes()])
    if bad is not None:
        raise TrainingError(f"non-finite values in {bad}")
    return loss


def epoch_batches(finger_ids: Sequence, impressions: dict, batch_size: int,
                  rng: np.random.Generator) -> list[tuple[list, list[tuple[int, int, bool]]]]:
    """Group fingers into steps of about ``batch_size`` images.

    Each step scores every genuine pair among its images plus an equal number
    of cross-finger pairs sampled without replacement.
    """
    order = [finger_ids[i] for i in rng.permutation(len(finger_ids))]
    per = max(len(impressions[f]) for f in order) if order else 1
    fpb = max(2, batch_size // per)
    groups = [order[i:i + fpb] for i in range(0, len(order), fpb)]
    if len(groups) > 1 and len(groups[-1]) < 2:
        tail = groups.pop()
        groups[-1] += tail
    out = []
    for group in groups:
        items = [(f, k) for f in group for k in range(len(impressions[f]))]
        genuine = [(a, b, True) for a, b in combinations(range(len(items)), 2)
                   if items[a][0] == items[b][0]]
        cross = [(a, b, False) for a, b in combinations(range(len(items)), 2)
                 if items[a][0] != items[b][0]]
        n_imp = min(len(genuine), len(cross)) if genuine else len(cross)
        pick = rng.choice(len(cross), size=n_imp, replace=False) if cross else []
        pairs = genuine + [cross[i] for i in sorted(pick)]
        out.append((items, pairs))
    return out


def train(params: NetworkParams, impressions: dict, acfg: AdamConfig = AdamConfig(),
          ccfg: ContrastiveConfig = ContrastiveConfig(),
          on_epoch: Callable[[int, float], None] | None = None) -> list[float]:
    """Train in place on ``{finger_id: [image, ...]}``; returns per-epoch mean loss."""
    fingers = sorted(impressions)
    if len(fingers) < 2:
        raise ParameterError("training needs at least two fingers")
    rng = np.random.default_rng(acfg.seed)
    net = EmbeddingNet(params)
    adam = Adam(params, acfg)
    prepared = {f: [prepare_input(im, params.dtype) for im in impressions[f]] for f in fingers}
    history = []
    for epoch in range(acfg.epochs):
        losses, weights = [], []
        for items, pairs in epoch_batches(fingers, prepared, acfg.batch_size, rng):
            batch = np.stack([prepared[f][k] for f, k in items])
            losses.append(backward_and_step(net, adam, batch, pairs, ccfg))
            weights.append(len(pairs))
        mean = float(np.average(losses, weights=weights))
        history.append(mean)
        log.info("epoch %d/%d loss %.6f", epoch + 1, acfg.epochs, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    params.training = False
    return history
