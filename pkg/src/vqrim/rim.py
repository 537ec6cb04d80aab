"""Regularized information maximization head.

The discriminator maps latents to ``K~`` logits. The objective to maximize is

    J = H(P(y)) - alpha * H(y|x) - lam/2 * sum(w**2)

with ``P(y)`` the batch mean of the predicted rows and ``H(y|x)`` the mean
per-row entropy (natural logs, ``0 log 0 = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .errors import ConfigError, DegenerateClusteringError
from .nn import FeedForwardNet


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def entropy(p):
    """Entropy (nats) of a probability vector, or of each row of a matrix."""
    return -np.sum(xlogy(p, p), axis=-1)


def marginal_entropy(probs):
    return float(entropy(np.asarray(probs, float).mean(axis=0)))


def conditional_entropy(probs):
    return float(np.mean(entropy(np.asarray(probs, float))))


def weight_penalty(weights, lam):
    """R(lam) = lam/2 * sum of squared weights."""
    if lam == 0:
        return 0.0
    return 0.5 * lam * float(sum(np.sum(w * w) for w in weights))


def rim_objective(probs, alpha=1.0, weights=(), lam=0.0):
    if alpha < 0 or lam < 0:
        raise ConfigError("alpha and lambda must be non-negative")
    return marginal_entropy(probs) - alpha * conditional_entropy(probs) - weight_penalty(weights, lam)


def rim_grad_logits(logits, alpha=1.0):
    """d J / d logits for the entropy part of :func:`rim_objective`."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    n = p.shape[0]
    log_marg = np.log(np.maximum(p.mean(axis=0), np.finfo(float).tiny))
    # dJ/dp_ik; the "+1" terms are constant along each row and vanish through the softmax
    g = (alpha * logp - log_marg[None, :]) / n
    return p * (g - np.sum(p * g, axis=1, keepdims=True))


class Discriminator:
    """Softmax classifier over ``num_classes`` outputs on top of latent vectors."""

    def __init__(self, latent_dim, num_classes, hidden=(64,), dropout=0.0, rng=None):
        if num_classes < 1:
            raise ConfigError("discriminator needs at least one class")
        self.num_classes = int(num_classes)
        self.net = FeedForwardNet([latent_dim, *hidden, num_classes], dropout=dropout, rng=rng)

    def logits(self, z, training=False, rng=None):
        return self.net.forward(z, training=training, rng=rng)

    def predict_proba(self, z):
        return softmax(self.logits(z))


def predict_proba(disc, z):
    return disc.predict_proba(z)


@dataclass
class ClusterAssignment:
    probs: np.ndarray  # (N, K~) row-stochastic
    hard_label: np.ndarray  # (N,)
    code_index: np.ndarray  # (N,)
    active_mask: np.ndarray  # (K~,) bool

    @property
    def n_clusters(self):
        return int(np.count_nonzero(self.active_mask))

    @classmethod
    def from_probs(cls, probs, code_index=None, active_mask=None):
        probs = np.asarray(probs, dtype=np.float64)
        mask = np.ones(probs.shape[1], bool) if active_mask is None else np.asarray(active_mask, bool)
        masked = np.where(mask[None, :], probs, -np.inf)
        labels = np.argmax(masked, axis=1)
        if code_index is None:
            code_index = np.full(len(probs), -1)
        return cls(probs=probs, hard_label=labels, code_index=np.asarray(code_index), active_mask=mask)


def eq4_assignment(quant):
    """Hard labels from the deterministic code posterior: each sample's label is its code index."""
    return np.asarray(quant.indices).copy()


def eq4_probs(quant, num_classes=None):
    """Row-normalized deterministic posterior: all mass on the nearest code."""
    q = quant.posterior
    if num_classes is not None and num_classes > q.shape[1]:
        q = np.pad(q, ((0, 0), (0, num_classes - q.shape[1])))
    return q / q.sum(axis=1, keepdims=True)


def prune_inactive(assign, eps):
    """Deactivate classes whose marginal mass falls below ``eps`` and renormalize.

    Pruning only ever removes classes: previously inactive classes stay off.
    """
    if not 0.0 <= eps < 1.0:
        raise ConfigError(f"eps must lie in [0, 1), got {eps}")
    mass = assign.probs.mean(axis=0)
    if eps == 0.0:
        keep = mass > 0.0
    else:
        keep = mass >= eps
    mask = assign.active_mask & keep
    if not mask.any():
        raise DegenerateClusteringError(
            f"all classes carry less than eps={eps:g} of the mass; "
            "use a smaller eps or a larger alpha")
    probs = np.where(mask[None, :], assign.probs, 0.0)
    row_sums = probs.sum(axis=1, keepdims=True)
    # rows with no mass on any surviving class fall back to the masked argmax one-hot
    empty = row_sums[:, 0] <= 0.0
    if empty.any():
        fallback = np.argmax(np.where(mask[None, :], assign.probs, -np.inf), axis=1)
        probs[empty] = 0.0
        probs[empty, fallback[empty]] = 1.0
        row_sums = probs.sum(axis=1, keepdims=True)
    probs = probs / row_sums
    return ClusterAssignment.from_probs(probs, code_index=assign.code_index, active_mask=mask)
