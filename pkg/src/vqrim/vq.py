"""Vector quantization: codebook lookup, straight-through passthrough and the generator losses.

Loss conventions
----------------
* ``reconstruction_loss`` is the mean squared error over all elements, i.e. a
  unit-variance Gaussian negative log-likelihood up to constants.
* ``vq_losses`` average ``(z_e - e)^2`` over batch and latent dimensions by
  default (``reduction="mean"``), keeping them on the same scale as the
  reconstruction term. ``reduction="sum"`` averages the full squared distance
  ``||z_e - e||^2`` over the batch instead. The codebook and commitment terms
  have equal values and differ only in which side is held constant when
  differentiating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


class Codebook:
    """``M`` embedding vectors of dimension ``l``.

    ``usage_counts[i]`` holds the number of samples assigned to code ``i`` by
    the most recent call to :meth:`record_usage` (normally one full pass).
    """

    def __init__(self, num_embeddings, dim, rng=None, scale=None):
        if num_embeddings < 1 or dim < 1:
            raise ConfigError("codebook needs at least one vector of positive dimension")
        rng = np.random.default_rng(0) if rng is None else rng
        scale = 1.0 / num_embeddings if scale is None else scale
        self.vectors = rng.uniform(-scale, scale, size=(num_embeddings, dim))
        self.usage_counts = np.zeros(num_embeddings, dtype=np.int64)

    @classmethod
    def from_vectors(cls, vectors):
        vectors = np.array(vectors, dtype=np.float64, ndmin=2)
        book = cls.__new__(cls)
        book.vectors = vectors
        book.usage_counts = np.zeros(len(vectors), dtype=np.int64)
        return book

    @property
    def num_embeddings(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def parameters(self):
        return {"vectors": self.vectors}

    def record_usage(self, indices):
        self.usage_counts = np.bincount(indices, minlength=self.num_embeddings).astype(np.int64)

    def scatter_grad(self, indices, grad_zq):
        """Accumulate per-sample gradients on ``z_q`` into a gradient on the code vectors."""
        grad = np.zeros_like(self.vectors)
        np.add.at(grad, indices, grad_zq)
        return grad


@dataclass
class QuantizationResult:
    indices: np.ndarray  # (N,) code index per sample
    z_q: np.ndarray  # (N, l) copies of codebook rows
    z_e: np.ndarray  # (N, l) encoder outputs
    distances: np.ndarray  # (N, M) squared distances to every code

    @property
    def posterior(self):
        """Deterministic posterior q(z=k|x): one-hot on the nearest code."""
        q = np.zeros_like(self.distances)
        q[np.arange(len(self.indices)), self.indices] = 1.0
        return q


def squared_distances(z, vectors, chunk=256):
    # explicit differences rather than the |a|^2 - 2ab + |b|^2 expansion, so that
    # ties and near-ties resolve exactly as a brute-force scan would
    out = np.empty((z.shape[0], vectors.shape[0]))
    for start in range(0, z.shape[0], chunk):
        diff = z[start:start + chunk, None, :] - vectors[None, :, :]
        out[start:start + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def quantize(z_e, book, record=True):
    """Snap each row of ``z_e`` to its nearest code (ties go to the lowest index)."""
    z_e = np.asarray(z_e, dtype=np.float64)
    if book.num_embeddings == 0:
        raise ConfigError("empty codebook")
    if z_e.ndim != 2 or z_e.shape[1] != book.dim:
        raise ShapeError(f"latent batch has shape {z_e.shape}, codebook dim is {book.dim}")
    d = squared_distances(z_e, book.vectors)
    idx = np.argmin(d, axis=1)  # argmin returns the first minimum
    if record:
        book.record_usage(idx)
    return QuantizationResult(indices=idx, z_q=book.vectors[idx].copy(), z_e=z_e, distances=d)


def _reduction_size(shape, reduction):
    if reduction == "mean":
        return shape[0] * shape[1]
    if reduction == "sum":
        return shape[0]
    raise ConfigError(f"unknown reduction {reduction!r}")


def vq_losses(z_e, z_q, beta=1.0, reduction="mean"):
    """Return ``(codebook_loss, commitment_loss)``."""
    z_e = np.asarray(z_e, dtype=np.float64)
    z_q = np.asarray(z_q, dtype=np.float64)
    if z_e.shape != z_q.shape:
        raise ShapeError(f"z_e {z_e.shape} and z_q {z_q.shape} differ")
    sq = float(np.sum((z_e - z_q) ** 2)) / _reduction_size(z_e.shape, reduction)
    return sq, beta * sq


def vq_loss_grads(z_e, z_q, beta=1.0, reduction="mean"):
    """Gradients of the two VQ terms.

    Returns ``(d codebook_loss / d z_q, d commitment_loss / d z_e)``; the
    codebook term treats ``z_e`` as a constant and the commitment term treats
    ``z_q`` as a constant, so the cross-derivatives are zero by construction.
    """
    diff = np.asarray(z_q, float) - np.asarray(z_e, float)
    n = _reduction_size(diff.shape, reduction)
    return 2.0 * diff / n, -2.0 * beta * diff / n


def straight_through(z_e, z_q):
    """Decoder input for the quantized path.

    The forward value is ``z_q``. On the backward pass the gradient arriving
    at the decoder input is handed unchanged to ``z_e``
    (see :func:`straight_through_backward`).
    """
    if np.shape(z_e) != np.shape(z_q):
        raise ShapeError("z_e and z_q must have the same shape")
    return np.array(z_q, dtype=np.float64, copy=True)


def straight_through_backward(grad_decoder_input):
    return np.array(grad_decoder_input, dtype=np.float64, copy=True)


def reconstruction_loss(x, x_rec):
    x = np.asarray(x, float)
    x_rec = np.asarray(x_rec, float)
    if x.shape != x_rec.shape:
        raise ShapeError(f"x {x.shape} and reconstruction {x_rec.shape} differ")
    return float(np.mean((x - x_rec) ** 2))


def reconstruction_grad(x, x_rec):
    """d reconstruction_loss / d x_rec."""
    x = np.asarray(x, float)
    return 2.0 * (np.asarray(x_rec, float) - x) / x.size
