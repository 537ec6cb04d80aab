"""Finite-difference oracle for the joint-loss gradients used by training.

The analytic side is :func:`vqrim.pipeline.batch_gradients`, the function the
training loops call. The numeric side differentiates a surrogate loss written
directly in numpy: code indices are frozen at the evaluation point and each
stop-gradient is a constant copy, so the surrogate has exactly the gradients
the straight-through estimator defines.
"""

import numpy as np

from vqrim.nn import numerical_gradient, relative_error
from vqrim.pipeline import TrainConfig, VqRimModel, batch_gradients

PARTS = ("encoder", "decoder", "codebook", "discriminator")


def _entropy_rows(p):
    return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=-1)


def _softmax(a):
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def make_instance(seed, disc_input="z_q", input_dim=10, n=6, alpha=0.7, lam=0.1, beta=0.8):
    cfg = TrainConfig(num_embeddings=5, embedding_dim=4, encoder_hidden=6, disc_hidden=5,
                      num_classes=3, dropout=0.0, alpha=alpha, lam=lam, commitment_cost=beta,
                      disc_input=disc_input, seed=seed)
    model = VqRimModel.initialize(input_dim, cfg)
    rng = np.random.default_rng(seed + 1000)
    x = rng.normal(size=(n, input_dim))
    # spread the codes over the range of z_e so several codes are in use
    z_e = model.encoder.forward(x)
    model.codebook.vectors[:] = z_e[rng.choice(n, 5, replace=False)] + 0.05 * rng.normal(size=(5, 4))
    return model, x


def surrogate_loss(model, x, idx, ze0, e0, stop_gradients=True):
    """Joint loss with code indices ``idx`` frozen and stop-gradients as constants.

    ``ze0`` and ``e0`` are the encoder output and selected codes at the
    evaluation point. ``stop_gradients=False`` drops every sg[.] instead.
    """
    cfg = model.config
    z_e = model.encoder.forward(x)
    e = model.codebook.vectors[idx]
    if stop_gradients:
        z_st = z_e + (e0 - ze0)  # value z_q, derivative 1 w.r.t. z_e, none w.r.t. e
        cb = np.mean((ze0 - e) ** 2)
        commit = cfg.commitment_cost * np.mean((z_e - e0) ** 2)
    else:
        z_st = e
        cb = np.mean((z_e - e) ** 2)
        commit = cfg.commitment_cost * np.mean((z_e - e) ** 2)
    recon = np.mean((x - model.decoder.forward(z_st)) ** 2)
    disc_in = z_st if cfg.disc_input == "z_q" else z_e
    p = _softmax(model.discriminator.net.forward(disc_in))
    weights = [layer.weight for layer in model.discriminator.net.layers]
    j = (_entropy_rows(p.mean(axis=0)) - cfg.alpha * np.mean(_entropy_rows(p))
         - 0.5 * cfg.lam * sum(np.sum(w * w) for w in weights))
    return float(recon + cb + commit - j)


def check_paths(seed, disc_input="z_q", stop_gradients=True, step=1e-5):
    """Relative error between training gradients and finite differences, per model part."""
    model, x = make_instance(seed, disc_input)
    _, grads = batch_gradients(model, x, training=False, with_rim=True)
    z_e = model.encoder.forward(x)
    d = ((z_e[:, None, :] - model.codebook.vectors[None]) ** 2).sum(-1)
    idx = np.argmin(d, axis=1)
    e0 = model.codebook.vectors[idx].copy()

    def f():
        return surrogate_loss(model, x, idx, z_e, e0, stop_gradients)

    errors = {}
    for part in PARTS:
        errors[part] = max(relative_error(grads[name], numerical_gradient(f, arr, step))
                           for name, arr in model.named_parameters((part,)).items())
    return errors
