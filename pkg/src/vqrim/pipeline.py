"""VQ-RIM model, two-phase training schedule and checkpoints.

Training runs in two phases:

1. ``pretrain`` fits the VQ autoencoder alone (reconstruction + codebook +
   commitment terms) with plain Adam.
2. ``finetune`` adds the discriminator and minimizes

       recon + codebook + beta*commitment - (H(P(y)) - alpha*H(y|x) - R(lam))

   with AdamW.

The decoder reads the quantized latent ``z_q`` through a straight-through
passthrough. By default the discriminator reads ``z_q`` the same way, so its
softmax is constant within each code and every class is carried by codes in
use; ``disc_input="z_e"`` feeds it the continuous encoder output instead.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import rim, vq
from .errors import CheckpointError, ConfigError, InputError, TrainingError
from .nn import Adam, FeedForwardNet
from .rim import ClusterAssignment, Discriminator

log = logging.getLogger(__name__)

FINETUNE_LR = math.e * 1e-5


@dataclass
class TrainConfig:
    epochs: int = 200
    pretrain_epochs: int | None = None  # defaults to ``epochs``
    batch_size: int = 32
    pretrain_lr: float = 1e-4
    finetune_lr: float = FINETUNE_LR
    disc_lr: float | None = 1e-3  # None: same as finetune_lr
    codebook_lr_scale: float = 1.0  # codebook step size relative to the phase learning rate
    num_embeddings: int = 64
    embedding_dim: int = 64
    encoder_hidden: int = 512
    disc_hidden: int = 64
    commitment_cost: float = 1.0
    dropout: float = 0.5
    alpha: float = 1.0
    lam: float = 0.0
    weight_decay: float = 0.01
    num_classes: int = 16
    eps: float | None = None  # defaults to 1 / (2 * num_classes)
    freeze_generator: bool = False
    disc_input: str = "z_q"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("epochs", "batch_size", "num_embeddings", "embedding_dim",
                     "encoder_hidden", "disc_hidden", "num_classes"):
            value = getattr(self, name)
            minimum = 0 if name == "epochs" else 1
            if int(value) != value or value < minimum:
                raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
        if self.pretrain_epochs is not None and self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be non-negative")
        for name in ("pretrain_lr", "finetune_lr", "disc_lr", "codebook_lr_scale"):
            if name == "disc_lr" and self.disc_lr is None:
                continue
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        for name in ("commitment_cost", "alpha", "lam", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.eps is not None and not 0.0 <= self.eps < 1.0:
            raise ConfigError("eps must lie in [0, 1)")
        if self.disc_input not in ("z_q", "z_e"):
            raise ConfigError(f"disc_input must be 'z_q' or 'z_e', got {self.disc_input!r}")

    @property
    def n_pretrain_epochs(self):
        return self.epochs if self.pretrain_epochs is None else self.pretrain_epochs

    @property
    def prune_eps(self):
        return 1.0 / (2 * self.num_classes) if self.eps is None else self.eps

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def substream(seed, name):
    """Independent generator for a named component derived from one root seed."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),))))


@dataclass
class VqRimModel:
    config: TrainConfig
    input_dim: int
    encoder: FeedForwardNet
    decoder: FeedForwardNet
    codebook: vq.Codebook
    discriminator: Discriminator
    rngs: dict
    optimizers: dict = field(default_factory=dict)
    phase: str = "init"
    epoch: int = 0
    history: dict = field(default_factory=lambda: {"pretrain": [], "finetune": []})

    @classmethod
    def initialize(cls, input_dim, cfg):
        if cfg.embedding_dim >= input_dim:
            log.warning("latent dim %d is not smaller than input dim %d", cfg.embedding_dim, input_dim)
        init = substream(cfg.seed, "init")
        encoder = FeedForwardNet([input_dim, cfg.encoder_hidden, cfg.embedding_dim],
                                 dropout=cfg.dropout, rng=init)
        decoder = FeedForwardNet([cfg.embedding_dim, cfg.encoder_hidden, input_dim],
                                 dropout=cfg.dropout, rng=init)
        codebook = vq.Codebook(cfg.num_embeddings, cfg.embedding_dim, rng=init)
        disc = Discriminator(cfg.embedding_dim, cfg.num_classes, hidden=(cfg.disc_hidden,), rng=init)
        rngs = {"shuffle": substream(cfg.seed, "shuffle"), "dropout": substream(cfg.seed, "dropout")}
        return cls(config=cfg, input_dim=int(input_dim), encoder=encoder, decoder=decoder,
                   codebook=codebook, discriminator=disc, rngs=rngs)

    def named_parameters(self, parts=("encoder", "decoder", "codebook", "discriminator")):
        params = {}
        sources = {"encoder": self.encoder.parameters(), "decoder": self.decoder.parameters(),
                   "codebook": self.codebook.parameters(),
                   "discriminator": self.discriminator.net.parameters()}
        for part in parts:
            for name, arr in sources[part].items():
                params[f"{part}.{name}"] = arr
        return params

    def encode(self, x):
        return self.encoder.forward(np.asarray(x, float))

    def quantize(self, x, record=False):
        return vq.quantize(self.encode(x), self.codebook, record=record)

    def reconstruct(self, x):
        return self.decoder.forward(self.quantize(x).z_q)

    def disc_input(self, quant):
        return quant.z_q if self.config.disc_input == "z_q" else quant.z_e

    def predict_proba(self, x):
        return self.discriminator.predict_proba(self.disc_input(self.quantize(x)))

    def assign(self, x, prune=True):
        """Cluster assignment of every row of ``x`` (inference mode)."""
        quant = vq.quantize(self.encode(x), self.codebook, record=True)
        probs = self.discriminator.predict_proba(self.disc_input(quant))
        out = ClusterAssignment.from_probs(probs, code_index=quant.indices)
        return rim.prune_inactive(out, self.config.prune_eps) if prune else out


def _check_data(x, model=None):
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise InputError(f"expected a non-empty 2-d data matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("data contains non-finite values")
    if model is not None and x.shape[1] != model.input_dim:
        raise InputError(f"data has {x.shape[1]} features, model expects {model.input_dim}")
    return x


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def joint_loss_terms(model, x, training=False):
    """Evaluate every term of the joint loss on ``x`` (inference mode by default)."""
    cfg = model.config
    x = _check_data(x, model)
    z_e = model.encoder.forward(x, training=training, rng=model.rngs["dropout"])
    quant = vq.quantize(z_e, model.codebook, record=False)
    x_rec = model.decoder.forward(vq.straight_through(z_e, quant.z_q), training=training,
                                  rng=model.rngs["dropout"])
    probs = rim.softmax(model.discriminator.logits(model.disc_input(quant)))
    codebook_loss, commitment_loss = vq.vq_losses(z_e, quant.z_q, cfg.commitment_cost)
    terms = {
        "reconstruction": vq.reconstruction_loss(x, x_rec),
        "codebook": codebook_loss,
        "commitment": commitment_loss,
        "marginal_entropy": rim.marginal_entropy(probs),
        "conditional_entropy": rim.conditional_entropy(probs),
        "weight_penalty": rim.weight_penalty(model.discriminator.net.weight_arrays(), cfg.lam),
    }
    terms["total"] = (terms["reconstruction"] + terms["codebook"] + terms["commitment"]
                      - (terms["marginal_entropy"] - cfg.alpha * terms["conditional_entropy"]
                         - terms["weight_penalty"]))
    return terms


def _generator_step(model, x, training):
    """Forward/backward through encoder -> quantizer -> decoder.

    Returns the loss values, the encoder-output gradient accumulated so far,
    parameter gradients for decoder and codebook, and the latent batch.
    """
    cfg = model.config
    drop = model.rngs["dropout"]
    z_e = model.encoder.forward(x, training=training, rng=drop)
    quant = vq.quantize(z_e, model.codebook, record=False)
    x_rec = model.decoder.forward(vq.straight_through(z_e, quant.z_q), training=training, rng=drop)
    recon = vq.reconstruction_loss(x, x_rec)
    cb_loss, commit_loss = vq.vq_losses(z_e, quant.z_q, cfg.commitment_cost)
    dec_grads, g_dec_in = model.decoder.backward(vq.reconstruction_grad(x, x_rec))
    g_zq_cb, g_ze_commit = vq.vq_loss_grads(z_e, quant.z_q, cfg.commitment_cost)
    g_ze = vq.straight_through_backward(g_dec_in) + g_ze_commit
    grads = {f"decoder.{k}": v for k, v in dec_grads.items()}
    grads["codebook.vectors"] = model.codebook.scatter_grad(quant.indices, g_zq_cb)
    losses = {"reconstruction": recon, "codebook": cb_loss, "commitment": commit_loss}
    return losses, quant, g_ze, grads


def batch_gradients(model, xb, training=True, with_rim=False, generator=True, where=None):
    """Loss values and parameter gradients for one minibatch.

    Gradients are those of the minimized objective: generator losses, minus
    the RIM objective when ``with_rim``. Keys follow
    :meth:`VqRimModel.named_parameters`. ``generator=False`` skips the
    encoder/decoder/codebook gradients (frozen generator). ``where`` is
    ``(phase, epoch, batch)`` for error messages.
    """
    cfg = model.config
    losses, quant, g_ze, grads = _generator_step(model, xb, training=training)
    if not generator:
        grads = {}
    if with_rim:
        disc = model.discriminator
        logits = disc.logits(model.disc_input(quant))
        weights = disc.net.weight_arrays()
        losses["rim"] = -rim.rim_objective(rim.softmax(logits), cfg.alpha, weights, cfg.lam)
    _check_finite(losses, *(where or ("batch", 0, 0)))
    if with_rim:
        disc_grads, g_disc_in = disc.net.backward(-rim.rim_grad_logits(logits, cfg.alpha))
        if cfg.lam:
            for i, w in enumerate(weights):
                disc_grads[f"{i}.weight"] = disc_grads[f"{i}.weight"] + cfg.lam * w
        grads.update({f"discriminator.{k}": v for k, v in disc_grads.items()})
        if generator:
            # through z_q the straight-through path hands the gradient to z_e unchanged
            if cfg.disc_input == "z_q":
                g_disc_in = vq.straight_through_backward(g_disc_in)
            g_ze = g_ze + g_disc_in
    if generator:
        enc_grads, _ = model.encoder.backward(g_ze)
        grads.update({f"encoder.{k}": v for k, v in enc_grads.items()})
    return losses, grads


def _check_finite(losses, phase, epoch, batch):
    for name, value in losses.items():
        if not np.isfinite(value):
            raise TrainingError(f"non-finite {name} loss in {phase} epoch {epoch} batch {batch}")


def _make_generator_optimizers(model, phase, lr, **kw):
    model.optimizers[phase] = Adam(lr=lr, **kw)
    model.optimizers[f"{phase}_codebook"] = Adam(lr=lr * model.config.codebook_lr_scale, **kw)


def _step_generator(model, phase, grads):
    """Apply encoder/decoder and codebook gradients with their own optimizers."""
    params = model.named_parameters(("encoder", "decoder"))
    model.optimizers[phase].step(params, {k: v for k, v in grads.items() if k in params})
    book = model.named_parameters(("codebook",))
    model.optimizers[f"{phase}_codebook"].step(book, {k: v for k, v in grads.items() if k in book})


def pretrain(data, cfg=None, model=None, stop_at=None):
    """Fit the VQ autoencoder; the discriminator is left untouched.

    Passing ``model`` continues an interrupted run (e.g. a loaded checkpoint).
    ``stop_at`` ends the phase early after that many completed epochs.
    """
    x = _check_data(data)
    if model is None:
        model = VqRimModel.initialize(x.shape[1], cfg or TrainConfig())
    cfg = model.config
    _check_data(x, model)
    if model.phase == "finetune":
        return model
    if model.phase == "init":
        model.phase, model.epoch = "pretrain", 0
        _make_generator_optimizers(model, "pretrain", cfg.pretrain_lr, kind="adam")
    end = cfg.n_pretrain_epochs if stop_at is None else min(stop_at, cfg.n_pretrain_epochs)
    while model.epoch < end:
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(len(x), cfg.batch_size, model.rngs["shuffle"])):
            losses, grads = batch_gradients(model, x[idx], training=True,
                                            where=("pretrain", model.epoch, b))
            _step_generator(model, "pretrain", grads)
            total += sum(losses.values()) * len(idx)
            count += len(idx)
        model.history["pretrain"].append(total / count)
        model.epoch += 1
    return model


def finetune(data, model, cfg=None, stop_at=None, cold_start=False):
    """Joint generator + RIM training; returns ``(model, assignment)``."""
    x = _check_data(data)
    if model is None:
        if not cold_start:
            raise ConfigError("finetune needs a pretrained model or cold_start=True")
        model = VqRimModel.initialize(x.shape[1], cfg or TrainConfig())
    cfg = model.config
    _check_data(x, model)
    if model.phase != "finetune":
        if model.phase != "pretrain" and not cold_start:
            raise ConfigError("model is not pretrained; pass cold_start=True to skip pretraining")
        model.phase, model.epoch = "finetune", 0
        _make_generator_optimizers(model, "finetune", cfg.finetune_lr, kind="adamw",
                                   weight_decay=cfg.weight_decay)
        model.optimizers["finetune_disc"] = Adam(
            lr=cfg.finetune_lr if cfg.disc_lr is None else cfg.disc_lr,
            kind="adamw", weight_decay=cfg.weight_decay)
    disc_opt = model.optimizers["finetune_disc"]
    disc_params = model.named_parameters(("discriminator",))
    end = cfg.epochs if stop_at is None else min(stop_at, cfg.epochs)
    while model.epoch < end:
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(len(x), cfg.batch_size, model.rngs["shuffle"])):
            losses, grads = batch_gradients(model, x[idx], training=not cfg.freeze_generator,
                                            with_rim=True,
                                            generator=not cfg.freeze_generator,
                                            where=("finetune", model.epoch, b))
            disc_opt.step(disc_params, {k: v for k, v in grads.items() if k in disc_params})
            if not cfg.freeze_generator:
                _step_generator(model, "finetune", grads)
            total += sum(losses.values()) * len(idx)
            count += len(idx)
        model.history["finetune"].append(total / count)
        model.epoch += 1
    return model, model.assign(x)


def fit(data, cfg=None, model=None):
    """Pretrain then finetune. ``model`` resumes from whichever phase it stopped in."""
    x = _check_data(data)
    cfg = cfg or (model.config if model is not None else TrainConfig())
    model = pretrain(x, cfg, model=model)
    return finetune(x, model)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"VQRIMCKP"
VERSION = 1
_HEAD = struct.Struct("<8sIQ")


def _rng_state(gen):
    return gen.bit_generator.state


def _rng_from_state(state):
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen


def _model_arrays(model):
    arrays = dict(model.named_parameters())
    for phase, opt in model.optimizers.items():
        arrays.update(opt.state_arrays(f"opt.{phase}"))
    arrays["codebook.usage_counts"] = model.codebook.usage_counts.astype(np.float64)
    return arrays


def save_checkpoint(model, path):
    """Write ``model`` atomically as a versioned little-endian binary container."""
    arrays = _model_arrays(model)
    index = []
    blob = io.BytesIO()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": blob.tell()})
        blob.write(arr.tobytes())
    header = {
        "config": model.config.to_dict(),
        "input_dim": model.input_dim,
        "phase": model.phase,
        "epoch": model.epoch,
        "history": model.history,
        "rngs": {k: _rng_state(g) for k, g in model.rngs.items()},
        "optimizers": {k: o.state_meta() for k, o in model.optimizers.items()},
        "activations": {
            "encoder": [l.activation for l in model.encoder.layers],
            "decoder": [l.activation for l in model.decoder.layers],
            "discriminator": [l.activation for l in model.discriminator.net.layers],
        },
        "arrays": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _HEAD.pack(MAGIC, VERSION, len(header_bytes)) + header_bytes + blob.getvalue()
    payload = body + hashlib.sha256(body).digest()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    with open(path, "rb") as fh:
        payload = fh.read()
    if len(payload) < _HEAD.size + 32:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    body, digest = payload[:-32], payload[-32:]
    magic, version, header_len = _HEAD.unpack_from(body)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a vqrim checkpoint")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    try:
        header = json.loads(body[_HEAD.size:_HEAD.size + header_len].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    data = body[_HEAD.size + header_len:]
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)

    cfg = TrainConfig.from_dict(header["config"])
    model = VqRimModel.initialize(header["input_dim"], cfg)
    acts = header["activations"]
    for part, net in (("encoder", model.encoder), ("decoder", model.decoder),
                      ("discriminator", model.discriminator.net)):
        for layer, act in zip(net.layers, acts[part]):
            layer.activation = act
    for name, arr in model.named_parameters().items():
        arr[...] = arrays[name]
    model.codebook.usage_counts = arrays["codebook.usage_counts"].astype(np.int64)
    model.optimizers = {k: Adam.from_state(meta, arrays, f"opt.{k}")
                        for k, meta in header["optimizers"].items()}
    model.rngs = {k: _rng_from_state(s) for k, s in header["rngs"].items()}
    model.phase = header["phase"]
    model.epoch = header["epoch"]
    model.history = header["history"]
    return model
