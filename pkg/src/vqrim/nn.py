"""Dense feed-forward networks with hand-written backpropagation.

Everything is float64 numpy. A network is a chain of affine layers, each
followed by an elementwise activation. Gradients are computed explicitly by
:meth:`FeedForwardNet.backward` from values cached during the last training
forward pass, so the whole training stack can be checked against finite
differences (see :func:`grad_check`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, ShapeError, StateError, TrainingError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


def _activate(kind, h):
    if kind == "relu":
        return np.maximum(h, 0.0)
    if kind == "tanh":
        return np.tanh(h)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * h))
    if kind == "linear":
        return h
    raise ConfigError(f"unknown activation {kind!r}")


def _activate_grad(kind, h, a, upstream):
    # h: pre-activation, a: activation output
    if kind == "relu":
        return upstream * (h > 0)
    if kind == "tanh":
        return upstream * (1.0 - a * a)
    if kind == "sigmoid":
        return upstream * a * (1.0 - a)
    return upstream


@dataclass
class Layer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    @property
    def n_in(self):
        return self.weight.shape[0]

    @property
    def n_out(self):
        return self.weight.shape[1]


@dataclass
class _Cache:
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    masks: list = field(default_factory=list)


class FeedForwardNet:
    """Multi-layer perceptron.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``(200, 512, 64)``.
    hidden_activation : str
        Activation of every hidden layer.
    output_activation : str
        Activation of the last layer.
    dropout : float
        Inverted-dropout rate applied to hidden-layer outputs when
        ``training=True``. Inference is always deterministic.
    rng : numpy.random.Generator, optional
        Used only for weight initialization.
    """

    def __init__(self, sizes, hidden_activation="relu", output_activation="linear",
                 dropout=0.0, rng=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigError(f"invalid layer sizes {sizes}")
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {dropout}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.dropout = float(dropout)
        self.layers: list[Layer] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            act = output_activation if i == len(sizes) - 2 else hidden_activation
            self.layers.append(Layer(
                weight=rng.uniform(-bound, bound, size=(n_in, n_out)),
                bias=rng.uniform(-bound, bound, size=n_out),
                activation=act,
            ))
        self._cache = None

    @classmethod
    def from_layers(cls, layers, dropout=0.0):
        for a, b in zip(layers[:-1], layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer dims do not chain: {a.n_out} -> {b.n_in}")
        net = cls.__new__(cls)
        net.dropout = float(dropout)
        net.layers = [Layer(np.asarray(l.weight, float), np.asarray(l.bias, float), l.activation)
                      for l in layers]
        net._cache = None
        return net

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    def parameters(self):
        """Name -> array mapping. Arrays are live; optimizers update them in place."""
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"{i}.weight"] = layer.weight
            params[f"{i}.bias"] = layer.bias
        return params

    def weight_arrays(self):
        return [layer.weight for layer in self.layers]

    def copy(self):
        return FeedForwardNet.from_layers(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
            dropout=self.dropout)

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"expected batch with {self.n_in} columns, got shape {x.shape}")
        use_dropout = training and self.dropout > 0.0
        if use_dropout and rng is None:
            raise ConfigError("training with dropout requires an rng")
        cache = _Cache()
        a = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            cache.inputs.append(a)
            h = a @ layer.weight + layer.bias
            a = _activate(layer.activation, h)
            cache.pre.append(h)
            cache.post.append(a)
            mask = None
            if use_dropout and i < last:
                keep = 1.0 - self.dropout
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            cache.masks.append(mask)
        self._cache = cache
        return a

    __call__ = forward

    def backward(self, upstream):
        """Backpropagate ``upstream`` (d loss / d output) through the last forward pass.

        Returns ``(grads, input_grad)`` where ``grads`` has the same keys as
        :meth:`parameters`. Gradients are summed over the batch.
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        cache = self._cache
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != cache.post[-1].shape:
            raise ShapeError(f"upstream grad shape {g.shape} != output shape {cache.post[-1].shape}")
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if cache.masks[i] is not None:
                g = g * cache.masks[i]
            g = _activate_grad(layer.activation, cache.pre[i], cache.post[i], g)
            grads[f"{i}.weight"] = cache.inputs[i].T @ g
            grads[f"{i}.bias"] = g.sum(axis=0)
            g = g @ layer.weight.T
        return grads, g


class Adam:
    """Adam, optionally with decoupled weight decay (AdamW).

    ``kind="adam"`` adds ``weight_decay * p`` to the gradient (classic L2);
    ``kind="adamw"`` shrinks the parameter by ``lr * weight_decay`` before the
    Adam step. With ``weight_decay == 0`` the two are identical.
    """

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, kind="adam"):
        if kind not in ("adam", "adamw"):
            raise ConfigError(f"unknown optimizer kind {kind!r}")
        if lr <= 0 or weight_decay < 0:
            raise ConfigError("learning rate must be positive and weight decay non-negative")
        self.kind = kind
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        for name, g in grads.items():
            if name not in params:
                raise ShapeError(f"gradient for unknown parameter {name!r}")
            if g.shape != params[name].shape:
                raise ShapeError(f"{name}: grad shape {g.shape} != param shape {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            if self.weight_decay:
                if self.kind == "adamw":
                    p *= 1.0 - self.lr * self.weight_decay
                else:
                    g = g + self.weight_decay * p
            m, v = self.m[name], self.v[name]
            tmp = np.multiply(g, 1.0 - self.beta1)
            m *= self.beta1
            m += tmp
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - self.beta2
            v *= self.beta2
            v += tmp
            # p -= lr * (m / c1) / (sqrt(v / c2) + eps)
            np.multiply(v, 1.0 / c2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= self.lr / c1
            p -= tmp

    def state_arrays(self, prefix):
        out = {}
        for name in self.m:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def state_meta(self):
        return {"kind": self.kind, "lr": self.lr, "betas": [self.beta1, self.beta2],
                "eps": self.eps, "weight_decay": self.weight_decay,
                "step_count": self.step_count, "names": sorted(self.m)}

    @classmethod
    def from_state(cls, meta, arrays, prefix):
        opt = cls(lr=meta["lr"], betas=meta["betas"], eps=meta["eps"],
                  weight_decay=meta["weight_decay"], kind=meta["kind"])
        opt.step_count = int(meta["step_count"])
        for name in meta["names"]:
            opt.m[name] = arrays[f"{prefix}.m.{name}"].copy()
            opt.v[name] = arrays[f"{prefix}.v.{name}"].copy()
        return opt


def relative_error(analytic, numeric):
    """Tensor-wise relative error ``|a - n| / (|a| + |n|)``; 0 when both vanish."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numerical_gradient(f: Callable[[], float], array, step=1e-5):
    """Central finite differences of scalar ``f()`` with respect to ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * step)
    return grad


@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self):
        return self.max_error < self.tolerance


def grad_check(net, loss_fn, batch, tolerance=1e-4, step=1e-5, grad_override=None):
    """Compare backprop gradients of ``loss_fn(net(batch))`` with finite differences.

    ``loss_fn(output)`` returns ``(loss, dloss_doutput)``. ``grad_override``
    may post-process the analytic gradients (negative controls use it).
    The input gradient is checked under the key ``"input"``.
    """
    batch = np.array(batch, dtype=np.float64)
    out = net.forward(batch)
    _, upstream = loss_fn(out)
    grads, input_grad = net.backward(upstream)
    grads = dict(grads)
    grads["input"] = input_grad
    if grad_override is not None:
        grads = grad_override(grads)

    def f():
        return float(loss_fn(net.forward(batch))[0])

    targets = dict(net.parameters())
    targets["input"] = batch
    errors = {name: relative_error(grads[name], numerical_gradient(f, arr, step))
              for name, arr in targets.items()}
    return GradCheckReport(errors=errors, tolerance=tolerance)
