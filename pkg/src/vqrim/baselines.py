"""Comparison methods: K-means, diagonal GMM, spectral clustering, AE/VAE feature
extractors, RIM on fixed features and elbow-based choice of K."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, eigh
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from . import rim
from .errors import InputError, NumericError
from .nn import Adam, FeedForwardNet
from .pipeline import substream

log = logging.getLogger(__name__)


@dataclass
class BaselineResult:
    method: str
    k: int
    labels: np.ndarray
    probs: np.ndarray | None = None
    scores: dict = field(default_factory=dict)  # candidate K -> selection score


def _as_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise InputError(f"expected a non-empty 2-d array, got shape {x.shape}")
    return x


def _check_k(k, n):
    if not 1 <= k <= n:
        raise InputError(f"K={k} must lie in [1, N={n}]")


# ------------------------------------------------------------------ K-means

@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    sse: float
    sse_history: list
    n_iter: int


def _kmeanspp(x, k, rng):
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(x, centroids, max_iter):
    history = []
    labels = None
    for it in range(1, max_iter + 1):
        d2 = cdist(x, centroids, "sqeuclidean")
        new = np.argmin(d2, axis=1)
        sse = float(d2[np.arange(len(x)), new].sum())
        history.append(sse)
        if labels is not None and np.array_equal(new, labels):
            return labels, centroids, history, it
        labels = new
        centroids = centroids.copy()
        for j in range(len(centroids)):
            members = labels == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
            else:
                # empty cluster: move it onto the point farthest from its centroid
                far = np.argmax(d2[np.arange(len(x)), labels])
                centroids[j] = x[far]
                labels = labels.copy()
                labels[far] = j
    d2 = cdist(x, centroids, "sqeuclidean")
    labels = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(len(x)), labels].sum()))
    return labels, centroids, history, max_iter


def kmeans(x, k, seed=0, max_iter=300, n_init=10):
    """Lloyd's algorithm from k-means++ seeding; best of ``n_init`` restarts by SSE."""
    x = _as_matrix(x)
    _check_k(k, len(x))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, centroids, history, n_iter = _lloyd(x, _kmeanspp(x, k, rng), max_iter)
        res = KMeansResult(labels, centroids, history[-1], history, n_iter)
        if best is None or res.sse < best.sse:
            best = res
    return best


def within_sse(x, labels):
    x = _as_matrix(x)
    labels = np.asarray(labels)
    return float(sum(((x[labels == j] - x[labels == j].mean(axis=0)) ** 2).sum()
                     for j in np.unique(labels)))


# --------------------------------------------------------- Gaussian mixture

@dataclass
class GmmResult:
    probs: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: list


def _diag_log_density(x, means, variances):
    # (N, K) log N(x | mean_k, diag(var_k))
    out = np.empty((len(x), len(means)))
    for k in range(len(means)):
        out[:, k] = -0.5 * (np.sum(np.log(2.0 * np.pi * variances[k]))
                            + np.sum((x - means[k]) ** 2 / variances[k], axis=1))
    return out


def gmm_em(x, k, seed=0, max_iter=200, tol=1e-8, var_floor=1e-6):
    """EM for a Gaussian mixture with diagonal covariances, initialized from K-means.

    Variances are floored at ``var_floor`` (a warning is issued when this
    happens). The floor is the exact constrained M-step, so the
    log-likelihood still never decreases; a decrease beyond 1e-9 relative
    raises :class:`NumericError`.
    """
    x = _as_matrix(x)
    n, d = x.shape
    _check_k(k, n)
    resp = np.zeros((n, k))
    resp[np.arange(n), kmeans(x, k, seed=seed).labels] = 1.0
    history = []
    floored = False
    for _ in range(max_iter):
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        variances = (resp.T @ (x * x)) / nk[:, None] - means ** 2
        if np.any(variances < var_floor):
            floored = True
            variances = np.maximum(variances, var_floor)
        logp = _diag_log_density(x, means, variances) + np.log(np.maximum(weights, 1e-300))
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        if history and ll < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            raise NumericError(f"EM log-likelihood decreased: {history[-1]} -> {ll}")
        history.append(ll)
        resp = np.exp(logp - norm[:, None])
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * max(1.0, abs(ll)):
            break
    if floored:
        warnings.warn(f"GMM variances floored at {var_floor:g}", RuntimeWarning)
    return GmmResult(probs=resp, labels=np.argmax(resp, axis=1), weights=weights, means=means,
                     variances=variances, log_likelihood=history)


# ------------------------------------------------------------------ spectral

@dataclass
class SpectralResult:
    labels: np.ndarray
    eigenvalues: np.ndarray
    affinity: str


def knn_affinity(x, n_neighbors=10):
    """Symmetrized kNN graph with Gaussian weights (bandwidth: median kNN distance)."""
    n = len(x)
    dist = cdist(x, x)
    m = min(n_neighbors, n - 1)
    nbrs = np.argsort(dist, axis=1, kind="stable")[:, 1:m + 1]
    rows = np.repeat(np.arange(n), m)
    knn_d = dist[rows, nbrs.ravel()]
    sigma = np.median(knn_d) or 1.0
    w = np.zeros((n, n))
    w[rows, nbrs.ravel()] = np.exp(-knn_d ** 2 / (2.0 * sigma ** 2))
    return np.maximum(w, w.T)


def gaussian_affinity(x):
    dist = cdist(x, x)
    sigma = np.median(dist[np.triu_indices(len(x), 1)]) or 1.0
    w = np.exp(-dist ** 2 / (2.0 * sigma ** 2))
    np.fill_diagonal(w, 0.0)
    return w


def normalized_laplacian(w):
    deg = w.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return np.eye(len(w)) - inv_sqrt[:, None] * w * inv_sqrt[None, :]


def spectral(x, k, n_neighbors=10, seed=0):
    """Normalized spectral clustering (symmetric Laplacian, row-normalized embedding).

    The kNN graph is used as long as it has at most ``k`` connected
    components; otherwise a fully connected Gaussian affinity replaces it.
    """
    x = _as_matrix(x)
    _check_k(k, len(x))
    w = knn_affinity(x, n_neighbors)
    n_comp, _ = connected_components(w > 0, directed=False)
    kind = "knn"
    if n_comp > k:
        log.info("kNN graph has %d components > K=%d; using full Gaussian affinity", n_comp, k)
        w, kind = gaussian_affinity(x), "gaussian"
    lap = normalized_laplacian(w)
    try:
        vals, vecs = eigh(lap, subset_by_index=[0, k - 1])
    except (LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    emb = vecs / np.where(norms > 0, norms, 1.0)
    labels = kmeans(emb, k, seed=seed).labels
    return SpectralResult(labels=labels, eigenvalues=vals, affinity=kind)


# --------------------------------------------------------- elbow selection

def elbow_select(scores, ks=None):
    """Pick K at the largest perpendicular distance to the chord joining the end points.

    Near-ties resolve to the earliest K.
    """
    y = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or len(y) < 3:
        raise InputError("elbow selection needs at least three candidate K values")
    ks = np.arange(1, len(y) + 1) if ks is None else np.asarray(ks)
    xk = ks.astype(np.float64)
    p0 = np.array([xk[0], y[0]])
    chord = np.array([xk[-1], y[-1]]) - p0
    length = np.hypot(*chord)
    if length == 0:
        return int(ks[0])
    rel = np.stack([xk, y], axis=1) - p0
    dist = np.abs(chord[0] * rel[:, 1] - chord[1] * rel[:, 0]) / length
    top = dist.max()
    return int(ks[np.nonzero(dist >= top - 1e-12 * max(1.0, top))[0][0]])


def select_k(x, cluster_fn, ks=range(2, 9)):
    """Run ``cluster_fn(x, k) -> labels`` for each candidate K and choose by the elbow of the SSE.

    Returns ``(k, {"sse": {...}, "silhouette": {...}})``.
    """
    from .metrics import silhouette

    ks = list(ks)
    sse, sil = {}, {}
    for k in ks:
        labels = cluster_fn(x, k)
        sse[k] = within_sse(x, labels)
        sil[k] = silhouette(x, labels) if len(np.unique(labels)) > 1 else float("nan")
    return elbow_select([sse[k] for k in ks], ks), {"sse": sse, "silhouette": sil}


# ------------------------------------------------------ feature extractors

@dataclass
class AutoencoderConfig:
    latent_dim: int = 64
    hidden: int | None = 512  # None: single linear map each way
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    dropout: float = 0.5
    seed: int = 0

    @classmethod
    def from_train_config(cls, cfg):
        return cls(latent_dim=cfg.embedding_dim, hidden=cfg.encoder_hidden,
                   epochs=cfg.n_pretrain_epochs, batch_size=cfg.batch_size, lr=cfg.pretrain_lr,
                   dropout=cfg.dropout, seed=cfg.seed)


def _mlp(sizes, cfg, rng):
    dropout = cfg.dropout if len(sizes) > 2 else 0.0
    return FeedForwardNet(sizes, dropout=dropout, rng=rng)


def _layout(d_in, d_out, cfg):
    return [d_in, d_out] if cfg.hidden is None else [d_in, cfg.hidden, d_out]


@dataclass
class AutoencoderResult:
    latent: np.ndarray
    encoder: FeedForwardNet
    decoder: FeedForwardNet
    history: list
    reconstruction_mse: float


def train_ae(x, cfg=None):
    """Deterministic bottleneck autoencoder trained on MSE; returns bottleneck activations."""
    x = _as_matrix(x)
    cfg = cfg or AutoencoderConfig()
    init = substream(cfg.seed, "ae-init")
    shuffle = substream(cfg.seed, "ae-shuffle")
    drop = substream(cfg.seed, "ae-dropout")
    enc = _mlp(_layout(x.shape[1], cfg.latent_dim, cfg), cfg, init)
    dec = _mlp(_layout(cfg.latent_dim, x.shape[1], cfg), cfg, init)
    params = {**{f"enc.{k}": v for k, v in enc.parameters().items()},
              **{f"dec.{k}": v for k, v in dec.parameters().items()}}
    opt = Adam(lr=cfg.lr)
    history = []
    for _ in range(cfg.epochs):
        total = 0.0
        order = shuffle.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            xb = x[order[start:start + cfg.batch_size]]
            z = enc.forward(xb, training=True, rng=drop)
            xr = dec.forward(z, training=True, rng=drop)
            total += float(np.mean((xr - xb) ** 2)) * len(xb)
            g_dec, g_z = dec.backward(2.0 * (xr - xb) / xb.size)
            g_enc, _ = enc.backward(g_z)
            opt.step(params, {**{f"enc.{k}": v for k, v in g_enc.items()},
                              **{f"dec.{k}": v for k, v in g_dec.items()}})
        history.append(total / len(x))
    latent = enc.forward(x)
    mse = float(np.mean((dec.forward(latent) - x) ** 2))
    return AutoencoderResult(latent, enc, dec, history, mse)


def gaussian_kl(mu, logvar):
    """Per-sample KL(N(mu, exp(logvar)) || N(0, I))."""
    return 0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar, axis=-1)


def vae_loss_and_grads(enc, dec, x, noise, training=False, rng=None):
    """Negative ELBO per sample (averaged over the batch) at a fixed noise draw.

    loss = mean_i [ 0.5 * ||x_i - dec(z_i)||^2 + KL_i ],  z = mu + exp(logvar/2) * noise
    """
    n = len(x)
    h = enc.forward(x, training=training, rng=rng)
    l = h.shape[1] // 2
    mu, logvar = h[:, :l], h[:, l:]
    std = np.exp(0.5 * logvar)
    z = mu + std * noise
    xr = dec.forward(z, training=training, rng=rng)
    recon = 0.5 * np.sum((xr - x) ** 2) / n
    kl = float(np.sum(gaussian_kl(mu, logvar))) / n
    g_dec, g_z = dec.backward((xr - x) / n)
    g_mu = g_z + mu / n
    g_logvar = g_z * noise * 0.5 * std + 0.5 * (np.exp(logvar) - 1.0) / n
    g_enc, _ = enc.backward(np.concatenate([g_mu, g_logvar], axis=1))
    return recon + kl, g_enc, g_dec, {"reconstruction": recon, "kl": kl}


def train_vae(x, cfg=None):
    """Gaussian VAE (diagonal posterior, standard normal prior); returns posterior means."""
    x = _as_matrix(x)
    cfg = cfg or AutoencoderConfig()
    init = substream(cfg.seed, "vae-init")
    shuffle = substream(cfg.seed, "vae-shuffle")
    drop = substream(cfg.seed, "vae-dropout")
    noise_rng = substream(cfg.seed, "vae-noise")
    enc = _mlp(_layout(x.shape[1], 2 * cfg.latent_dim, cfg), cfg, init)
    dec = _mlp(_layout(cfg.latent_dim, x.shape[1], cfg), cfg, init)
    params = {**{f"enc.{k}": v for k, v in enc.parameters().items()},
              **{f"dec.{k}": v for k, v in dec.parameters().items()}}
    opt = Adam(lr=cfg.lr)
    history = []
    for _ in range(cfg.epochs):
        total = 0.0
        order = shuffle.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            xb = x[order[start:start + cfg.batch_size]]
            noise = noise_rng.standard_normal((len(xb), cfg.latent_dim))
            loss, g_enc, g_dec, _ = vae_loss_and_grads(enc, dec, xb, noise, training=True, rng=drop)
            total += loss * len(xb)
            opt.step(params, {**{f"enc.{k}": v for k, v in g_enc.items()},
                              **{f"dec.{k}": v for k, v in g_dec.items()}})
        history.append(total / len(x))
    h = enc.forward(x)
    mu = h[:, :cfg.latent_dim]
    mse = float(np.mean((dec.forward(mu) - x) ** 2))
    return AutoencoderResult(mu, enc, dec, history, mse)


# ------------------------------------------------------- RIM on fixed features

def rim_cluster(z, k, seed=0, epochs=100, batch_size=32, lr=1e-3, alpha=1.0, lam=0.0,
                hidden=64, weight_decay=0.01):
    """Train a softmax discriminator with the RIM objective on fixed features ``z``."""
    z = _as_matrix(z)
    init = substream(seed, "rim-init")
    shuffle = substream(seed, "rim-shuffle")
    disc = rim.Discriminator(z.shape[1], k, hidden=(hidden,), rng=init)
    params = disc.net.parameters()
    opt = Adam(lr=lr, kind="adamw", weight_decay=weight_decay)
    for _ in range(epochs):
        order = shuffle.permutation(len(z))
        for start in range(0, len(z), batch_size):
            zb = z[order[start:start + batch_size]]
            logits = disc.logits(zb)
            grads, _ = disc.net.backward(-rim.rim_grad_logits(logits, alpha))
            if lam:
                for i, w in enumerate(disc.net.weight_arrays()):
                    grads[f"{i}.weight"] = grads[f"{i}.weight"] + lam * w
            opt.step(params, grads)
    probs = disc.predict_proba(z)
    return BaselineResult("rim", k, np.argmax(probs, axis=1), probs)
