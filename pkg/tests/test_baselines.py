import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vqrim import baselines
from vqrim.baselines import AutoencoderConfig
from vqrim.data import SyntheticSpec, generate_synthetic
from vqrim.errors import InputError
from vqrim.metrics import nmi
from vqrim.nn import numerical_gradient, relative_error


def blobs(rng, centers, n=30, scale=0.3):
    centers = np.asarray(centers, float)
    x = np.concatenate([c + scale * rng.normal(size=(n, len(c))) for c in centers])
    return x, np.repeat(np.arange(len(centers)), n)


def rings(rng, n=150):
    t = rng.uniform(0, 2 * np.pi, size=2 * n)
    r = np.repeat([1.0, 5.0], n) + 0.1 * rng.normal(size=2 * n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1), np.repeat([0, 1], n)


# --------------------------------------------------------------------- kmeans

def test_kmeans_splits_by_x():
    x = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], float)
    labels = baselines.kmeans(x, 2).labels
    assert labels[0] == labels[1] != labels[2] == labels[3]


def test_kmeans_k_equals_n_has_zero_sse(rng):
    assert baselines.kmeans(rng.normal(size=(7, 3)), 7).sse == 0.0


def test_kmeans_matches_exhaustive_two_partition(rng):
    for _ in range(5):
        x = rng.normal(size=(6, 2))
        best = np.inf
        for bits in itertools.product((0, 1), repeat=6):
            labels = np.array(bits)
            if 0 < labels.sum() < 6:
                best = min(best, baselines.within_sse(x, labels))
        assert baselines.kmeans(x, 2).sse == pytest.approx(best, rel=1e-12)


def test_kmeans_sse_history_non_increasing(rng):
    x, _ = blobs(rng, [[0, 0], [3, 0], [0, 3], [3, 3]], scale=1.0)
    res = baselines.kmeans(x, 4, n_init=1)
    assert np.all(np.diff(res.sse_history) <= 1e-12)
    assert res.sse == pytest.approx(baselines.within_sse(x, res.labels))


def test_kmeans_rejects_k_above_n():
    with pytest.raises(InputError):
        baselines.kmeans(np.zeros((3, 2)), 4)


# ------------------------------------------------------------------------ GMM

def test_gmm_one_hot_on_separated_blobs(rng):
    x, truth = blobs(rng, [[0, 0], [20, 20]])
    res = baselines.gmm_em(x, 2)
    assert np.all(res.probs.max(axis=1) > 0.999)
    assert nmi(truth, res.labels) == 1.0
    np.testing.assert_allclose(res.probs.sum(axis=1), 1.0, atol=1e-12)


def test_gmm_single_component_is_sample_moments(rng):
    x = rng.normal(size=(50, 3)) * [1, 2, 3]
    res = baselines.gmm_em(x, 1)
    np.testing.assert_allclose(res.means[0], x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(res.variances[0], x.var(axis=0), atol=1e-12)


def test_gmm_log_likelihood_monotone(rng):
    x, _ = blobs(rng, [[0, 0], [2, 1], [1, 3]], scale=1.0)
    ll = np.asarray(baselines.gmm_em(x, 3, max_iter=100, tol=0).log_likelihood)
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[1:]))


def test_gmm_variance_floor_warns():
    x = np.array([[0.0, 0.0]] * 5 + [[5.0, 5.0]] * 5)
    with pytest.warns(RuntimeWarning, match="floor"):
        res = baselines.gmm_em(x, 2)
    assert np.all(res.variances >= 1e-6)


# ------------------------------------------------------------------- spectral

def test_spectral_disconnected_components(rng):
    x, truth = blobs(rng, [[0, 0], [50, 0]], n=20)
    for seed in range(3):
        assert nmi(truth, baselines.spectral(x, 2, n_neighbors=5, seed=seed).labels) == 1.0


def test_spectral_separates_rings_where_kmeans_fails(rng):
    x, truth = rings(rng)
    assert nmi(truth, baselines.spectral(x, 2).labels) == 1.0
    assert nmi(truth, baselines.kmeans(x, 2).labels) < 0.5


def test_spectral_falls_back_when_graph_splits(rng):
    x, _ = blobs(rng, [[0, 0], [50, 0], [0, 50]], n=10)
    res = baselines.spectral(x, 2, n_neighbors=3)
    assert res.affinity == "gaussian"


def test_laplacian_is_psd(rng):
    x, _ = blobs(rng, [[0, 0], [3, 3]], scale=1.0)
    for w in (baselines.knn_affinity(x, 5), baselines.gaussian_affinity(x)):
        lap = baselines.normalized_laplacian(w)
        np.testing.assert_allclose(lap, lap.T, atol=1e-14)
        assert np.linalg.eigvalsh(lap).min() >= -1e-10


# ---------------------------------------------------------------------- elbow

def test_elbow_examples():
    assert baselines.elbow_select([100, 40, 12, 10, 9]) == 3
    assert baselines.elbow_select([5, 4, 3, 2, 1], ks=[2, 3, 4, 5, 6]) == 2
    assert baselines.elbow_select([100, 10, 9, 8, 7, 6]) == 2
    with pytest.raises(InputError):
        baselines.elbow_select([3, 1])


@given(arrays(np.float64, st.integers(3, 8), elements=st.floats(0, 100)))
def test_elbow_returns_a_candidate(scores):
    ks = list(range(2, 2 + len(scores)))
    assert baselines.elbow_select(np.sort(scores)[::-1], ks) in ks


def test_select_k_finds_planted_count(rng):
    x, _ = blobs(rng, [[0, 0], [10, 0], [0, 10]], scale=0.5)
    k, scores = baselines.select_k(x, lambda z, k: baselines.kmeans(z, k).labels, ks=range(1, 7))
    assert k == 3
    sil = {j: v for j, v in scores["silhouette"].items() if j > 1}
    assert max(sil, key=sil.get) == 3
    assert np.isnan(scores["silhouette"][1])


# ----------------------------------------------------------------- AE and VAE

def test_linear_ae_with_full_rank_bottleneck_reconstructs(rng):
    x = rng.normal(size=(60, 3)) @ rng.normal(size=(3, 6))
    res = baselines.train_ae(x, AutoencoderConfig(latent_dim=3, hidden=None, epochs=300, lr=1e-2,
                                                  dropout=0.0, batch_size=60))
    assert res.reconstruction_mse < 1e-4 * x.var()
    assert res.latent.shape == (60, 3)


def test_ae_latent_dim_follows_vq_config():
    from vqrim.pipeline import TrainConfig

    cfg = AutoencoderConfig.from_train_config(TrainConfig(embedding_dim=7, seed=3))
    assert (cfg.latent_dim, cfg.seed) == (7, 3)


def test_ae_close_to_pca_residual():
    ds = generate_synthetic(SyntheticSpec(n_clusters=3, samples_per_cluster=60, latent_dim=4,
                                          output_dim=40, nonlinear=True, seed=2)).zscore()
    x = ds.values
    l = 4
    xc = x - x.mean(axis=0)
    s = np.linalg.svd(xc, compute_uv=False)
    pca_residual = float(np.sum(s[l:] ** 2) / x.size)
    res = baselines.train_ae(x, AutoencoderConfig(latent_dim=l, hidden=64, epochs=150, lr=1e-3,
                                                  dropout=0.0))
    assert res.reconstruction_mse <= 1.5 * pca_residual


def test_gaussian_kl_examples():
    assert baselines.gaussian_kl(np.zeros(3), np.zeros(3)) == 0.0
    assert baselines.gaussian_kl(np.array([1.0]), np.array([0.0])) == 0.5
    # sigma^2 = e: 0.5 * (e - 1 - 1)
    assert baselines.gaussian_kl(np.array([0.0]), np.array([1.0])) == pytest.approx(0.5 * (np.e - 2))


def test_vae_gradients_match_finite_differences(rng):
    from vqrim.nn import FeedForwardNet

    enc = FeedForwardNet([5, 6, 4], hidden_activation="tanh", rng=rng)
    dec = FeedForwardNet([2, 6, 5], hidden_activation="tanh", rng=rng)
    x = rng.normal(size=(7, 5))
    noise = rng.normal(size=(7, 2))
    _, g_enc, g_dec, parts = baselines.vae_loss_and_grads(enc, dec, x, noise)

    def f():
        return baselines.vae_loss_and_grads(enc, dec, x, noise)[0]

    for name, arr in enc.parameters().items():
        assert relative_error(g_enc[name], numerical_gradient(f, arr)) < 1e-6
    for name, arr in dec.parameters().items():
        assert relative_error(g_dec[name], numerical_gradient(f, arr)) < 1e-6
    assert parts["kl"] >= 0


def test_vae_returns_posterior_means(rng):
    x, truth = blobs(rng, [[0] * 6, [6] * 6], n=30)
    res = baselines.train_vae(x, AutoencoderConfig(latent_dim=2, hidden=16, epochs=60, lr=3e-3,
                                                   dropout=0.0))
    assert res.latent.shape == (60, 2)
    np.testing.assert_array_equal(res.latent, res.encoder.forward(x)[:, :2])
    assert nmi(truth, baselines.kmeans(res.latent, 2).labels) == 1.0


def test_extractors_are_deterministic(rng):
    x = rng.normal(size=(20, 5))
    cfg = AutoencoderConfig(latent_dim=2, hidden=8, epochs=3)
    assert baselines.train_ae(x, cfg).latent.tobytes() == baselines.train_ae(x, cfg).latent.tobytes()
    assert baselines.train_vae(x, cfg).latent.tobytes() == baselines.train_vae(x, cfg).latent.tobytes()


# ----------------------------------------------------------------- RIM on fixed latents

def test_rim_cluster_on_separated_latents(rng):
    z, truth = blobs(rng, [[0, 0], [6, 0], [0, 6]])
    z = (z - z.mean(axis=0)) / z.std(axis=0)
    res = baselines.rim_cluster(z, 3, epochs=300)
    np.testing.assert_allclose(res.probs.sum(axis=1), 1.0, atol=1e-12)
    assert set(res.labels) <= {0, 1, 2}
    assert nmi(truth, res.labels) > 0.9
