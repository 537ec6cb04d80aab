"""Clustering metrics, PCA projection and label-flow tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import xlogy

from .errors import InputError, MetricError


@dataclass
class LabelFlow:
    """Contingency counts: ``counts[i, j]`` samples with ``a == a_labels[i]`` and ``b == b_labels[j]``."""

    counts: np.ndarray
    a_labels: np.ndarray
    b_labels: np.ndarray


def label_flow(labels_a, labels_b):
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError("label vectors must be 1-d and of equal length")
    a_levels, ai = np.unique(a, return_inverse=True)
    b_levels, bi = np.unique(b, return_inverse=True)
    counts = np.zeros((len(a_levels), len(b_levels)), dtype=np.int64)
    np.add.at(counts, (ai, bi), 1)
    return LabelFlow(counts, a_levels, b_levels)


def _entropy_of_counts(counts):
    p = counts / counts.sum()
    return float(-np.sum(xlogy(p, p)))


def mutual_information(labels_a, labels_b):
    flow = label_flow(labels_a, labels_b)
    pxy = flow.counts / flow.counts.sum()
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float(np.sum(pxy[nz] * np.log(pxy[nz] / (px @ py)[nz])))


def nmi(labels_a, labels_b, average="arithmetic"):
    """Normalized mutual information in [0, 1] (natural logs; 0/0 counts as 0)."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise InputError(f"label vectors differ in length: {len(a)} vs {len(b)}")
    if a.size == 0:
        raise InputError("empty label vectors")
    mi = mutual_information(a, b)
    ha = _entropy_of_counts(np.unique(a, return_counts=True)[1])
    hb = _entropy_of_counts(np.unique(b, return_counts=True)[1])
    if average == "arithmetic":
        norm = 0.5 * (ha + hb)
    elif average == "geometric":
        norm = np.sqrt(ha * hb)
    elif average == "min":
        norm = min(ha, hb)
    elif average == "max":
        norm = max(ha, hb)
    else:
        raise InputError(f"unknown normalization {average!r}")
    if norm <= 0.0:
        return 0.0
    return float(np.clip(mi / norm, 0.0, 1.0))


def silhouette(x, labels):
    """Mean silhouette coefficient with Euclidean distances.

    Singleton clusters score 0, as does any point with ``a == b == 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(labels):
        raise InputError("x must be 2-d with one label per row")
    levels, inv = np.unique(labels, return_inverse=True)
    if len(levels) < 2:
        raise MetricError("silhouette is undefined for fewer than two clusters")
    dist = cdist(x, x)
    sizes = np.bincount(inv)
    # sum of distances from every point to every cluster
    sums = np.zeros((len(x), len(levels)))
    for k in range(len(levels)):
        sums[:, k] = dist[:, inv == k].sum(axis=1)
    own = sizes[inv]
    a = sums[np.arange(len(x)), inv] / np.maximum(own - 1, 1)
    means = sums / sizes[None, :]
    means[np.arange(len(x)), inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(s.mean())


@dataclass
class PcaResult:
    projection: np.ndarray  # (N, n_components)
    components: np.ndarray  # (n_components, d), orthonormal rows
    explained_variance_ratio: np.ndarray
    mean: np.ndarray


def pca_project(x, n_components=2):
    """Project mean-centered ``x`` on its top principal axes.

    Component signs are fixed so the largest-magnitude loading is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InputError("x must be 2-d")
    if not 1 <= n_components <= min(x.shape):
        raise InputError(f"n_components must lie in [1, {min(x.shape)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:n_components]
    flip = np.sign(comps[np.arange(n_components), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    var = s ** 2
    total = var.sum()
    ratio = var[:n_components] / total if total > 0 else np.zeros(n_components)
    return PcaResult(projection=xc @ comps.T, components=comps, explained_variance_ratio=ratio,
                     mean=mean)
