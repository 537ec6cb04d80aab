"""Artifact writers and readers: assignment and KM tables, PCA coordinates, reports, SVG plots."""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from .errors import InputError
from .survival import KmCurve, km_curve, median_survival


def _fmt(v):
    return f"{float(v):.6g}"


# ---------------------------------------------------------------- assignments

def write_assignments(path, sample_ids, labels, probs):
    """``sample_id,label,p_0,...,p_{K-1}`` with probabilities to 6 significant digits."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if not (len(sample_ids) == len(labels) == len(probs)):
        raise InputError("sample ids, labels and probabilities must align")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", *(f"p_{j}" for j in range(probs.shape[1]))])
        for sid, lab, row in zip(sample_ids, labels, probs):
            w.writerow([sid, int(lab), *(_fmt(p) for p in row)])


def read_assignments(path):
    """Inverse of :func:`write_assignments`: ``(sample_ids, labels, probs)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["sample_id", "label"]:
        raise InputError(f"{path}: not an assignments table")
    body = rows[1:]
    ids = [r[0] for r in body]
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    probs = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64)
    return ids, labels, probs.reshape(len(body), len(rows[0]) - 2)


# ------------------------------------------------------------------ KM curves

def km_curves_by_group(records, labels):
    labels = np.asarray(labels)
    return {g.item(): km_curve(records.time[labels == g], records.event[labels == g])
            for g in np.unique(labels)}


def write_km_curves(path, curves):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "time", "survival", "at_risk", "deaths"])
        for g, c in curves.items():
            for t, s, n, d in zip(c.times, c.survival, c.at_risk, c.deaths):
                w.writerow([g, repr(float(t)), repr(float(s)), int(n), int(d)])


def read_km_curves(path):
    """Inverse of :func:`write_km_curves`. Group keys come back as strings."""
    cols = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["group", "time", "survival", "at_risk", "deaths"]:
            raise InputError(f"{path}: not a KM curve table")
        for row in reader:
            cols.setdefault(row["group"], []).append(row)
    return {g: KmCurve(times=np.array([float(r["time"]) for r in rows]),
                       survival=np.array([float(r["survival"]) for r in rows]),
                       at_risk=np.array([int(r["at_risk"]) for r in rows], dtype=np.int64),
                       deaths=np.array([int(r["deaths"]) for r in rows], dtype=np.int64))
            for g, rows in cols.items()}


# ------------------------------------------------------------- other tables

def write_pca(path, sample_ids, pca, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", *(f"pc{j + 1}" for j in range(pca.projection.shape[1]))])
        for sid, lab, row in zip(sample_ids, labels, pca.projection):
            w.writerow([sid, int(lab), *(repr(float(v)) for v in row)])


def write_label_flow(path, flow):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from\\to", *(str(b) for b in flow.b_labels)])
        for a, row in zip(flow.a_labels, flow.counts):
            w.writerow([str(a), *(int(v) for v in row)])


def write_ablation(path, rows):
    keys = ["nmi", "silhouette", "logrank_p", "n_labels"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["extractor", "clusterer", *keys])
        for r in rows:
            w.writerow([r.extractor, r.clusterer,
                        *("" if r.scores.get(k) is None else r.scores[k] for k in keys)])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------- plots

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "vqrim"
    return plt


def plot_km_svg(path, curves, title="Kaplan-Meier"):
    """Step plot of each group's curve with a dashed vertical at its median survival."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, (g, c) in enumerate(curves.items()):
        color = f"C{i % 10}"
        ts = np.concatenate([[0.0], c.times])
        ss = np.concatenate([[1.0], c.survival])
        ax.step(ts, ss, where="post", color=color, label=str(g))
        med = median_survival(c)
        if med is not None:
            ax.axvline(med, color=color, linestyle="--", linewidth=0.8)
    ax.set_xlabel("time")
    ax.set_ylabel("survival probability")
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend(title="cluster", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_pca_svg(path, pca, labels, title="PCA"):
    plt = _pyplot()
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, g in enumerate(np.unique(labels)):
        pts = pca.projection[labels == g]
        ax.scatter(pts[:, 0], pts[:, 1], s=6, color=f"C{i % 10}", label=str(g))
    r = pca.explained_variance_ratio
    ax.set_xlabel(f"PC1 ({100 * r[0]:.1f}%)")
    ax.set_ylabel(f"PC2 ({100 * r[1]:.1f}%)" if len(r) > 1 else "PC2")
    ax.set_title(title)
    ax.legend(title="cluster", fontsize="small", markerscale=2)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
