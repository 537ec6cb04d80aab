"""End-to-end runs: fit VQ-RIM or a baseline combination, evaluate and export.

The ablation grid crosses three feature extractors with four clusterers:

=========  =============================================================
extractor  ``ae`` (deterministic autoencoder), ``vae`` (Gaussian VAE,
           posterior means), ``vq`` (pretrained VQ encoder output z_e)
clusterer  ``kmeans``, ``spectral``, ``gmm``, ``rim``
=========  =============================================================

``vq`` + ``rim`` is the full model: the pretrained VQ autoencoder is
finetuned jointly with a fresh discriminator. ``ae``/``vae`` + ``rim`` train
the discriminator on the frozen latent.
"""

from __future__ import annotations

import copy
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import baselines, export, metrics, survival
from .config import ExperimentConfig, load_config
from .data import generate_synthetic, labels_to_int, load_expression_csv, load_survival_csv
from .errors import MetricError, VqRimError
from .pipeline import TrainConfig, finetune, pretrain, save_checkpoint, substream
from .rim import Discriminator

log = logging.getLogger(__name__)

EXTRACTORS = ("ae", "vae", "vq")
CLUSTERERS = ("kmeans", "spectral", "gmm", "rim")
METHODS = ("vq-rim",) + tuple(f"{e}+{c}" for e in EXTRACTORS for c in CLUSTERERS
                              if (e, c) != ("vq", "rim"))


class StageError(VqRimError):
    """A module error re-raised with the name of the stage that failed."""

    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, kind, exc, tb):
        if exc is not None and isinstance(exc, (VqRimError, ValueError, OSError)) \
                and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


# ----------------------------------------------------------------- extractors

def extract_features(x, extractor, cfg):
    """Latent matrix from one feature extractor; ``vq`` also returns the pretrained model."""
    if extractor == "ae":
        return baselines.train_ae(x, baselines.AutoencoderConfig.from_train_config(cfg)).latent, None
    if extractor == "vae":
        return baselines.train_vae(x, baselines.AutoencoderConfig.from_train_config(cfg)).latent, None
    if extractor == "vq":
        model = pretrain(x, cfg)
        return model.encode(x), model
    raise ValueError(f"unknown extractor {extractor!r}")


def cluster_features(z, clusterer, k, cfg):
    if clusterer == "kmeans":
        return baselines.kmeans(z, k, seed=cfg.seed).labels, None
    if clusterer == "spectral":
        return baselines.spectral(z, k, seed=cfg.seed).labels, None
    if clusterer == "gmm":
        res = baselines.gmm_em(z, k, seed=cfg.seed)
        return res.labels, res.probs
    if clusterer == "rim":
        res = baselines.rim_cluster(z, k, seed=cfg.seed, epochs=cfg.epochs, batch_size=cfg.batch_size,
                                    lr=cfg.disc_lr or cfg.finetune_lr, alpha=cfg.alpha, lam=cfg.lam,
                                    hidden=cfg.disc_hidden, weight_decay=cfg.weight_decay)
        return res.labels, res.probs
    raise ValueError(f"unknown clusterer {clusterer!r}")


def finetune_with_classes(x, pretrained, num_classes, disc_input=None):
    """Joint finetuning of a copy of ``pretrained`` with a fresh ``num_classes`` discriminator."""
    model = copy.deepcopy(pretrained)
    overrides = {"num_classes": int(num_classes)}
    if disc_input is not None:
        overrides["disc_input"] = disc_input
    cfg = TrainConfig.from_dict({**model.config.to_dict(), **overrides})
    model.config = cfg
    model.discriminator = Discriminator(cfg.embedding_dim, cfg.num_classes,
                                        hidden=(cfg.disc_hidden,),
                                        rng=substream(cfg.seed, "discriminator"))
    return finetune(x, model)


# --------------------------------------------------------------------- scores

def score_labels(labels, latent, truth=None, records=None):
    """NMI against ``truth``, silhouette on ``latent`` and the log-rank test across clusters."""
    out = {"n_labels": int(len(np.unique(labels)))}
    out["nmi"] = None if truth is None else metrics.nmi(truth, labels)
    try:
        out["silhouette"] = metrics.silhouette(latent, labels)
    except MetricError:
        out["silhouette"] = None
    out["logrank_chi2"] = out["logrank_df"] = out["logrank_p"] = None
    if records is not None and out["n_labels"] > 1:
        res = survival.logrank_test(records.time, records.event, labels)
        out.update(logrank_chi2=res.statistic, logrank_df=res.df, logrank_p=res.p_value)
    return out


@dataclass
class AblationRow:
    extractor: str
    clusterer: str
    scores: dict = field(default_factory=dict)

    @property
    def method(self):
        return f"{self.extractor}+{self.clusterer}"


def ablation_grid(x, k, cfg, truth=None, records=None, extractors=EXTRACTORS,
                  clusterers=CLUSTERERS, vq_rim_input="z_e"):
    """Score every extractor x clusterer combination with ``k`` clusters.

    Each extractor is trained once and shared by the clusterers of its row.
    Every clusterer of the ``vq`` row reads the encoder output z_e, the RIM
    head included (``vq_rim_input``); with the class count fixed at ``k``
    there is no pruning for the quantized input to drive.
    """
    rows = []
    for extractor in extractors:
        z, model = extract_features(x, extractor, cfg)
        for clusterer in clusterers:
            if extractor == "vq" and clusterer == "rim":
                tuned, assign = finetune_with_classes(x, model, k, vq_rim_input)
                labels, latent = assign.hard_label, tuned.encode(x)
            else:
                labels, _ = cluster_features(z, clusterer, k, cfg)
                latent = z
            rows.append(AblationRow(extractor, clusterer,
                                    score_labels(labels, latent, truth, records)))
    return rows


def ablation_winner(rows, key="nmi"):
    """True if VQ + RIM scores at or above every other cell on ``key``."""
    best = {r.method: r.scores[key] for r in rows}
    top = best.pop("vq+rim")
    return all(top >= v - 1e-12 for v in best.values())


# ---------------------------------------------------------------- experiments

def _load_dataset(cfg: ExperimentConfig):
    if cfg.data == "synthetic":
        spec = cfg.synthetic_spec()
        ds = generate_synthetic(spec)
    else:
        ds = load_expression_csv(cfg.data, labels_column=cfg.labels_column)
        if cfg.survival:
            ds = load_survival_csv(cfg.survival, dataset=ds)
    if cfg.zscore:
        ds = ds.zscore()
    return ds


def _resolve_k(cfg, truth):
    if cfg.n_clusters is not None:
        return cfg.n_clusters
    if truth is None:
        raise ValueError("baseline methods need n_clusters when the data carries no labels")
    return int(len(np.unique(truth)))


def run_experiment(config, out_dir):
    """Run one configured experiment and write its artifact directory.

    ``config`` is an :class:`ExperimentConfig` or the path of a config file.
    Output is staged in a sibling temporary directory and renamed into place
    only after every file has been written.
    """
    cfg = load_config(config) if isinstance(config, (str, os.PathLike)) else config
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    stage_dir = tempfile.mkdtemp(dir=parent, prefix=".stage-")
    try:
        report = _run_into(cfg, stage_dir)
        if os.path.exists(out_dir):
            shutil.rmtree(out_dir)
        os.replace(stage_dir, out_dir)
    except BaseException:
        shutil.rmtree(stage_dir, ignore_errors=True)
        raise
    return report


def _run_into(cfg, out):
    train = cfg.train
    with _Stage("load"):
        ds = _load_dataset(cfg)
        x = ds.values
        truth = getattr(ds, "truth", None)
        if truth is None and ds.labels is not None:
            truth = labels_to_int(ds.labels)
        records = ds.survival

    report = {"method": cfg.method, "n_samples": int(x.shape[0]), "n_features": int(x.shape[1]),
              "seed": train.seed}
    probs = None
    if cfg.method == "vq-rim":
        with _Stage("train"):
            model = pretrain(x, train)
            model, assign = finetune(x, model)
        labels, probs = assign.hard_label, assign.probs
        latent = model.encode(x)
        report["k_found"] = assign.n_clusters
        with _Stage("checkpoint"):
            save_checkpoint(model, os.path.join(out, "model.ckpt"))
    else:
        extractor, clusterer = cfg.method.split("+")
        k = _resolve_k(cfg, truth)
        with _Stage("features"):
            latent, _ = extract_features(x, extractor, train)
        with _Stage("cluster"):
            labels, probs = cluster_features(latent, clusterer, k, train)
        if probs is None:
            probs = np.eye(k)[labels]
        report["k_found"] = k

    with _Stage("evaluate"):
        scores = score_labels(labels, latent, truth, records)
        report.update({k: v for k, v in scores.items() if k not in report})
        pca = metrics.pca_project(latent, 2)

    with _Stage("export"):
        export.write_assignments(os.path.join(out, "assignments.csv"), ds.sample_ids, labels, probs)
        export.write_pca(os.path.join(out, "pca.csv"), ds.sample_ids, pca, labels)
        if truth is not None:
            export.write_label_flow(os.path.join(out, "label_flow.csv"),
                                    metrics.label_flow(truth, labels))
        if records is not None:
            curves = export.km_curves_by_group(records, labels)
            export.write_km_curves(os.path.join(out, "km_curves.csv"), curves)
            report["median_survival"] = {str(g): survival.median_survival(c)
                                         for g, c in curves.items()}
            if cfg.plots:
                export.plot_km_svg(os.path.join(out, "km.svg"), curves)
        if cfg.plots:
            export.plot_pca_svg(os.path.join(out, "pca.svg"), pca, labels)
        if cfg.ablation:
            k = _resolve_k(cfg, truth)
            rows = ablation_grid(x, k, train, truth, records)
            export.write_ablation(os.path.join(out, "ablation.csv"), rows)
        report["config"] = cfg.to_dict()
        export.write_json(os.path.join(out, "metrics.json"), report)
    return report
