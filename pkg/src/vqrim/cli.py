"""Command-line entry point: ``vqrim {fit,synth,evaluate,ablate,km-plot}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import export, metrics, survival
from .config import ExperimentConfig, _convert, _field_types, load_config
from .data import (SyntheticSpec, generate_synthetic, labels_to_int, load_expression_csv,
                   load_survival_csv, write_expression_csv, write_survival_csv)
from .errors import VqRimError
from .pipeline import TrainConfig

log = logging.getLogger("vqrim")

_TRAIN_FLAGS = [n for n in _field_types(TrainConfig) if n != "seed"]
_SYNTH_FLAGS = [n for n in _field_types(SyntheticSpec) if n != "seed"]


def _flag(name):
    return "--" + name.replace("_", "-")


def _add_fields(parser, names, prefix=""):
    for name in names:
        parser.add_argument(_flag(prefix + name), dest=prefix + name, metavar="VALUE", default=None)


def _collect(args, cls, names, prefix=""):
    types = _field_types(cls)
    out = {}
    for name in names:
        raw = getattr(args, prefix + name)
        if raw is None:
            continue
        hint = types[name]
        if name == "samples_per_cluster" and "," not in raw:
            hint = int
        value = _convert(_flag(prefix + name), raw, hint)
        if name == "samples_per_cluster" and isinstance(value, list):
            value = [int(v) for v in value]
        out[name] = value
    return out


def _common(parser):
    parser.add_argument("--seed", type=int, default=None, help="root seed for every random stream")
    parser.add_argument("--out-dir", default="vqrim-out", help="directory for all outputs")
    parser.add_argument("-v", "--verbose", action="store_true")


def _data_options(parser):
    parser.add_argument("--config", help="flat key = value experiment file; flags override it")
    parser.add_argument("--data", help="expression CSV (samples x features); default: synthetic")
    parser.add_argument("--survival", help="CSV with sample_id,time,event")
    parser.add_argument("--labels-column", help="column of --data holding reference labels")
    parser.add_argument("--no-zscore", action="store_true", help="skip per-feature z-scoring")
    parser.add_argument("--n-clusters", type=int, help="K for baseline clusterers")
    parser.add_argument("--no-plots", action="store_true")
    _add_fields(parser, _TRAIN_FLAGS)
    _add_fields(parser, _SYNTH_FLAGS, prefix="synth_")


def _experiment_config(args, **extra):
    base = load_config(args.config) if args.config else ExperimentConfig()
    train = {**base.train.to_dict(), **_collect(args, TrainConfig, _TRAIN_FLAGS)}
    if args.seed is not None:
        train["seed"] = args.seed
    synth = {**base.synthetic, **_collect(args, SyntheticSpec, _SYNTH_FLAGS, prefix="synth_")}
    fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(ExperimentConfig)
              if f.name not in ("train", "synthetic")}
    if args.data:
        fields["data"] = args.data
    if args.survival:
        fields["survival"] = args.survival
    if args.labels_column:
        fields["labels_column"] = args.labels_column
    if args.no_zscore:
        fields["zscore"] = False
    if args.n_clusters is not None:
        fields["n_clusters"] = args.n_clusters
    if args.no_plots:
        fields["plots"] = False
    fields.update(extra)
    return ExperimentConfig(train=TrainConfig.from_dict(train), synthetic=synth, **fields)


# ------------------------------------------------------------------- commands

def cmd_fit(args):
    from .experiment import run_experiment

    extra = {"method": args.method} if args.method else {}
    cfg = _experiment_config(args, **extra)
    report = run_experiment(cfg, args.out_dir)
    print(f"method {report['method']}: K={report['k_found']} NMI={_num(report.get('nmi'))} "
          f"silhouette={_num(report.get('silhouette'))} log-rank p={_num(report.get('logrank_p'))}")
    print(f"artifacts written to {args.out_dir}")


def cmd_synth(args):
    values = _collect(args, SyntheticSpec, _SYNTH_FLAGS, prefix="synth_")
    spec = SyntheticSpec(seed=0 if args.seed is None else args.seed, **values)
    ds = generate_synthetic(spec)
    export.ensure_dir(args.out_dir)
    write_expression_csv(ds, os.path.join(args.out_dir, "expression.csv"), labels_column="label")
    write_survival_csv(ds.survival, os.path.join(args.out_dir, "survival.csv"))
    print(f"{ds.n_samples} samples x {ds.n_features} features, {spec.n_clusters} planted clusters "
          f"-> {args.out_dir}")


def cmd_evaluate(args):
    ids, labels, _ = export.read_assignments(args.assignments)
    report = {"n_labels": int(len(np.unique(labels))), "n_samples": len(ids)}
    order = {s: i for i, s in enumerate(ids)}
    if args.data:
        ds = load_expression_csv(args.data, zscore=not args.no_zscore,
                                 labels_column=args.labels_column)
        idx = _align(ds.sample_ids, order, args.data)
        lab = labels[idx]
        if len(np.unique(lab)) > 1:
            report["silhouette"] = metrics.silhouette(ds.values, lab)
        if ds.labels is not None:
            truth = labels_to_int(ds.labels)
            report["nmi"] = metrics.nmi(truth, lab)
            export.write_label_flow(os.path.join(export.ensure_dir(args.out_dir), "label_flow.csv"),
                                    metrics.label_flow(ds.labels, lab))
    if args.survival:
        records = load_survival_csv(args.survival)
        idx = _align(records.sample_ids, order, args.survival)
        lab = labels[idx]
        if len(np.unique(lab)) > 1:
            res = survival.logrank_test(records.time, records.event, lab)
            report.update(logrank_chi2=res.statistic, logrank_df=res.df, logrank_p=res.p_value)
        curves = export.km_curves_by_group(records, lab)
        report["median_survival"] = {str(g): survival.median_survival(c) for g, c in curves.items()}
        export.write_km_curves(os.path.join(export.ensure_dir(args.out_dir), "km_curves.csv"), curves)
    export.write_json(os.path.join(export.ensure_dir(args.out_dir), "metrics.json"), report)
    for key in ("n_labels", "nmi", "silhouette", "logrank_p"):
        if key in report:
            print(f"{key}: {_num(report[key])}")


def cmd_ablate(args):
    from .experiment import _load_dataset, _resolve_k, ablation_grid, ablation_winner

    cfg = _experiment_config(args)
    ds = _load_dataset(cfg)
    truth = getattr(ds, "truth", None)
    if truth is None and ds.labels is not None:
        truth = labels_to_int(ds.labels)
    k = _resolve_k(cfg, truth)
    rows = ablation_grid(ds.values, k, cfg.train, truth, ds.survival)
    export.ensure_dir(args.out_dir)
    export.write_ablation(os.path.join(args.out_dir, "ablation.csv"), rows)
    print(f"{'extractor':<10}{'clusterer':<10}{'NMI':>8}{'silhouette':>12}{'log-rank p':>12}")
    for r in rows:
        s = r.scores
        print(f"{r.extractor:<10}{r.clusterer:<10}{_num(s['nmi']):>8}{_num(s['silhouette']):>12}"
              f"{_num(s['logrank_p']):>12}")
    if truth is not None:
        print("vq+rim ranks first on NMI" if ablation_winner(rows) else "vq+rim is not first on NMI")


def cmd_km_plot(args):
    ids, labels, _ = export.read_assignments(args.assignments)
    records = load_survival_csv(args.survival)
    lab = labels[_align(records.sample_ids, {s: i for i, s in enumerate(ids)}, args.survival)]
    curves = export.km_curves_by_group(records, lab)
    export.ensure_dir(args.out_dir)
    export.write_km_curves(os.path.join(args.out_dir, "km_curves.csv"), curves)
    export.plot_km_svg(os.path.join(args.out_dir, "km.svg"), curves)
    for g, c in curves.items():
        print(f"cluster {g}: n={int(c.at_risk[0]) if len(c.at_risk) else 0} "
              f"median survival {_num(survival.median_survival(c))}")


def _align(sample_ids, order, source):
    missing = [s for s in sample_ids if s not in order]
    if missing:
        raise VqRimError(f"{source}: samples without an assignment: {', '.join(missing[:5])}")
    return np.array([order[s] for s in sample_ids], dtype=np.int64)


def _num(v):
    if v is None:
        return "n/a"
    return f"{v:.4g}" if isinstance(v, float) else str(v)


# --------------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="vqrim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train VQ-RIM (or a baseline) and export all artifacts")
    _common(p)
    _data_options(p)
    p.add_argument("--method", help="vq-rim (default) or <ae|vae|vq>+<kmeans|spectral|gmm|rim>")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("synth", help="write a planted-partition dataset as CSV")
    _common(p)
    _add_fields(p, _SYNTH_FLAGS, prefix="synth_")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="score an assignments.csv against data, labels and survival")
    _common(p)
    p.add_argument("--assignments", required=True)
    p.add_argument("--data")
    p.add_argument("--labels-column")
    p.add_argument("--no-zscore", action="store_true")
    p.add_argument("--survival")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the extractor x clusterer comparison grid")
    _common(p)
    _data_options(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("km-plot", help="Kaplan-Meier curves per cluster as CSV and SVG")
    _common(p)
    p.add_argument("--assignments", required=True)
    p.add_argument("--survival", required=True)
    p.set_defaults(func=cmd_km_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (VqRimError, OSError) as exc:
        print(f"vqrim {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
