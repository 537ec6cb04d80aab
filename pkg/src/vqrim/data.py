"""Expression datasets: CSV ingestion, survival tables and a planted-partition generator."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)


@dataclass
class SurvivalRecords:
    """Follow-up time and event flag (1 = death observed, 0 = censored) per sample."""

    sample_ids: list
    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=np.float64)
        self.event = np.asarray(self.event, dtype=np.int64)
        if not (len(self.sample_ids) == len(self.time) == len(self.event)):
            raise InputError("survival columns have different lengths")
        if np.any(self.time < 0) or not np.all(np.isfinite(self.time)):
            raise InputError("survival times must be finite and non-negative")
        if not np.all(np.isin(self.event, (0, 1))):
            raise InputError("event indicators must be 0 or 1")

    def __len__(self):
        return len(self.sample_ids)

    def subset(self, idx):
        idx = np.asarray(idx)
        return SurvivalRecords([self.sample_ids[i] for i in idx], self.time[idx], self.event[idx])


@dataclass
class ExpressionDataset:
    sample_ids: list
    feature_ids: list
    values: np.ndarray
    labels: list | None = None
    survival: SurvivalRecords | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.sample_ids)
        if self.values.ndim != 2 or self.values.shape != (n, len(self.feature_ids)):
            raise InputError(f"values shape {self.values.shape} does not match "
                             f"{n} samples x {len(self.feature_ids)} features")
        dupes = _duplicates(self.sample_ids)
        if dupes:
            raise InputError(f"duplicate sample id {dupes[0]!r}")
        if self.labels is not None and len(self.labels) != n:
            raise InputError("labels do not align with samples")
        if self.survival is not None and list(self.survival.sample_ids) != list(self.sample_ids):
            raise InputError("survival records do not align with samples")

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_features(self):
        return self.values.shape[1]

    def zscore(self):
        """Copy with every feature centered and scaled to unit standard deviation."""
        mu = self.values.mean(axis=0)
        sd = self.values.std(axis=0)
        sd[sd == 0] = 1.0
        out = ExpressionDataset(list(self.sample_ids), list(self.feature_ids),
                                (self.values - mu) / sd, self.labels, self.survival)
        for extra in ("latent", "truth"):
            if hasattr(self, extra):
                setattr(out, extra, getattr(self, extra))
        return out


def _duplicates(ids):
    seen, dupes = set(), []
    for s in ids:
        if s in seen:
            dupes.append(s)
        seen.add(s)
    return dupes


def load_expression_csv(path, zscore=False, labels_column=None):
    """Read a samples x features CSV: header row of feature ids, first column sample ids.

    ``labels_column`` names a non-numeric column holding reference labels; it
    is removed from the feature matrix.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise InputError(f"{path}: empty file (need a header and at least one sample)")
    header = rows[0]
    feature_ids = header[1:]
    label_pos = None
    if labels_column is not None:
        if labels_column not in feature_ids:
            raise InputError(f"{path}: no column named {labels_column!r}")
        label_pos = feature_ids.index(labels_column)
        feature_ids = feature_ids[:label_pos] + feature_ids[label_pos + 1:]
    if not feature_ids:
        raise InputError(f"{path}: no feature columns")
    sample_ids, values, labels = [], [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        cells = row[1:]
        if label_pos is not None:
            labels.append(cells.pop(label_pos))
        parsed = []
        for c, cell in enumerate(cells):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise InputError(f"{path}: non-numeric value {cell!r} at row {r}, "
                                 f"column {feature_ids[c]!r}") from None
        sample_ids.append(row[0])
        values.append(parsed)
    dupes = _duplicates(sample_ids)
    if dupes:
        raise InputError(f"{path}: duplicate sample id {dupes[0]!r}")
    values = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path}: non-finite values")
    ds = ExpressionDataset(sample_ids, feature_ids, values, labels if label_pos is not None else None)
    return ds.zscore() if zscore else ds


def load_survival_csv(path, dataset=None):
    """Read ``sample_id,time,event`` rows; optionally join them onto ``dataset``.

    When joining, ids missing from the dataset are dropped with a warning and
    the returned dataset keeps only samples that have survival data.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"sample_id", "time", "event"} - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"{path}: missing columns {sorted(missing)}")
        ids, times, events = [], [], []
        for r, row in enumerate(reader, start=2):
            try:
                t = float(row["time"])
                e = float(row["event"])
            except ValueError:
                raise InputError(f"{path}: non-numeric time/event at row {r}") from None
            if t < 0:
                raise InputError(f"{path}: negative time at row {r}")
            if e not in (0.0, 1.0):
                raise InputError(f"{path}: event must be 0 or 1 at row {r}, got {row['event']!r}")
            ids.append(row["sample_id"])
            times.append(t)
            events.append(int(e))
    records = SurvivalRecords(ids, times, events)
    if dataset is None:
        return records
    pos = {s: i for i, s in enumerate(ids)}
    known = set(dataset.sample_ids)
    unmatched = [s for s in ids if s not in known]
    if unmatched:
        log.warning("survival ids not in dataset (dropped): %s", ", ".join(unmatched))
    keep = [i for i, s in enumerate(dataset.sample_ids) if s in pos]
    if len(keep) < dataset.n_samples:
        log.warning("%d samples have no survival record", dataset.n_samples - len(keep))
    sids = [dataset.sample_ids[i] for i in keep]
    surv = records.subset([pos[s] for s in sids])
    labels = None if dataset.labels is None else [dataset.labels[i] for i in keep]
    return ExpressionDataset(sids, list(dataset.feature_ids), dataset.values[keep], labels, surv)


@dataclass
class SyntheticSpec:
    n_clusters: int = 3
    samples_per_cluster: int | list = 200
    latent_dim: int = 10
    output_dim: int = 200
    separation: float = 8.0
    noise: float = 1.0
    nonlinear: bool = False
    feature_noise: float = 0.0
    hazards: list | None = None  # default: 1.0, 0.5, 0.25, ...
    censoring_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1 or self.latent_dim < 1 or self.output_dim < 1:
            raise InputError("cluster count and dimensions must be positive")
        if not 0.0 <= self.censoring_rate < 1.0:
            raise InputError("censoring rate must lie in [0, 1)")
        if self.hazards is not None:
            if len(self.hazards) != self.n_clusters or min(self.hazards) <= 0:
                raise InputError("need one positive hazard per cluster")

    @property
    def sizes(self):
        s = self.samples_per_cluster
        return [int(s)] * self.n_clusters if np.isscalar(s) else [int(v) for v in s]

    @property
    def cluster_hazards(self):
        if self.hazards is not None:
            return [float(h) for h in self.hazards]
        return [0.5 ** k for k in range(self.n_clusters)]


def _centers(rng, k, dim, separation):
    if k == 1:
        return np.zeros((1, dim))
    # typical pairwise distance ~ 1.5 * separation, then reject until the minimum clears it
    scale = 1.5 * separation / np.sqrt(2.0 * dim)
    for _ in range(10_000):
        c = rng.normal(0.0, scale, size=(k, dim))
        d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
        if d[np.triu_indices(k, 1)].min() >= separation:
            return c
        scale *= 1.001
    raise InputError("could not place cluster centers; lower the separation")


def generate_synthetic(spec=None, **kwargs):
    """Planted-partition dataset with ground-truth labels and survival.

    The returned dataset additionally carries ``latent`` (pre-mixing
    coordinates) and ``truth`` (integer planted labels) attributes.
    """
    spec = spec or SyntheticSpec(**kwargs)
    rng = np.random.default_rng(spec.seed)
    centers = _centers(rng, spec.n_clusters, spec.latent_dim, spec.separation)
    sizes = spec.sizes
    truth = np.repeat(np.arange(spec.n_clusters), sizes)
    latent = centers[truth] + rng.normal(0.0, spec.noise, size=(len(truth), spec.latent_dim))
    mixing = rng.normal(0.0, 1.0 / np.sqrt(spec.latent_dim), size=(spec.latent_dim, spec.output_dim))
    x = latent @ mixing
    if spec.nonlinear:
        x = np.tanh(x / x.std())
    if spec.feature_noise:
        x = x + rng.normal(0.0, spec.feature_noise, size=x.shape)

    hazards = np.asarray(spec.cluster_hazards)[truth]
    t_event = rng.exponential(1.0 / hazards)
    censored = rng.random(len(truth)) < spec.censoring_rate
    t_obs = np.where(censored, rng.random(len(truth)) * t_event, t_event)
    events = (~censored).astype(np.int64)

    n = len(truth)
    width = len(str(n - 1))
    sample_ids = [f"S{i:0{width}d}" for i in range(n)]
    feature_ids = [f"G{j:0{len(str(spec.output_dim - 1))}d}" for j in range(spec.output_dim)]
    ds = ExpressionDataset(sample_ids, feature_ids, x, labels=[f"C{k}" for k in truth],
                           survival=SurvivalRecords(list(sample_ids), t_obs, events))
    ds.latent = latent
    ds.truth = truth
    return ds


def write_expression_csv(dataset, path, labels_column=None):
    """Inverse of :func:`load_expression_csv`; labels go in a trailing ``labels_column``."""
    with_labels = labels_column is not None and dataset.labels is not None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *dataset.feature_ids] + ([labels_column] if with_labels else []))
        for i, (sid, row) in enumerate(zip(dataset.sample_ids, dataset.values)):
            w.writerow([sid, *(repr(float(v)) for v in row)]
                       + ([dataset.labels[i]] if with_labels else []))


def write_survival_csv(records, path, labels=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "time", "event"] + (["label"] if labels is not None else []))
        for i, sid in enumerate(records.sample_ids):
            row = [sid, repr(float(records.time[i])), int(records.event[i])]
            if labels is not None:
                row.append(labels[i])
            w.writerow(row)


def labels_to_int(labels):
    """Map arbitrary hashable labels to ``0..K-1`` in order of first appearance."""
    mapping = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        out[i] = mapping.setdefault(lab, len(mapping))
    return out
