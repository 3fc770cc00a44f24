"""Dataset ingestion, the synthetic dual-ambiguity generator and fold bookkeeping.

Interchange format is JSON lines with an explicit header record:

    {"schema": "amber-ds-v1", "C": int, "dim_a": int, "dim_t": int, "folds": int}
    {"id": str, "h_a": [...], "h_t": [...], "votes": [int x C]}          # + optional "y"

Fold membership is positional: record i belongs to fold i mod folds. The
generator shuffles samples with its seed before writing, which realizes a
seeded round-robin assignment while keeping the record schema free of any
bookkeeping fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .distlib import RaterVotes, SoftLabel, aggregate_votes
from .errors import DataValidationError

SCHEMA = "amber-ds-v1"

# Stored soft labels may disagree with the recomputed vote normalization by
# at most this much before the record is treated as corrupt.
Y_CROSSCHECK_TOL = 1e-6


@dataclass
class Sample:
    id: str
    h_a: np.ndarray
    h_t: np.ndarray
    votes: RaterVotes
    y: SoftLabel
    fold: int


@dataclass
class Dataset:
    samples: list
    n_classes: int
    dim_a: int
    dim_t: int
    fold_count: int

    def __post_init__(self):
        if self.fold_count < 1:
            raise ValueError("fold_count must be >= 1")
        if self.samples:
            present = {s.fold for s in self.samples}
            if present != set(range(self.fold_count)):
                raise ValueError("folds must partition the samples with every fold non-empty")

    def __len__(self):
        return len(self.samples)

    def label_matrix(self) -> np.ndarray:
        return np.stack([s.y.probs for s in self.samples])

    def matrices(self, indices=None):
        """(h_a, h_t, y) matrices for the given sample indices (all by default)."""
        samples = self.samples if indices is None else [self.samples[i] for i in indices]
        h_a = np.stack([s.h_a for s in samples])
        h_t = np.stack([s.h_t for s in samples])
        y = np.stack([s.y.probs for s in samples])
        return h_a, h_t, y

    def with_fold_count(self, fold_count: int) -> "Dataset":
        """Re-partition by record order into a different number of folds."""
        if not 1 <= fold_count <= len(self.samples):
            raise ValueError(f"fold_count must be in [1, {len(self.samples)}]")
        samples = [
            Sample(s.id, s.h_a, s.h_t, s.votes, s.y, i % fold_count)
            for i, s in enumerate(self.samples)
        ]
        return Dataset(samples, self.n_classes, self.dim_a, self.dim_t, fold_count)


@dataclass
class SynthConfig:
    n_samples: int
    n_classes: int
    dim_a: int
    dim_t: int
    n_raters: int
    ambiguity_alpha: float
    conflict_rate: float
    noise_sigma: float
    seed: int
    fold_count: int = 5

    def __post_init__(self):
        if self.n_samples < 1 or self.n_classes < 2 or self.dim_a < 1 or self.dim_t < 1:
            raise ValueError("n_samples >= 1, n_classes >= 2 and positive dims required")
        if self.n_raters < 1:
            raise ValueError("n_raters must be >= 1")
        if self.ambiguity_alpha <= 0:
            raise ValueError("ambiguity_alpha must be > 0")
        if not 0.0 <= self.conflict_rate <= 1.0:
            raise ValueError("conflict_rate must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.n_samples < self.fold_count:
            raise ValueError("need at least one sample per fold")

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "n_classes": self.n_classes,
            "dim_a": self.dim_a,
            "dim_t": self.dim_t,
            "n_raters": self.n_raters,
            "ambiguity_alpha": self.ambiguity_alpha,
            "conflict_rate": self.conflict_rate,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "fold_count": self.fold_count,
        }


def class_anchors(rng, n_classes: int, dim: int) -> np.ndarray:
    """Seeded unit-norm anchor vector per class, pairwise distinct."""
    if n_classes > dim:
        raise ValueError(
            f"anchor construction needs n_classes <= dim, got {n_classes} > {dim}"
        )
    anchors = rng.standard_normal((n_classes, dim))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    diffs = anchors[:, None, :] - anchors[None, :, :]
    dist = np.linalg.norm(diffs, axis=2) + np.eye(n_classes)
    if dist.min() < 1e-6:
        raise ValueError("degenerate anchor draw, use a different seed")
    return anchors


def sample_votes(rng, pi: np.ndarray, n_raters: int) -> RaterVotes:
    """Draw annotator votes i.i.d. from the per-sample class distribution."""
    return RaterVotes(rng.multinomial(n_raters, pi))


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Seeded synthetic dataset with controllable rater and modality ambiguity.

    Per sample: pi ~ Dirichlet(alpha), votes ~ Multinomial(N, pi). The text
    cue class is argmax pi; with probability conflict_rate the audio cue is a
    different class drawn uniformly. Features are the cue-class anchors plus
    Gaussian noise whose expected norm is noise_sigma, so the signal-to-noise
    ratio against the unit-norm anchors does not depend on the feature dims.
    """
    rng = np.random.default_rng(cfg.seed)
    anchors_a = class_anchors(rng, cfg.n_classes, cfg.dim_a)
    anchors_t = class_anchors(rng, cfg.n_classes, cfg.dim_t)
    sd_a = cfg.noise_sigma / np.sqrt(cfg.dim_a)
    sd_t = cfg.noise_sigma / np.sqrt(cfg.dim_t)

    samples = []
    alpha = np.full(cfg.n_classes, cfg.ambiguity_alpha)
    for i in range(cfg.n_samples):
        pi = rng.dirichlet(alpha)
        votes = sample_votes(rng, pi, cfg.n_raters)
        c_t = int(np.argmax(pi))
        c_a = c_t
        if rng.random() < cfg.conflict_rate:
            offset = int(rng.integers(1, cfg.n_classes))
            c_a = (c_t + offset) % cfg.n_classes
        h_a = anchors_a[c_a] + sd_a * rng.standard_normal(cfg.dim_a)
        h_t = anchors_t[c_t] + sd_t * rng.standard_normal(cfg.dim_t)
        samples.append(
            Sample(f"synth-{i:06d}", h_a, h_t, votes, aggregate_votes(votes), fold=0)
        )

    order = rng.permutation(cfg.n_samples)
    shuffled = [samples[j] for j in order]
    for pos, s in enumerate(shuffled):
        s.fold = pos % cfg.fold_count
    return Dataset(shuffled, cfg.n_classes, cfg.dim_a, cfg.dim_t, cfg.fold_count)


def fold_split(ds: Dataset, fold: int):
    """(train, val, test) datasets: test = fold k, val = fold k+1 cyclic, train = rest."""
    if ds.fold_count < 3:
        raise ValueError("cross-validation splits need at least 3 folds")
    if not 0 <= fold < ds.fold_count:
        raise ValueError(f"fold must be in [0, {ds.fold_count}), got {fold}")
    val_fold = (fold + 1) % ds.fold_count

    def subset(pred):
        chosen = [s for s in ds.samples if pred(s.fold)]
        renumbered = [
            Sample(s.id, s.h_a, s.h_t, s.votes, s.y, 0) for s in chosen
        ]
        return Dataset(renumbered, ds.n_classes, ds.dim_a, ds.dim_t, 1)

    train = subset(lambda f: f != fold and f != val_fold)
    val = subset(lambda f: f == val_fold)
    test = subset(lambda f: f == fold)
    return train, val, test


# ---------------------------------------------------------------------------
# JSONL serialization


def save_jsonl(ds: Dataset, path):
    """Write the dataset in record order; floats round-trip exactly via repr."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "schema": SCHEMA,
            "C": ds.n_classes,
            "dim_a": ds.dim_a,
            "dim_t": ds.dim_t,
            "folds": ds.fold_count,
        }
        fh.write(json.dumps(header) + "\n")
        for s in ds.samples:
            record = {
                "id": s.id,
                "h_a": s.h_a.tolist(),
                "h_t": s.h_t.tolist(),
                "votes": s.votes.counts.tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def load_jsonl(path) -> Dataset:
    """Parse and validate a dataset file; every failure names its line."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataValidationError("empty dataset file", path=path)

    header = _parse_json(lines[0], 1, path)
    if header.get("schema") != SCHEMA:
        raise DataValidationError(f"unknown schema {header.get('schema')!r}", line=1, path=path)
    try:
        n_classes = int(header["C"])
        dim_a = int(header["dim_a"])
        dim_t = int(header["dim_t"])
        folds = int(header["folds"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataValidationError(f"bad header: {exc}", line=1, path=path) from None
    if n_classes < 2 or dim_a < 1 or dim_t < 1 or folds < 1:
        raise DataValidationError("header dimensions out of range", line=1, path=path)

    samples = []
    seen_ids = set()
    for idx, raw in enumerate(lines[1:]):
        line_no = idx + 2
        if not raw.strip():
            continue
        record = _parse_json(raw, line_no, path)
        sample = _parse_record(record, n_classes, dim_a, dim_t, line_no, path)
        if sample.id in seen_ids:
            raise DataValidationError(f"duplicate id {sample.id!r}", line=line_no, path=path)
        seen_ids.add(sample.id)
        sample.fold = len(samples) % folds
        samples.append(sample)

    if len(samples) < folds:
        raise DataValidationError(
            f"{len(samples)} records cannot fill {folds} folds", path=path
        )
    return Dataset(samples, n_classes, dim_a, dim_t, folds)


def _parse_json(raw, line_no, path):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"malformed JSON ({exc.msg})", line=line_no, path=path) from None
    if not isinstance(value, dict):
        raise DataValidationError("expected a JSON object", line=line_no, path=path)
    return value


def _parse_record(record, n_classes, dim_a, dim_t, line_no, path):
    def fail(msg):
        raise DataValidationError(msg, line=line_no, path=path)

    sample_id = record.get("id")
    if not isinstance(sample_id, str) or not sample_id:
        fail("missing or invalid 'id'")

    def vector(key, dim):
        v = record.get(key)
        if not isinstance(v, list) or len(v) != dim:
            fail(f"'{key}' must be a list of length {dim}")
        arr = np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            fail(f"non-finite values in '{key}'")
        return arr

    h_a = vector("h_a", dim_a)
    h_t = vector("h_t", dim_t)

    raw_votes = record.get("votes")
    if not isinstance(raw_votes, list) or len(raw_votes) != n_classes:
        fail(f"'votes' must be a list of length {n_classes}")
    if not all(isinstance(v, int) and v >= 0 for v in raw_votes):
        fail("'votes' entries must be non-negative integers")
    try:
        votes = RaterVotes(raw_votes)
    except ValueError as exc:
        fail(f"invalid votes: {exc}")
    y = aggregate_votes(votes)

    if "y" in record:
        stored = record["y"]
        if not isinstance(stored, list) or len(stored) != n_classes:
            fail(f"'y' must be a list of length {n_classes}")
        if np.max(np.abs(np.asarray(stored, dtype=np.float64) - y.probs)) > Y_CROSSCHECK_TOL:
            fail("stored 'y' disagrees with normalized votes")

    return Sample(sample_id, h_a, h_t, votes, y, fold=0)
