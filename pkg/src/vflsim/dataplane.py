"""Dataset ingestion, column standardization, and vertical feature partitioning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"

CONTIGUOUS = "contiguous"
ROUND_ROBIN = "round_robin"


class ParseError(ValueError):
    """Malformed LIBSVM input (bad token, bad label, non-increasing indices)."""


class BoundsError(ValueError):
    """Feature index outside the declared dimensionality."""


@dataclass
class Dataset:
    """Dense training set. Rows are samples, columns are features.

    Classification labels are +1/-1; regression labels are arbitrary reals.
    Instances are treated as immutable once constructed and may be shared
    freely across simulated workers.
    """

    features: np.ndarray
    labels: np.ndarray
    task: str = CLASSIFICATION

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have exactly one entry per sample")
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == CLASSIFICATION and self.n_samples:
            if not np.all(np.isin(self.labels, (-1.0, 1.0))):
                raise ValueError("classification labels must be +1 or -1")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass
class VerticalPartition:
    """Disjoint feature groups covering all columns, one group per worker.

    Workers are numbered 1..q. The active worker is the one holding labels.
    """

    groups: list = field(default_factory=list)
    active_worker: int = 1

    def __post_init__(self):
        self.groups = [np.asarray(g, dtype=np.intp) for g in self.groups]
        if not self.groups:
            raise ValueError("a partition needs at least one group")
        for g in self.groups:
            if g.size == 0:
                raise ValueError("every feature group must be non-empty")
        merged = np.concatenate(self.groups)
        d = merged.size
        if not np.array_equal(np.sort(merged), np.arange(d)):
            raise ValueError("groups must be disjoint and cover all features")
        if not 1 <= self.active_worker <= len(self.groups):
            raise ValueError(
                f"active_worker must be in [1, {len(self.groups)}], got {self.active_worker}"
            )

    @property
    def q(self) -> int:
        return len(self.groups)

    @property
    def n_features(self) -> int:
        return sum(g.size for g in self.groups)

    def group(self, worker: int) -> np.ndarray:
        """Feature indices held by a 1-based worker id."""
        return self.groups[worker - 1]


def parse_libsvm(
    text: str,
    n_features: int,
    task: str = CLASSIFICATION,
    zero_one_labels: bool = False,
) -> Dataset:
    """Parse `<label> <idx>:<val> ...` lines into a dense Dataset.

    Indices are 1-based and must be strictly increasing per line; absent
    indices become 0.0. With ``zero_one_labels`` a 0 label is mapped to -1
    (the 0/1 convention some classification corpora use). Blank lines and
    `#` comment lines are skipped.
    """
    rows = []
    labels = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            label = float(parts[0])
        except ValueError:
            raise ParseError(f"line {lineno}: bad label {parts[0]!r}") from None
        if zero_one_labels and task == CLASSIFICATION and label == 0.0:
            label = -1.0
        x = np.zeros(n_features)
        prev = 0
        for tok in parts[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep or not val_s:
                raise ParseError(f"line {lineno}: expected idx:val, got {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"line {lineno}: bad idx:val pair {tok!r}") from None
            if idx < 1 or idx > n_features:
                raise BoundsError(
                    f"line {lineno}: index {idx} outside [1, {n_features}]"
                )
            if idx <= prev:
                raise ParseError(f"line {lineno}: indices must be strictly increasing")
            prev = idx
            x[idx - 1] = val
        rows.append(x)
        labels.append(label)
    features = np.array(rows) if rows else np.zeros((0, n_features))
    return Dataset(features, np.array(labels), task)


def to_libsvm(ds: Dataset) -> str:
    """Serialize a dense Dataset back to LIBSVM text (zeros omitted)."""
    lines = []
    for i in range(ds.n_samples):
        toks = ["%.17g" % ds.labels[i]]
        row = ds.features[i]
        for j in np.flatnonzero(row):
            toks.append("%d:%s" % (j + 1, "%.17g" % row[j]))
        lines.append(" ".join(toks))
    return "\n".join(lines) + ("\n" if lines else "")


def standardize(ds: Dataset):
    """Column-wise center and scale to unit population stddev.

    Zero-variance columns become all-zeros instead of erroring (one-hot
    corpora produce them routinely). Returns the new Dataset plus the
    per-column (mean, stddev) for reuse on held-out data; stddev is
    reported as 0 for the zeroed columns.
    """
    if ds.n_samples < 2:
        raise ValueError("standardize needs at least 2 samples")
    mean = ds.features.mean(axis=0)
    std = ds.features.std(axis=0)
    safe = np.where(std > 0.0, std, 1.0)
    z = (ds.features - mean) / safe
    z[:, std == 0.0] = 0.0
    return Dataset(z, ds.labels.copy(), ds.task), mean, std


def partition_features(
    d: int, q: int, mode: str = CONTIGUOUS, active_worker: int = 1
) -> VerticalPartition:
    """Split feature indices [0, d) into q groups.

    Contiguous mode gives the first (d mod q) groups one extra feature;
    round_robin assigns feature j to group j mod q.
    """
    if q < 1 or q > d:
        raise ValueError(f"need 1 <= q <= d, got q={q}, d={d}")
    if mode == CONTIGUOUS:
        hi, r = divmod(d, q)
        sizes = [hi + 1] * r + [hi] * (q - r)
        edges = np.cumsum([0] + sizes)
        groups = [np.arange(edges[k], edges[k + 1]) for k in range(q)]
    elif mode == ROUND_ROBIN:
        groups = [np.arange(k, d, q) for k in range(q)]
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    return VerticalPartition(groups, active_worker)


def generate_synthetic(
    n: int, d: int, task: str = CLASSIFICATION, seed: int = 0, noise: float = 0.3
) -> Dataset:
    """Seeded synthetic problem: gaussian features, linear ground truth.

    Classification labels are the sign of the noisy linear score (so the
    classes overlap and the regularized optimum stays bounded); regression
    labels are the score plus gaussian noise of the given scale.
    """
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d) / np.sqrt(d)
    features = rng.normal(size=(n, d))
    score = features @ w
    eps = noise * rng.normal(size=n)
    if task == CLASSIFICATION:
        labels = np.where(score + eps >= 0.0, 1.0, -1.0)
    elif task == REGRESSION:
        labels = score + eps
    else:
        raise ValueError(f"unknown task {task!r}")
    return Dataset(features, labels, task)
