"""Dataset container, CSV I/O, polynomial bases, and stripe statistics.

Intensity and demand values are held in natural-log space internally; natural
(linear) values only appear at the I/O boundary, where a flag controls whether
the loader applies the log transform.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientData,
    MissingColumn,
    NonFiniteValue,
    NonPositiveValue,
    OverlappingStripes,
)

DEFAULT_STRIPE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class BasisConfig:
    """Polynomial basis degree for mean/variance regressions.

    Degrees above 3 invite overfitting and need an explicit override.
    """

    degree: int = 3
    allow_high_degree: bool = False

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.degree > 3 and not self.allow_high_degree:
            raise ValueError(
                "degree > 3 requires allow_high_degree=True"
            )


def polynomial_basis(x, config=3):
    """Powers (1, x, x^2, ..., x^degree) of a scalar or array of log-intensities."""
    degree = config.degree if isinstance(config, BasisConfig) else int(config)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("non-finite log-intensity in basis expansion")
    out = np.power.outer(x, np.arange(degree + 1))
    return out


@dataclass(frozen=True)
class DemandDataset:
    """Rows of (log-intensity, vector of log-demands) with demand labels."""

    x: np.ndarray
    y: np.ndarray
    names: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[0] != x.shape[0]:
            raise ValueError("x and y row counts differ")
        if y.shape[1] < 1:
            raise ValueError("at least one demand column required")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise NonFiniteValue("dataset contains non-finite values")
        if np.unique(x).size < 2:
            raise InsufficientData("at least 2 distinct intensity values required")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != y.shape[1]:
            raise ValueError("names length must match demand dimension")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def demand(self, index: int) -> np.ndarray:
        return self.y[:, index]


def load_dataset(source, intensity_col="im", demand_cols=None, log_space=True):
    """Load a dataset from CSV text (path, file object, or bytes).

    When log_space is False, values are natural-space and are log-transformed
    on load; every value must then be strictly positive.
    """
    close = False
    if isinstance(source, (str, os.PathLike)):
        fh = open(source, "r", newline="", encoding="utf-8")
        close = True
    elif isinstance(source, bytes):
        fh = io.StringIO(source.decode("utf-8"))
    else:
        fh = source
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MissingColumn("empty CSV")
        header = [h.strip() for h in header]
        if intensity_col not in header:
            raise MissingColumn(f"missing intensity column {intensity_col!r}")
        if demand_cols is None:
            demand_cols = [h for h in header if h != intensity_col]
        if not demand_cols:
            raise MissingColumn("no demand columns")
        for c in demand_cols:
            if c not in header:
                raise MissingColumn(f"missing demand column {c!r}")
        ix = header.index(intensity_col)
        iys = [header.index(c) for c in demand_cols]
        xs, ys = [], []
        for i, row in enumerate(reader):
            if not row:
                continue
            try:
                vals = [float(row[j]) for j in (ix, *iys)]
            except (ValueError, IndexError):
                raise NonFiniteValue(f"unparseable value in row {i}", row=i)
            if not all(np.isfinite(v) for v in vals):
                raise NonFiniteValue(f"non-finite value in row {i}", row=i)
            xs.append(vals[0])
            ys.append(vals[1:])
    finally:
        if close:
            fh.close()
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if not log_space:
        if np.any(x <= 0) or np.any(y <= 0):
            bad = int(np.argmax((x <= 0) | np.any(y <= 0, axis=1)))
            raise NonPositiveValue(
                f"log transform requested on non-positive value (row {bad})",
                row=bad,
            )
        x = np.log(x)
        y = np.log(y)
    meta = {"log_space_input": bool(log_space), "labels": list(demand_cols)}
    return DemandDataset(x=x, y=y, names=tuple(demand_cols), meta=meta)


def save_dataset(data: DemandDataset, path, intensity_col="im"):
    """Write a dataset as CSV (full float precision) plus a JSON metadata sidecar."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([intensity_col, *data.names])
        for i in range(data.n):
            writer.writerow(
                ["%.17g" % data.x[i], *("%.17g" % v for v in data.y[i])]
            )
    sidecar = {"log_space": True, "labels": list(data.names)}
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class StripeSet:
    """Ordered grouping of rows into intensity stripes."""

    levels: np.ndarray
    members: tuple
    tolerance: float

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        if np.any(np.diff(levels) <= 0):
            raise ValueError("stripe levels must be strictly increasing")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(
            self, "members", tuple(tuple(m) for m in self.members)
        )


def build_stripes(data: DemandDataset, tolerance=DEFAULT_STRIPE_TOLERANCE):
    """Group rows into stripes of near-equal log-intensity.

    Centers are the mean x of the members; a row within tolerance of two
    centers makes the grouping ambiguous.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    order = np.argsort(data.x, kind="stable")
    xs = data.x[order]
    clusters = []
    current = [0]
    center = xs[0]
    for i in range(1, len(xs)):
        if xs[i] - center <= tolerance:
            current.append(i)
            center = xs[current].mean()
        else:
            clusters.append(current)
            current = [i]
            center = xs[i]
    clusters.append(current)
    centers = np.array([xs[c].mean() for c in clusters])
    # ambiguity check: each row must be within tolerance of exactly one center
    dist = np.abs(xs[:, None] - centers[None, :])
    within = dist <= tolerance + 1e-15
    if np.any(within.sum(axis=1) > 1):
        raise OverlappingStripes(
            "a row lies within tolerance of two stripe centers; reduce tolerance"
        )
    members = [tuple(int(order[i]) for i in c) for c in clusters]
    return StripeSet(levels=centers, members=tuple(members), tolerance=float(tolerance))


@dataclass(frozen=True)
class StripeSummary:
    """Sample moments of the log-demands inside one stripe.

    std and corr are None when n < 2; corr entries are NaN whenever either
    component's std is zero.
    """

    level: float
    n: int
    mean: np.ndarray
    std: np.ndarray | None
    corr: np.ndarray | None


def stripe_summary(data: DemandDataset, stripes: StripeSet):
    """Per-stripe mean, standard deviation (divisor n-1), and Pearson correlation."""
    out = []
    for level, idx in zip(stripes.levels, stripes.members):
        block = data.y[list(idx), :]
        n = block.shape[0]
        mean = block.mean(axis=0)
        if n < 2:
            out.append(StripeSummary(float(level), n, mean, None, None))
            continue
        std = block.std(axis=0, ddof=1)
        p = block.shape[1]
        corr = np.full((p, p), np.nan)
        np.fill_diagonal(corr, 1.0)
        centered = block - mean
        for j in range(p):
            for k in range(j + 1, p):
                if std[j] > 0 and std[k] > 0:
                    c = centered[:, j] @ centered[:, k] / ((n - 1) * std[j] * std[k])
                    corr[j, k] = corr[k, j] = c
        out.append(StripeSummary(float(level), n, mean, std, corr))
    return out
