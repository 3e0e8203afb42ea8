"""Dataset ingestion, normalization and synthetic test-case generators."""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ConstantColumnError, NonFiniteError, ParseError

CASE_CLUSTERS = "clusters"
CASE_ADDITIVE = "additive"
CASE_STEP = "step"


@dataclass
class NormStats:
    """Per-column normalization parameters (bias column excluded)."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float


@dataclass
class Dataset:
    """Normalized design matrix with a trailing bias column of ones."""

    X: np.ndarray
    y: np.ndarray
    norm_stats: NormStats
    columns: list[str]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def normalize(X_raw: np.ndarray, y_raw: np.ndarray,
              columns: list[str] | None = None) -> Dataset:
    """Zero-mean/unit-variance columns plus a bias column of ones (last)."""
    X_raw = np.asarray(X_raw, dtype=float)
    y_raw = np.asarray(y_raw, dtype=float)
    if not np.all(np.isfinite(X_raw)) or not np.all(np.isfinite(y_raw)):
        raise NonFiniteError("raw data contains non-finite entries")
    x_mean = X_raw.mean(axis=0)
    x_std = X_raw.std(axis=0)
    bad = np.nonzero(x_std == 0.0)[0]
    if bad.size:
        raise ConstantColumnError(
            f"column(s) {bad.tolist()} have zero standard deviation")
    y_std = float(y_raw.std())
    if y_std == 0.0:
        raise ConstantColumnError("target column has zero standard deviation")
    y_mean = float(y_raw.mean())
    X = np.column_stack([(X_raw - x_mean) / x_std, np.ones(X_raw.shape[0])])
    y = (y_raw - y_mean) / y_std
    if columns is None:
        columns = [f"x{j + 1}" for j in range(X_raw.shape[1])] + ["y"]
    stats = NormStats(x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)
    return Dataset(X=X, y=y, norm_stats=stats, columns=columns)


def denormalize(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Recover the raw feature matrix (bias dropped) and targets."""
    s = ds.norm_stats
    return ds.X[:, :-1] * s.x_std + s.x_mean, ds.y * s.y_std + s.y_mean


def normalize_with(X_raw: np.ndarray, y_raw: np.ndarray | None, stats: NormStats,
                   columns: list[str] | None = None) -> Dataset:
    """Apply existing training stats to new (test) data."""
    X_raw = np.asarray(X_raw, dtype=float)
    if X_raw.shape[1] != stats.x_mean.size:
        from .exceptions import DimensionMismatch
        raise DimensionMismatch(
            f"data has {X_raw.shape[1]} feature columns, model expects {stats.x_mean.size}")
    X = np.column_stack([(X_raw - stats.x_mean) / stats.x_std, np.ones(X_raw.shape[0])])
    y = np.zeros(X.shape[0]) if y_raw is None else (np.asarray(y_raw, dtype=float)
                                                    - stats.y_mean) / stats.y_std
    if columns is None:
        columns = [f"x{j + 1}" for j in range(X_raw.shape[1])] + ["y"]
    return Dataset(X=X, y=y, norm_stats=stats, columns=columns)


# ---------------------------------------------------------------------------
# CSV


def read_csv_raw(path: str, target_col: str | int | None = None,
                 ) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Parse a headered numeric CSV; the final column is the target by default.

    Raises :class:`ParseError` with the offending row/column on bad cells and
    :class:`NonFiniteError` when a cell parses to NaN or infinity.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row required") from None
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{r}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for c, cell in enumerate(row):
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}:{r}: column {header[c]!r} has non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(val):
                    raise NonFiniteError(
                        f"{path}:{r}: column {header[c]!r} has non-finite value {cell!r}")
                vals.append(val)
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float)
    if target_col is None:
        t = len(header) - 1
    elif isinstance(target_col, int):
        t = target_col
    else:
        try:
            t = header.index(target_col)
        except ValueError:
            raise ConfigError(f"target column {target_col!r} not in header {header}") from None
    mask = np.arange(len(header)) != t
    columns = [h for j, h in enumerate(header) if mask[j]] + [header[t]]
    return table[:, mask], table[:, t], columns


def load_csv(path: str, target_col: str | int | None = None) -> Dataset:
    """Read, normalize and bias-append a CSV dataset."""
    X_raw, y_raw, columns = read_csv_raw(path, target_col)
    return normalize(X_raw, y_raw, columns)


def write_csv(path: str, header: list[str], table: np.ndarray) -> None:
    """Atomic CSV write (temp file + rename), '.' decimal, shortest round-trip floats."""
    dir_ = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dir_, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in np.atleast_2d(table):
                writer.writerow([repr(float(v)) for v in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# synthetic cases


def _synth_clusters(n: int, rng: np.random.Generator, noise_std: float = 0.1):
    """Three clusters in two inputs with targets 1, 0 and 0.8.

    Both inputs carry the cluster structure, so neither is individually
    redundant even though either one suffices to separate the clusters.
    """
    sizes = [n - 2 * (n // 3), n // 3, n // 3]
    boxes = [(0.6, 1.4), (-0.4, 0.4), (-1.4, -0.6)]
    targets = [1.0, 0.0, 0.8]
    xs, ys = [], []
    for size, (lo, hi), f in zip(sizes, boxes, targets):
        xs.append(rng.uniform(lo, hi, size=(size, 2)))
        ys.append(np.full(size, f))
    X = np.vstack(xs)
    y = np.concatenate(ys) + noise_std * rng.standard_normal(n)
    return X, y


#: Additive effects of the ten-input case; effect 1 is identically zero
#: (irrelevant input), 2-5 are linear with increasing slope, 6-10 are
#: increasingly nonlinear (the last needs several hidden units).
_ADDITIVE_EFFECTS = (
    lambda x: np.zeros_like(x),
    lambda x: 0.10 * x,
    lambda x: 0.20 * x,
    lambda x: 0.30 * x,
    lambda x: 0.40 * x,
    lambda x: 0.60 * np.sin(x),
    lambda x: 0.70 * np.sin(1.5 * x),
    lambda x: 0.80 * np.sin(2.0 * x),
    lambda x: 0.90 * np.sin(2.5 * x),
    lambda x: 1.00 * np.where(x > 0.0, 0.5, -0.5),
)


def _synth_additive(n: int, rng: np.random.Generator, noise_std: float = 0.2):
    """Ten additive input effects of increasing nonlinearity plus one dead input.

    Each column is an independently permuted linear sample of [-pi, pi].
    """
    base = np.linspace(-math.pi, math.pi, n)
    X = np.column_stack([base[rng.permutation(n)] for _ in _ADDITIVE_EFFECTS])
    y = sum(eff(X[:, j]) for j, eff in enumerate(_ADDITIVE_EFFECTS))
    y = y + noise_std * rng.standard_normal(n)
    return X, y


def _synth_step(n: int, rng: np.random.Generator, noise_std: float = 0.1,
                jump: float = 1.0):
    """One-dimensional step: f(x) = 0 for x < 0 and ``jump`` for x >= 0."""
    x = rng.uniform(-3.0, 3.0, size=n)
    y = np.where(x >= 0.0, jump, 0.0) + noise_std * rng.standard_normal(n)
    return x[:, None], y


def synth_case_raw(case: str, n: int, seed: int, noise_std: float | None = None,
                   jump: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Raw (unnormalized) feature matrix and targets for a synthetic case."""
    if n < 10:
        raise ConfigError("synthetic cases need n >= 10")
    rng = np.random.default_rng(seed)
    if case == CASE_CLUSTERS:
        return _synth_clusters(n, rng, 0.1 if noise_std is None else noise_std)
    if case == CASE_ADDITIVE:
        return _synth_additive(n, rng, 0.2 if noise_std is None else noise_std)
    if case == CASE_STEP:
        return _synth_step(n, rng, 0.1 if noise_std is None else noise_std, jump)
    raise ConfigError(f"unknown synthetic case {case!r}")


def synth_case(case: str, n: int, seed: int, noise_std: float | None = None,
               jump: float = 1.0) -> Dataset:
    """Normalized, bias-appended synthetic dataset."""
    X_raw, y_raw = synth_case_raw(case, n, seed, noise_std, jump)
    return normalize(X_raw, y_raw)
