"""Shared value types, exceptions and base-rate estimation."""

from __future__ import annotations

import dataclasses
from typing import Mapping, Sequence

import numpy as np

RATE_CLAMP = 1e-9


class FairboundError(Exception):
    """Base class for all errors raised by this package."""


class EmptyGroup(FairboundError):
    """A conditioning subpopulation has no records."""


class MalformedData(FairboundError):
    """Input data is structurally invalid; ``row`` locates the offending record."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)


class NumericalFailure(FairboundError):
    pass


class TooFewSamples(FairboundError):
    pass


class InfeasibleCoefficients(FairboundError):
    """No representation is both alpha-fair and beta-discriminative under these base rates."""


@dataclasses.dataclass(frozen=True)
class PredictionRecord:
    s: int
    y: int
    score: float | None = None
    hard: int | None = None

    def __post_init__(self):
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise MalformedData(f"score {self.score} outside [0, 1]")
        if self.hard is not None and self.hard not in (0, 1):
            raise MalformedData(f"hard prediction {self.hard} is not binary")
        if self.s < 0 or self.y < 0:
            raise MalformedData("class indices must be non-negative")


@dataclasses.dataclass(frozen=True)
class Predictions:
    """Column-oriented view of many :class:`PredictionRecord`.

    ``score`` is either a vector of positive-class probabilities or, for the
    categorical metrics, an ``(n, n_classes)`` matrix of class probabilities.
    """

    s: np.ndarray
    y: np.ndarray
    score: np.ndarray | None = None
    hard: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.s).astype(int).ravel()
        y = np.asarray(self.y).astype(int).ravel()
        if s.size != y.size:
            raise MalformedData(f"s has {s.size} entries but y has {y.size}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "y", y)
        if self.score is not None:
            score = np.asarray(self.score, dtype=float)
            if score.shape[0] != s.size:
                raise MalformedData("score length does not match labels")
            bad = np.flatnonzero(~((score >= 0) & (score <= 1)).reshape(s.size, -1).all(axis=1))
            if bad.size:
                raise MalformedData("score outside [0, 1]", row=int(bad[0]))
            object.__setattr__(self, "score", score)
        if self.hard is not None:
            hard = np.asarray(self.hard).astype(int).ravel()
            if hard.size != s.size:
                raise MalformedData("hard prediction length does not match labels")
            object.__setattr__(self, "hard", hard)
        if np.any(s < 0) or np.any(y < 0):
            raise MalformedData("class indices must be non-negative")

    def __len__(self):
        return self.s.size

    @classmethod
    def from_records(cls, records: Sequence[PredictionRecord]) -> "Predictions":
        records = list(records)
        s = [r.s for r in records]
        y = [r.y for r in records]
        scores = [r.score for r in records]
        hards = [r.hard for r in records]
        score = None if any(v is None for v in scores) else np.array(scores, dtype=float)
        hard = None if any(v is None for v in hards) else np.array(hards, dtype=int)
        return cls(np.array(s, dtype=int), np.array(y, dtype=int), score, hard)

    def swap_groups(self) -> "Predictions":
        """Relabel a binary sensitive attribute ``s -> 1 - s``."""
        return dataclasses.replace(self, s=1 - self.s)


def as_predictions(records) -> Predictions:
    if isinstance(records, Predictions):
        return records
    return Predictions.from_records(records)


@dataclasses.dataclass(frozen=True)
class BaseRates:
    """Population quantities ``r = P(S=1)``, ``a = P(Y=1|S=0)``, ``b = P(Y=1|S=1)``."""

    r: float
    a: float
    b: float

    def __post_init__(self):
        for name in ("r", "a", "b"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"base rate {name}={v} must lie strictly inside (0, 1)")

    def clamped(self) -> "BaseRates":
        lo, hi = RATE_CLAMP, 1.0 - RATE_CLAMP
        return BaseRates(*(float(np.clip(v, lo, hi)) for v in (self.r, self.a, self.b)))

    def swapped(self) -> "BaseRates":
        return BaseRates(1.0 - self.r, self.b, self.a)

    @property
    def gap(self) -> float:
        return abs(self.a - self.b)


@dataclasses.dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    s: np.ndarray
    targets: Mapping[str, np.ndarray]
    feature_names: tuple[str, ...] = ()
    class_maps: Mapping[str, tuple[str, ...]] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise MalformedData(f"feature matrix must be 2-d, got shape {X.shape}")
        n = X.shape[0]
        s = np.asarray(self.s).astype(int).ravel()
        if s.size != n:
            raise MalformedData(f"sensitive column has {s.size} entries, expected {n}")
        targets = {}
        for name, col in self.targets.items():
            col = np.asarray(col).astype(int).ravel()
            if col.size != n:
                raise MalformedData(f"target {name!r} has {col.size} entries, expected {n}")
            targets[name] = col
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        return dataclasses.replace(
            self,
            X=self.X[idx],
            s=self.s[idx],
            targets={k: v[idx] for k, v in self.targets.items()},
        )


def _rates_from_labels(s, y) -> BaseRates:
    s = np.asarray(s).astype(int).ravel()
    y = np.asarray(y).astype(int).ravel()
    if s.size == 0:
        raise EmptyGroup("no records")
    if not (set(np.unique(s)) <= {0, 1} and set(np.unique(y)) <= {0, 1}):
        raise MalformedData("base rates need binary s and y")
    for g in (0, 1):
        ys = y[s == g]
        if ys.size == 0:
            raise EmptyGroup(f"no records with s={g}")
        for t in (0, 1):
            if not np.any(ys == t):
                raise EmptyGroup(f"no records with s={g}, y={t}")
    r = s.mean()
    a = y[s == 0].mean()
    b = y[s == 1].mean()
    lo, hi = RATE_CLAMP, 1.0 - RATE_CLAMP
    return BaseRates(float(np.clip(r, lo, hi)), float(np.clip(a, lo, hi)), float(np.clip(b, lo, hi)))


def base_rates(records, target: str | None = None) -> BaseRates:
    """Estimate ``(r, a, b)`` from prediction records or from a dataset column.

    >>> base_rates([PredictionRecord(0, 1), PredictionRecord(0, 0),
    ...             PredictionRecord(1, 1), PredictionRecord(1, 0)])
    BaseRates(r=0.5, a=0.5, b=0.5)
    """
    if isinstance(records, Dataset):
        if target is None:
            if len(records.targets) != 1:
                raise ValueError("dataset has several targets; name one")
            (target,) = records.targets
        return _rates_from_labels(records.s, records.targets[target])
    p = as_predictions(records)
    return _rates_from_labels(p.s, p.y)


@dataclasses.dataclass(frozen=True)
class Diagnostics:
    n_rows: int
    n_features: int
    sensitive_counts: dict
    target_counts: dict
    feature_min: np.ndarray
    feature_max: np.ndarray

    @property
    def ok(self) -> bool:
        return True


def validate_dataset(d: Dataset) -> Diagnostics:
    """Check a dataset for non-finite features and empty classes.

    Raises :class:`MalformedData` naming the first bad row, or
    :class:`EmptyGroup` when a sensitive or target class has no rows.
    """
    finite = np.isfinite(d.X)
    if not finite.all():
        row = int(np.flatnonzero(~finite.all(axis=1))[0])
        col = int(np.flatnonzero(~finite[row])[0])
        raise MalformedData(f"non-finite feature in column {col}", row=row)
    sens = {int(k): int(v) for k, v in zip(*np.unique(d.s, return_counts=True))}
    for g in (0, 1):
        if sens.get(g, 0) == 0:
            raise EmptyGroup(f"no records with s={g}")
    tcounts = {}
    for name, col in d.targets.items():
        counts = {int(k): int(v) for k, v in zip(*np.unique(col, return_counts=True))}
        for t in range(max(2, max(counts) + 1)):
            if counts.get(t, 0) == 0:
                raise EmptyGroup(f"target {name!r} has no records of class {t}")
        tcounts[name] = counts
    if d.n:
        lo, hi = d.X.min(axis=0), d.X.max(axis=0)
    else:
        lo = hi = np.zeros(d.X.shape[1])
    return Diagnostics(d.n, d.X.shape[1], sens, tcounts, lo, hi)
