"""CSV ingestion and synthetic populations.

Tabular files are described by a :class:`ColumnSchema` that assigns each
header column a role.  Categorical features are one-hot encoded and numeric
features standardized with statistics from the fitting rows only.

The generators build populations with known fairness structure: a
calibration counterexample where the representation is perfectly fair yet
the score is maximally uncalibrated across groups, a family with a tunable
correlation between the sensitive attribute and one of three targets, and
an exactly fair and fully informative representation.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from typing import Mapping, Sequence

import numpy as np

from fairbound.core import Dataset, FairboundError, MalformedData, Predictions

NUMERIC = "numeric"
CATEGORICAL = "categorical"
SENSITIVE = "sensitive"
TARGET = "target"
IGNORE = "ignore"
_ROLES = (NUMERIC, CATEGORICAL, SENSITIVE, TARGET, IGNORE)
MISSING = ("", "?", "NA", "nan", "NaN")


class UnknownCategory(FairboundError):
    """A category not seen when the encoder was fitted."""


@dataclasses.dataclass(frozen=True)
class ColumnSchema:
    """Role per column, plus an optional fixed class order for label columns.

    Roles are written ``numeric``, ``categorical``, ``ignore``,
    ``sensitive`` or ``target``; label roles may list their classes in index
    order, e.g. ``sensitive:Male,Female`` maps ``Male -> 0, Female -> 1``.
    """

    roles: Mapping[str, str]
    orders: Mapping[str, tuple[str, ...]] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        for col, role in self.roles.items():
            if role not in _ROLES:
                raise ValueError(f"column {col!r}: unknown role {role!r}")
        sens = [c for c, r in self.roles.items() if r == SENSITIVE]
        if len(sens) != 1:
            raise ValueError(f"schema needs exactly one sensitive column, found {len(sens)}")
        if not self.targets:
            raise ValueError("schema needs at least one target column")

    @classmethod
    def parse(cls, spec: Mapping[str, str]) -> "ColumnSchema":
        roles, orders = {}, {}
        for col, text in spec.items():
            role, _, order = text.strip().partition(":")
            roles[col] = role.strip().lower()
            if order:
                orders[col] = tuple(v.strip() for v in order.split(","))
        return cls(roles, orders)

    def as_strings(self) -> dict:
        out = {}
        for col, role in self.roles.items():
            out[col] = role + (":" + ",".join(self.orders[col]) if col in self.orders else "")
        return out

    @property
    def sensitive(self) -> str:
        return next(c for c, r in self.roles.items() if r == SENSITIVE)

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(c for c, r in self.roles.items() if r == TARGET)

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(c for c, r in self.roles.items() if r in (NUMERIC, CATEGORICAL))


def adult_schema() -> ColumnSchema:
    """Schema for the census income file written by ``demos/prepare_adult.py``."""
    return ColumnSchema.parse({
        "age": NUMERIC,
        "workclass": CATEGORICAL,
        "fnlwgt": IGNORE,
        "education": CATEGORICAL,
        "education-num": NUMERIC,
        "marital-status": CATEGORICAL,
        "occupation": CATEGORICAL,
        "relationship": CATEGORICAL,
        "race": CATEGORICAL,
        "sex": "sensitive:Male,Female",
        "capital-gain": NUMERIC,
        "capital-loss": NUMERIC,
        "hours-per-week": NUMERIC,
        "native-country": CATEGORICAL,
        "income": "target:<=50K,>50K",
    })


@dataclasses.dataclass
class RawTable:
    header: tuple[str, ...]
    rows: list[list[str]]
    lines: list[int]

    def column(self, name: str) -> list[str]:
        j = self.header.index(name)
        return [r[j] for r in self.rows]


def read_csv(path, schema: ColumnSchema | None = None) -> RawTable:
    """Read a headed, comma-separated UTF-8 file and check it against ``schema``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise MalformedData("file is empty", row=1) from None
        rows, lines = [], []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedData(f"expected {len(header)} fields, found {len(row)}", row=reader.line_num)
            rows.append([v.strip() for v in row])
            lines.append(reader.line_num)
    if schema is not None:
        missing = [c for c in schema.roles if c not in header]
        extra = [c for c in header if c not in schema.roles]
        if missing or extra:
            raise MalformedData(f"header does not match schema (missing {missing}, unexpected {extra})", row=1)
    return RawTable(header, rows, lines)


@dataclasses.dataclass
class TabularEncoder:
    """Fitted encoding of a schema: category vocabularies and numeric scaling."""

    schema: ColumnSchema
    categories: dict[str, list[str]]
    means: dict[str, float]
    scales: dict[str, float]

    @classmethod
    def fit(cls, table: RawTable, schema: ColumnSchema, fit_rows=None) -> "TabularEncoder":
        idx = np.arange(len(table.rows)) if fit_rows is None else np.asarray(fit_rows)
        categories, means, scales = {}, {}, {}
        for col, role in schema.roles.items():
            values = table.column(col)
            if role in (CATEGORICAL, SENSITIVE, TARGET):
                # label columns with a declared order keep it; otherwise order of first appearance
                seen = list(schema.orders.get(col, ()))
                for v in values:
                    if v not in seen and v not in MISSING:
                        seen.append(v)
                categories[col] = seen
            elif role == NUMERIC:
                nums = _numeric_column(table, col)
                mu = float(nums[idx].mean())
                sd = float(nums[idx].std())
                means[col], scales[col] = mu, sd if sd > 1e-12 else 1.0
        return cls(schema, categories, means, scales)

    @property
    def feature_names(self) -> tuple[str, ...]:
        names = []
        for col in self.schema.features:
            if self.schema.roles[col] == NUMERIC:
                names.append(col)
            else:
                names += [f"{col}={v}" for v in self.categories[col]]
        return tuple(names)

    def _index(self, table, col):
        vocab = {v: i for i, v in enumerate(self.categories[col])}
        out = np.empty(len(table.rows), dtype=int)
        for i, v in enumerate(table.column(col)):
            if v in MISSING:
                raise MalformedData(f"missing value in column {col!r}", row=table.lines[i])
            if v not in vocab:
                raise UnknownCategory(f"column {col!r}: category {v!r} was not seen when fitting (line {table.lines[i]})")
            out[i] = vocab[v]
        return out

    def transform(self, table: RawTable) -> Dataset:
        blocks = []
        for col in self.schema.features:
            if self.schema.roles[col] == NUMERIC:
                blocks.append(((_numeric_column(table, col) - self.means[col]) / self.scales[col])[:, None])
            else:
                codes = self._index(table, col)
                blocks.append(np.eye(len(self.categories[col]))[codes])
        n = len(table.rows)
        X = np.hstack(blocks) if blocks else np.zeros((n, 0))
        sens = self.schema.sensitive
        labels = {sens: tuple(self.categories[sens])}
        targets = {}
        for t in self.schema.targets:
            targets[t] = self._index(table, t)
            labels[t] = tuple(self.categories[t])
        return Dataset(X, self._index(table, sens), targets, self.feature_names, labels)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.as_strings(),
            "categories": self.categories,
            "means": self.means,
            "scales": self.scales,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TabularEncoder":
        return cls(ColumnSchema.parse(d["schema"]), {k: list(v) for k, v in d["categories"].items()},
                   dict(d["means"]), dict(d["scales"]))


def _numeric_column(table: RawTable, col: str) -> np.ndarray:
    out = np.empty(len(table.rows))
    for i, v in enumerate(table.column(col)):
        if v in MISSING:
            raise MalformedData(f"missing value in column {col!r}", row=table.lines[i])
        try:
            out[i] = float(v)
        except ValueError:
            raise MalformedData(f"column {col!r}: {v!r} is not a number", row=table.lines[i]) from None
        if not np.isfinite(out[i]):
            raise MalformedData(f"column {col!r}: non-finite value", row=table.lines[i])
    return out


def load_csv(path, schema: ColumnSchema, fit_rows=None, encoder: TabularEncoder | None = None,
             return_encoder: bool = False):
    """Load a CSV into a :class:`Dataset`.

    Without ``encoder`` a new one is fitted, with numeric statistics taken
    from ``fit_rows`` (all rows by default) and every category seen in the
    file given an index.  A supplied ``encoder`` is reused as is, and
    categories it does not know raise :class:`UnknownCategory`.
    """
    table = read_csv(path, schema)
    if encoder is None:
        encoder = TabularEncoder.fit(table, schema, fit_rows)
    d = encoder.transform(table)
    return (d, encoder) if return_encoder else d


def write_dataset_csv(path, d: Dataset, sensitive: str = "s"):
    """Write features as ``x0..x{d-1}`` then the sensitive and target columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        names = [f"x{j}" for j in range(d.X.shape[1])]
        w.writerow(names + [sensitive, *d.targets])
        cols = [d.s, *d.targets.values()]
        for i in range(d.n):
            w.writerow([f"{v:.10g}" for v in d.X[i]] + [int(c[i]) for c in cols])


def dataset_schema(d: Dataset, sensitive: str = "s") -> ColumnSchema:
    """Schema matching :func:`write_dataset_csv` output, with labels in index order."""
    roles = {f"x{j}": NUMERIC for j in range(d.X.shape[1])}
    roles[sensitive] = "sensitive:0,1"
    for t, col in d.targets.items():
        k = max(int(col.max()) + 1, 2)
        roles[t] = "target:" + ",".join(str(c) for c in range(k))
    return ColumnSchema.parse(roles)


# ----------------------------------------------------------------------------
# synthetic populations


def synth_muc_counterexample(n: int, delta: float, seed: int = 0, grid: int = 1000):
    """Perfectly fair representation whose natural score is maximally uncalibrated.

    In both groups the representation ``z`` puts mass ``delta`` on ``1/2``
    and spreads the rest uniformly over ``grid`` points of ``[0, 1]`` that
    avoid ``1/2``.  Away from the atom ``y = [z > 1/2]``; the atom is
    labelled ``y = 0`` in group 0 and ``y = 1`` in group 1.  The score is
    0 below ``1/2``, 1 above and ``0.5`` at the atom, so the positive rate at
    score ``0.5`` is 0 in one group and 1 in the other while balanced
    accuracy stays above ``1 - delta``.

    Returns ``(predictions, z)``.
    """
    if n < 100:
        raise ValueError("need n >= 100")
    if not 0 < delta <= 0.1:
        raise ValueError("delta must lie in (0, 0.1]")
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2, size=n)
    atom = rng.random(n) < delta
    points = (np.arange(grid) + 0.5) / grid
    points = points[points != 0.5]
    z = rng.choice(points, size=n)
    z[atom] = 0.5
    y = (z > 0.5).astype(int)
    y[atom] = s[atom]
    score = np.where(z > 0.5, 1.0, 0.0)
    score[atom] = 0.5
    return Predictions(s, y, score), z


def _random_rotation(dim: int, seed: int) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


CORRELATED_TARGETS = ("t1", "t2", "t3")


def synth_correlated(n: int, p1: float, p2: float, r: float = 0.5, seed: int = 0,
                     noise: float = 0.1, n_nuisance: int = 8, rotation_seed: int = 1234) -> Dataset:
    """Sensitive attribute plus three binary targets, one tied to it.

    ``S ~ Bernoulli(r)``; ``P(T1 = 1 | S = 0) = p1`` and ``P(T1 = 1 | S = 1) = p2``;
    ``T2`` and ``T3`` are fair coins independent of everything.  Features
    are the one-hot codes of the four attributes plus ``n_nuisance`` extra
    coordinates, all with Gaussian noise of scale ``noise``, then mixed by a
    fixed random rotation (seeded separately, so every sample shares it).
    """
    for name, v in (("p1", p1), ("p2", p2)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} must lie in [0, 1]")
    if not 0.0 < r < 1.0:
        raise ValueError("r must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    s = (rng.random(n) < r).astype(int)
    t1 = (rng.random(n) < np.where(s == 1, p2, p1)).astype(int)
    t2 = rng.integers(0, 2, size=n)
    t3 = rng.integers(0, 2, size=n)
    onehots = [np.eye(2)[v] for v in (s, t1, t2, t3)]
    clean = np.hstack(onehots + [np.zeros((n, n_nuisance))])
    X = clean + noise * rng.normal(size=clean.shape)
    X = X @ _random_rotation(X.shape[1], rotation_seed)
    return Dataset(X, s, dict(zip(CORRELATED_TARGETS, (t1, t2, t3))),
                   tuple(f"x{j}" for j in range(X.shape[1])))


def synth_exact(n: int, r: float, common_rate: float, seed: int = 0, spread: float = 0.4):
    """Population where a single feature is both exactly fair and fully informative.

    ``S ~ Bernoulli(r)`` and ``Y ~ Bernoulli(common_rate)`` independently,
    and ``z = y + U[0, spread]``.  Returns ``(dataset, z)`` with ``z`` as the
    only feature column.
    """
    if not (0 < r < 1 and 0 < common_rate < 1):
        raise ValueError("rates must lie in (0, 1)")
    if not 0 <= spread < 1:
        raise ValueError("spread must lie in [0, 1) to keep the classes apart")
    rng = np.random.default_rng(seed)
    s = (rng.random(n) < r).astype(int)
    y = (rng.random(n) < common_rate).astype(int)
    z = y + spread * rng.random(n)
    return Dataset(z[:, None], s, {"y": y}, ("z",)), z


def write_sidecar(path, params: Mapping):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dict(params), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_records_csv(path, records: Predictions, z: Sequence[float] | None = None):
    """Prediction CSV with columns ``[z,] s, y, score[, yhat]``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = (["z"] if z is not None else []) + ["s", "y", "score"] + (["yhat"] if records.hard is not None else [])
        w.writerow(head)
        for i in range(len(records)):
            row = ([f"{z[i]:.10g}"] if z is not None else []) + [int(records.s[i]), int(records.y[i])]
            row.append(f"{records.score[i]:.10g}" if records.score is not None else "")
            if records.hard is not None:
                row.append(int(records.hard[i]))
            w.writerow(row)


def read_records_csv(path) -> Predictions:
    """Read a prediction CSV with columns ``s, y`` and at least one of ``score``, ``yhat``."""
    table = read_csv(path)
    for col in ("s", "y"):
        if col not in table.header:
            raise MalformedData(f"prediction file lacks the {col!r} column", row=1)
    if "score" not in table.header and "yhat" not in table.header:
        raise MalformedData("prediction file lacks both 'score' and 'yhat' columns", row=1)

    def ints(col):
        out = np.empty(len(table.rows), dtype=int)
        for i, v in enumerate(table.column(col)):
            try:
                out[i] = int(v)
            except ValueError:
                raise MalformedData(f"column {col!r}: {v!r} is not an integer", row=table.lines[i]) from None
        return out

    score = None
    if "score" in table.header:
        score = np.empty(len(table.rows))
        for i, v in enumerate(table.column("score")):
            try:
                score[i] = float(v)
            except ValueError:
                raise MalformedData(f"column 'score': {v!r} is not a number", row=table.lines[i]) from None
            if not 0.0 <= score[i] <= 1.0:
                raise MalformedData(f"score {v} outside [0, 1]", row=table.lines[i])
    hard = ints("yhat") if "yhat" in table.header else None
    if hard is not None and np.any((hard != 0) & (hard != 1)):
        bad = int(np.flatnonzero((hard != 0) & (hard != 1))[0])
        raise MalformedData("yhat must be 0 or 1", row=table.lines[bad])
    return Predictions(ints("s"), ints("y"), score, hard)
