"""Group fairness measures on prediction records.

All functions accept either a :class:`~fairbound.core.Predictions` or a
sequence of :class:`~fairbound.core.PredictionRecord`.  When a measure needs
hard predictions and only scores are available, the expected rate under
``Bernoulli(score)`` is used, so results stay deterministic.
"""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from fairbound.core import EmptyGroup, FairboundError, MalformedData, Predictions, as_predictions


class NoSharedBins(FairboundError):
    """No score bin is occupied by both sensitive groups."""


class DimensionTooHigh(FairboundError):
    pass


@dataclasses.dataclass(frozen=True)
class ScoreBinning:
    """How continuous scores are grouped before summing over score values.

    ``mode="grid"`` rounds scores to ``size`` evenly spaced points on [0, 1]
    (the default 101 points is rounding to two decimals); ``mode="distinct"``
    treats every distinct score value as its own bin.
    """

    mode: str = "grid"
    size: int = 101

    def __post_init__(self):
        if self.mode not in ("grid", "distinct"):
            raise ValueError(f"unknown binning mode {self.mode!r}")
        if self.mode == "grid" and self.size < 2:
            raise ValueError("grid binning needs at least 2 points")

    def assign(self, score: np.ndarray) -> tuple[np.ndarray, int]:
        """Map scores to bin indices; returns ``(indices, n_bins)``."""
        score = np.asarray(score, dtype=float)
        if self.mode == "grid":
            return np.rint(score * (self.size - 1)).astype(int), self.size
        _, idx = np.unique(score, return_inverse=True)
        idx = idx.ravel()
        return idx, int(idx.max()) + 1 if idx.size else 0


DEFAULT_BINNING = ScoreBinning()
# measures that need prediction scores rather than hard predictions
CALIBRATION_NOTIONS = ("dpc", "dnc", "dc", "muc")


def _positive_rate(p: Predictions, mask: np.ndarray) -> float:
    if p.hard is not None:
        return float(p.hard[mask].mean())
    if p.score is None:
        raise MalformedData("records carry neither hard predictions nor scores")
    return float(p.score[mask].mean())


def _require(mask, what):
    if not mask.any():
        raise EmptyGroup(f"no records with {what}")
    return mask


def balanced_accuracy(records, label: str = "y") -> float:
    """Mean per-class recall of the predictions against ``label`` (``"y"`` or ``"s"``).

    With scores only this is the expected balanced accuracy of
    ``Bernoulli(score)`` draws: ``(E[1 - score | y=0] + E[score | y=1]) / 2``.
    """
    p = as_predictions(records)
    target = {"y": p.y, "s": p.s}[label]
    neg = _require(target == 0, f"{label}=0")
    pos = _require(target == 1, f"{label}=1")
    return 0.5 * ((1.0 - _positive_rate(p, neg)) + _positive_rate(p, pos))


def statistical_parity(records) -> float:
    """Gap in positive-prediction rates between the sensitive groups.

    >>> statistical_parity(Predictions([0, 0, 1, 1], [0, 1, 0, 1], hard=[0, 0, 1, 1]))
    1.0
    """
    p = as_predictions(records)
    g0 = _require(p.s == 0, "s=0")
    g1 = _require(p.s == 1, "s=1")
    return abs(_positive_rate(p, g1) - _positive_rate(p, g0))


def _conditional_gap(p: Predictions, y: int) -> float:
    cells = [_require((p.s == g) & (p.y == y), f"s={g}, y={y}") for g in (0, 1)]
    return abs(_positive_rate(p, cells[1]) - _positive_rate(p, cells[0]))


def disparity_opportunity(records) -> float:
    """Gap in true-positive rates between the sensitive groups."""
    return _conditional_gap(as_predictions(records), 1)


def disparity_regret(records) -> float:
    """Gap in false-positive rates between the sensitive groups."""
    return _conditional_gap(as_predictions(records), 0)


def disparity_odds(records) -> float:
    p = as_predictions(records)
    return 0.5 * (disparity_opportunity(p) + disparity_regret(p))


def _scores(p: Predictions) -> np.ndarray:
    if p.score is None:
        raise MalformedData("calibration measures need prediction scores")
    if p.score.ndim != 1:
        raise MalformedData("binary calibration measures need a score vector")
    return p.score


def _joint_mass(p, bins, n_bins, group, label):
    """P(Y=label, bin=t | S=group) for every bin t."""
    in_group = _require(p.s == group, f"s={group}")
    sel = in_group & (p.y == label)
    return np.bincount(bins[sel], minlength=n_bins) / in_group.sum()


def calibration_disparities(records, binning: ScoreBinning = DEFAULT_BINNING) -> tuple[float, float, float]:
    """Positive, negative and mean calibration disparity ``(dpc, dnc, dc)``."""
    p = as_predictions(records)
    bins, n_bins = binning.assign(_scores(p))
    out = []
    for label in (1, 0):
        diff = _joint_mass(p, bins, n_bins, 1, label) - _joint_mass(p, bins, n_bins, 0, label)
        out.append(0.5 * float(np.abs(diff).sum()))
    dpc, dnc = out
    return dpc, dnc, 0.5 * (dpc + dnc)


@dataclasses.dataclass(frozen=True)
class MucResult:
    value: float
    shared_bins: int
    skipped_bins: int


def muc(records, binning: ScoreBinning = DEFAULT_BINNING) -> MucResult:
    """Largest gap in ``P(Y=1 | score bin)`` between the groups.

    Only bins that hold records from both groups are compared; the number of
    bins skipped because one group is absent is reported alongside.
    """
    p = as_predictions(records)
    bins, n_bins = binning.assign(_scores(p))
    counts, positives = [], []
    for g in (0, 1):
        mask = _require(p.s == g, f"s={g}")
        counts.append(np.bincount(bins[mask], minlength=n_bins))
        positives.append(np.bincount(bins[mask], weights=p.y[mask].astype(float), minlength=n_bins))
    shared = (counts[0] > 0) & (counts[1] > 0)
    occupied = (counts[0] > 0) | (counts[1] > 0)
    skipped = int((occupied & ~shared).sum())
    if not shared.any():
        raise NoSharedBins(f"no score bin holds both groups ({skipped} single-group bins)")
    rate0 = positives[0][shared] / counts[0][shared]
    rate1 = positives[1][shared] / counts[1][shared]
    return MucResult(float(np.max(np.abs(rate1 - rate0))), int(shared.sum()), skipped)


@dataclasses.dataclass(frozen=True)
class FairnessReport:
    sp: float
    dopp: float
    dr: float
    dodds: float
    dpc: float
    dnc: float
    dc: float
    muc: float
    bins: int
    muc_skipped_bins: int = 0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def notions(self) -> dict:
        return {k: getattr(self, k) for k in ("sp", "dopp", "dr", "dodds", "dpc", "dnc", "dc")}


def fairness_report(records, binning: ScoreBinning = DEFAULT_BINNING) -> FairnessReport:
    p = as_predictions(records)
    dopp = disparity_opportunity(p)
    dr = disparity_regret(p)
    dpc, dnc, dc = calibration_disparities(p, binning)
    try:
        m = muc(p, binning)
        muc_value, skipped = m.value, m.skipped_bins
    except NoSharedBins:
        muc_value, skipped = float("nan"), -1
    n_bins = binning.size if binning.mode == "grid" else binning.assign(_scores(p))[1]
    return FairnessReport(
        sp=statistical_parity(p),
        dopp=dopp,
        dr=dr,
        dodds=0.5 * (dopp + dr),
        dpc=dpc,
        dnc=dnc,
        dc=dc,
        muc=muc_value,
        bins=n_bins,
        muc_skipped_bins=skipped,
    )


# ----------------------------------------------------------------------------
# categorical generalization

CATEGORICAL_NOTIONS = ("sp", "dopp", "dr", "dodds", "dpc", "dnc", "dc")


def _class_probabilities(p: Predictions, n_classes: int) -> np.ndarray:
    """``(n, n_classes)`` matrix of predicted class probabilities."""
    if p.hard is not None:
        out = np.zeros((len(p), n_classes))
        out[np.arange(len(p)), p.hard] = 1.0
        return out
    if p.score is None:
        raise MalformedData("records carry neither hard predictions nor scores")
    if p.score.ndim == 1:
        if n_classes != 2:
            raise MalformedData("a score vector only describes binary targets")
        return np.column_stack([1.0 - p.score, p.score])
    if p.score.shape[1] != n_classes:
        raise MalformedData(f"score matrix has {p.score.shape[1]} columns, expected {n_classes}")
    return p.score


def categorical_fairness(records, notion: str, binning: ScoreBinning = DEFAULT_BINNING,
                         n_sensitive: int | None = None, n_classes: int | None = None) -> float:
    """Worst pairwise disparity over sensitive classes and target classes.

    Each notion is evaluated one-vs-rest for every target class ``y`` and
    every pair of sensitive classes, and the maximum is returned.  For a
    binary target only the positive class is used, which makes the result
    coincide with the binary measure.
    """
    notion = notion.lower()
    if notion not in CATEGORICAL_NOTIONS:
        raise ValueError(f"unknown notion {notion!r}")
    p = as_predictions(records)
    n_s = n_sensitive or int(p.s.max()) + 1
    n_y = n_classes or max(int(p.y.max()) + 1, 2)
    if n_s < 2 or n_y < 2:
        raise ValueError("need at least two sensitive and two target classes")
    proba = _class_probabilities(p, n_y)
    groups = [_require(p.s == g, f"s={g}") for g in range(n_s)]
    classes = [1] if n_y == 2 else range(n_y)

    def per_group(y):
        hy = proba[:, y]
        is_y = p.y == y
        if notion == "sp":
            return [hy[g].mean() for g in groups]
        if notion in ("dopp", "dr", "dodds"):
            tpr = [hy[g & is_y].mean() for g in (_require(g & is_y, f"y={y}") for g in groups)]
            fpr = [hy[g & ~is_y].mean() for g in (_require(g & ~is_y, f"y!={y}") for g in groups)]
            return list(zip(tpr, fpr))
        bins, n_bins = binning.assign(hy)
        pos = [np.bincount(bins[g & is_y], minlength=n_bins) / g.sum() for g in groups]
        neg = [np.bincount(bins[g & ~is_y], minlength=n_bins) / g.sum() for g in groups]
        return list(zip(pos, neg))

    def gap(u, v):
        if notion == "sp":
            return abs(u - v)
        if notion == "dopp":
            return abs(u[0] - v[0])
        if notion == "dr":
            return abs(u[1] - v[1])
        if notion == "dodds":
            return 0.5 * (abs(u[0] - v[0]) + abs(u[1] - v[1]))
        dpc = 0.5 * np.abs(u[0] - v[0]).sum()
        dnc = 0.5 * np.abs(u[1] - v[1]).sum()
        return {"dpc": dpc, "dnc": dnc, "dc": 0.5 * (dpc + dnc)}[notion]

    worst = 0.0
    for y in classes:
        stats = per_group(y)
        for s0, s1 in itertools.combinations(range(n_s), 2):
            worst = max(worst, float(gap(stats[s1], stats[s0])))
    return worst


# ----------------------------------------------------------------------------
# distribution distance


def tvd_histogram(samples_a, samples_b, bins: int = 20) -> float:
    """Total variation distance between histograms of two samples.

    Both samples are binned on one uniform grid spanning their joint range.
    Histogram density estimates degrade quickly with dimension, so at most
    four dimensions are accepted.
    """
    A = np.asarray(samples_a, dtype=float)
    B = np.asarray(samples_b, dtype=float)
    A = A.reshape(A.shape[0], -1)
    B = B.reshape(B.shape[0], -1)
    if A.shape[1] != B.shape[1]:
        raise ValueError("samples differ in dimension")
    if A.shape[1] > 4:
        raise DimensionTooHigh(f"{A.shape[1]}-d samples; histogram TVD supports at most 4")
    if bins < 2:
        raise ValueError("need at least 2 bins per dimension")
    if len(A) == 0 or len(B) == 0:
        raise EmptyGroup("empty sample")
    both = np.vstack([A, B])
    lo, hi = both.min(axis=0), both.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    edges = [np.linspace(l, h, bins + 1) for l, h in zip(lo, hi)]
    ha, _ = np.histogramdd(A, bins=edges)
    hb, _ = np.histogramdd(B, bins=edges)
    return 0.5 * float(np.abs(ha / len(A) - hb / len(B)).sum())
