"""Tight fairness guarantees from representation fairness and discriminativeness.

A representation is *alpha-fair* when the total variation distance between its
distributions in the two sensitive groups is at most ``alpha``, and
*beta-discriminative* when one minus the distance between its distributions in
the two target classes is at most ``beta``.  For the separation notions (DOpp,
DR, DOdds) the worst case over all such representations and all predictors is
the optimum of a linear program over four distributions on ``{0,1}^3``; for the
calibration notions (DPC, DNC, DC) it is a linear program over ``{0,1}^4``.
This module builds and solves those programs.

Variables are laid out as four blocks of atom masses, in the order
``Z_0^0, Z_0^1, Z_1^0, Z_1^1`` (subscript = sensitive group, superscript =
target class).  Atoms are indexed by their bits, most significant first.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
from typing import Iterable

import numpy as np

from fairbound.core import BaseRates, InfeasibleCoefficients, NumericalFailure
from fairbound.lp import LinearProgram, LpStatus, solve

NOTIONS = ("sp", "dopp", "dr", "dodds", "dpc", "dnc", "dc")
SEPARATION = ("dopp", "dr", "dodds")
CALIBRATION = ("dpc", "dnc", "dc")

# block offsets inside the variable vector
_B00, _B01, _B10, _B11 = range(4)


def _check_notion(obj: str) -> str:
    obj = obj.lower()
    if obj not in NOTIONS:
        raise ValueError(f"unknown fairness notion {obj!r}; expected one of {NOTIONS}")
    return obj


def _check_coeffs(alpha, beta):
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} must lie in [0, 1]")


def mixture_weights(rates: BaseRates) -> tuple[float, float]:
    """Weights of group 1 inside the target-conditional mixtures ``Z^0`` and ``Z^1``."""
    r, a, b = rates.r, rates.a, rates.b
    w0 = (1 - b) * r / ((1 - a) * (1 - r) + (1 - b) * r)
    w1 = b * r / (a * (1 - r) + b * r)
    return w0, w1


@dataclasses.dataclass(frozen=True)
class _Mixtures:
    """Linear maps from the stacked variable vector to per-atom mixture masses.

    Each attribute is an ``(n_atoms, 4 * n_atoms)`` matrix.
    """

    group0: np.ndarray
    group1: np.ndarray
    target0: np.ndarray
    target1: np.ndarray

    @classmethod
    def build(cls, rates: BaseRates, n_atoms: int) -> "_Mixtures":
        a, b = rates.a, rates.b
        w0, w1 = mixture_weights(rates)
        eye = np.eye(n_atoms)

        def stack(c00, c01, c10, c11):
            return np.hstack([c00 * eye, c01 * eye, c10 * eye, c11 * eye])

        return cls(
            group0=stack(1 - a, a, 0, 0),
            group1=stack(0, 0, 1 - b, b),
            target0=stack(1 - w0, 0, w0, 0),
            target1=stack(0, 1 - w1, 0, w1),
        )


def _bits(n_bits: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=n_bits)))


def _sign(bit: np.ndarray) -> np.ndarray:
    # (-1)^(bit+1): +1 when the bit is set, -1 otherwise
    return np.where(bit == 1, 1.0, -1.0)


def _simplex_rows(n_atoms: int):
    A = np.kron(np.eye(4), np.ones((1, n_atoms)))
    return A, np.ones(4)


@functools.lru_cache(maxsize=512)
def _structure(rates: BaseRates, n_bits: int, fair_bit: int, disc_bit: int):
    """Constraint rows that do not depend on ``alpha`` and ``beta``.

    Returns the atom bits, equality rows, positivity rows (``-expr <= 0``) and
    the two linearized coefficient rows, whose right-hand sides are
    ``alpha`` and ``-(1 - beta)``.  Cached, since sweeps reuse one set of rates.
    """
    n_atoms = 2**n_bits
    atoms = _bits(n_bits)
    mix = _Mixtures.build(rates, n_atoms)
    fair_expr = _sign(atoms[:, fair_bit])[:, None] * (mix.group1 - mix.group0)
    disc_expr = _sign(atoms[:, disc_bit])[:, None] * (mix.target1 - mix.target0)
    positivity = np.vstack([-fair_expr, -disc_expr])
    coeff_rows = np.vstack([0.5 * fair_expr.sum(axis=0), -0.5 * disc_expr.sum(axis=0)])
    A_eq, b_eq = _simplex_rows(n_atoms)
    for arr in (atoms, positivity, coeff_rows, A_eq, b_eq):
        arr.setflags(write=False)
    return atoms, A_eq, b_eq, positivity, coeff_rows


def _block(n_atoms, block, weights):
    v = np.zeros(4 * n_atoms)
    v[block * n_atoms:(block + 1) * n_atoms] = weights
    return v


@functools.lru_cache(maxsize=512)
def _rp1_parts(obj: str, rates: BaseRates):
    atoms, A_eq, b_eq, positivity, coeff_rows = _structure(rates, 3, 1, 2)
    A_ub = np.vstack([positivity, coeff_rows])
    predict_pos = (atoms[:, 0] == 1).astype(float)
    tpr_gap = _block(8, _B11, predict_pos) - _block(8, _B01, predict_pos)
    fpr_gap = _block(8, _B10, predict_pos) - _block(8, _B00, predict_pos)
    if obj == "dopp":
        objectives = [tpr_gap, -tpr_gap]
    elif obj == "dr":
        objectives = [fpr_gap, -fpr_gap]
    else:
        objectives = [0.5 * (s1 * tpr_gap + s0 * fpr_gap) for s1 in (1, -1) for s0 in (1, -1)]
    return A_eq, b_eq, A_ub, positivity.shape[0], tuple(objectives)


def build_rp1(obj: str, rates: BaseRates, alpha: float, beta: float) -> list[LinearProgram]:
    """Linear programs whose maximum is the tight bound on DOpp, DR or DOdds.

    The reduced problem fixes the predictor to read the first bit of the atom,
    so each disparity is a linear form in the atom masses with ``i = 1``.  The
    absolute values are resolved by enumerating their signs: two programs for
    DOpp and DR, four for DOdds.  The bound is the maximum over the set.
    """
    obj = _check_notion(obj)
    if obj not in SEPARATION:
        raise ValueError(f"{obj} is not bounded by the 3-bit program")
    _check_coeffs(alpha, beta)
    A_eq, b_eq, A_ub, n_pos, objectives = _rp1_parts(obj, rates.clamped())
    b_ub = np.concatenate([np.zeros(n_pos), [alpha, -(1.0 - beta)]])
    return [LinearProgram(c, A_eq, b_eq, A_ub, b_ub) for c in objectives]


@functools.lru_cache(maxsize=512)
def _rp2_parts(obj: str, rates: BaseRates):
    a, b = rates.a, rates.b
    atoms, A_eq, b_eq, positivity, coeff_rows = _structure(rates, 4, 0, 1)
    n_atoms = 16
    eye = np.eye(n_atoms)
    zero = np.zeros((n_atoms, n_atoms))
    neg_expr = _sign(atoms[:, 2])[:, None] * np.hstack([-(1 - a) * eye, zero, (1 - b) * eye, zero])
    pos_expr = _sign(atoms[:, 3])[:, None] * np.hstack([zero, -a * eye, zero, b * eye])
    A_ub = np.vstack([positivity, -neg_expr, -pos_expr, coeff_rows])
    sup_dpc = 0.5 * pos_expr.sum(axis=0)
    sup_dnc = 0.5 * neg_expr.sum(axis=0)
    c = {"dpc": sup_dpc, "dnc": sup_dnc, "dc": 0.5 * (sup_dpc + sup_dnc)}[obj]
    return A_eq, b_eq, A_ub, A_ub.shape[0] - 2, c


def build_rp2(obj: str, rates: BaseRates, alpha: float, beta: float) -> LinearProgram:
    """Linear program whose maximum is the tight bound on DPC, DNC or DC.

    Atoms are ``(i, j, k, l)``: ``i`` pins the sign of ``Z_1 - Z_0``, ``j`` that
    of ``Z^1 - Z^0``, ``k`` that of ``(1-b) Z_1^0 - (1-a) Z_0^0`` and ``l`` that
    of ``b Z_1^1 - a Z_0^1``.  With those signs fixed, the supremum over
    predictors of each calibration disparity is linear.
    """
    obj = _check_notion(obj)
    if obj not in CALIBRATION:
        raise ValueError(f"{obj} is not bounded by the 4-bit program")
    _check_coeffs(alpha, beta)
    A_eq, b_eq, A_ub, n_pos, c = _rp2_parts(obj, rates.clamped())
    b_ub = np.concatenate([np.zeros(n_pos), [alpha, -(1.0 - beta)]])
    return LinearProgram(c, A_eq, b_eq, A_ub, b_ub)


def sp_guarantee(alpha: float) -> float:
    """Statistical parity of any predictor is at most ``alpha``, and tightly so."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} must lie in [0, 1]")
    return alpha


def _clamp_bound(value: float) -> float:
    if value < -1e-6 or value > 1 + 1e-6:
        raise NumericalFailure(f"bound {value} lies outside [0, 1]")
    return float(min(max(value, 0.0), 1.0))


def guarantee(obj: str, rates: BaseRates, alpha: float, beta: float, rule: str = "dantzig") -> float:
    """Upper bound on ``obj`` for every predictor on an alpha-fair, beta-discriminative representation."""
    obj = _check_notion(obj)
    _check_coeffs(alpha, beta)
    if obj == "sp":
        return sp_guarantee(alpha)
    programs = build_rp1(obj, rates, alpha, beta) if obj in SEPARATION else [build_rp2(obj, rates, alpha, beta)]
    best = -np.inf
    for lp in programs:
        sol = solve(lp, rule=rule)
        if sol.status is LpStatus.INFEASIBLE:
            raise InfeasibleCoefficients(
                f"alpha={alpha}, beta={beta} is unattainable for a={rates.a}, b={rates.b}, r={rates.r}"
            )
        if not sol.optimal:
            raise NumericalFailure(f"{obj} program reported {sol.status.value}")
        best = max(best, sol.value)
    return _clamp_bound(best)


def calibration_lower_bound(rates: BaseRates) -> float:
    """No predictor has DPC, DNC or DC below ``|a - b| / 2``.

    >>> round(calibration_lower_bound(BaseRates(0.33, 0.316, 0.121)), 4)
    0.0975
    """
    return 0.5 * abs(rates.a - rates.b)


def tradeoff_beta_lower_bound(rates: BaseRates, alpha: float) -> float:
    """Smallest discriminativeness coefficient compatible with fairness ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} must lie in [0, 1]")
    r, a, b = rates.r, rates.a, rates.b
    gap = abs(a - b)
    denom = r * (1 - r) * (a / r + b / (1 - r)) * ((1 - a) / r + (1 - b) / (1 - r))
    return max(0.0, (gap * gap - gap * alpha) / denom)


# ----------------------------------------------------------------------------
# brute-force oracle


@dataclasses.dataclass(frozen=True)
class SubpopQuad:
    """Four distributions over a shared finite atom set plus the base rates that mix them."""

    z00: np.ndarray
    z01: np.ndarray
    z10: np.ndarray
    z11: np.ndarray
    rates: BaseRates

    def __post_init__(self):
        for name in ("z00", "z01", "z10", "z11"):
            v = np.asarray(getattr(self, name), dtype=float).ravel()
            if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} is not a probability vector")
            object.__setattr__(self, name, v)
        if not (self.z00.size == self.z01.size == self.z10.size == self.z11.size):
            raise ValueError("distributions must share one atom set")

    @classmethod
    def random(cls, rng: np.random.Generator, rates: BaseRates, n_atoms: int = 8, concentration: float = 1.0):
        vs = []
        for _ in range(4):
            v = rng.dirichlet(np.full(n_atoms, concentration))
            vs.append(v / v.sum())
        return cls(*vs, rates=rates)

    def mixtures(self):
        a, b = self.rates.a, self.rates.b
        w0, w1 = mixture_weights(self.rates)
        g0 = a * self.z01 + (1 - a) * self.z00
        g1 = b * self.z11 + (1 - b) * self.z10
        t0 = w0 * self.z10 + (1 - w0) * self.z00
        t1 = w1 * self.z11 + (1 - w1) * self.z01
        return g0, g1, t0, t1


def tvd(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def _best_subset(delta) -> float:
    return max(np.clip(delta, 0, None).sum(), np.clip(-delta, 0, None).sum())


def oracle_objective(obj: str, quad: SubpopQuad) -> tuple[float, float, float]:
    """Fairness coefficient, discriminativeness coefficient and worst-case disparity of ``quad``.

    The disparity is maximized over predictors directly: deterministic
    predictors suffice for the separation notions, and the calibration
    notions use the closed-form supremum attained by an injective score.
    """
    obj = _check_notion(obj)
    g0, g1, t0, t1 = quad.mixtures()
    alpha = tvd(g0, g1)
    beta = 1.0 - tvd(t0, t1)
    a, b = quad.rates.a, quad.rates.b
    d_pos = quad.z11 - quad.z01
    d_neg = quad.z10 - quad.z00
    if obj == "sp":
        value = _best_subset(g1 - g0)
    elif obj == "dopp":
        value = _best_subset(d_pos)
    elif obj == "dr":
        value = _best_subset(d_neg)
    elif obj == "dodds":
        value = max(
            0.5 * np.clip(s1 * d_pos + s0 * d_neg, 0, None).sum()
            for s1 in (1, -1)
            for s0 in (1, -1)
        )
    else:
        dpc = 0.5 * np.abs(b * quad.z11 - a * quad.z01).sum()
        dnc = 0.5 * np.abs((1 - b) * quad.z10 - (1 - a) * quad.z00).sum()
        value = {"dpc": dpc, "dnc": dnc, "dc": 0.5 * (dpc + dnc)}[obj]
    return alpha, beta, float(value)


# ----------------------------------------------------------------------------
# reports


@dataclasses.dataclass(frozen=True)
class GuaranteeReport:
    alpha: float
    beta: float
    rates: BaseRates
    bounds: dict
    calibration_lower_bound: float
    tradeoff_beta_lower_bound: float
    monotone: bool

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "upper_bounds": dict(self.bounds),
            "calibration_lower_bound": self.calibration_lower_bound,
            "tradeoff_beta_lower_bound": self.tradeoff_beta_lower_bound,
            "monotone": self.monotone,
        }


def _all_bounds(rates, alpha, beta):
    return {obj: guarantee(obj, rates, alpha, beta) for obj in NOTIONS}


def guarantee_report(rates: BaseRates, alpha: float, beta: float) -> GuaranteeReport:
    _check_coeffs(alpha, beta)
    bounds = _all_bounds(rates, alpha, beta)
    # feasible regions nest, so nudging either coefficient up cannot lower a bound
    probe = _all_bounds(rates, min(alpha + 0.01, 1.0), min(beta + 0.01, 1.0))
    monotone = all(probe[k] >= bounds[k] - 1e-9 for k in NOTIONS)
    return GuaranteeReport(
        alpha=alpha,
        beta=beta,
        rates=rates,
        bounds=bounds,
        calibration_lower_bound=calibration_lower_bound(rates),
        tradeoff_beta_lower_bound=tradeoff_beta_lower_bound(rates, alpha),
        monotone=monotone,
    )


def _guarantee_or_nan(obj, rates, alpha, beta):
    try:
        return guarantee(obj, rates, alpha, beta)
    except InfeasibleCoefficients:
        return float("nan")


@dataclasses.dataclass(frozen=True)
class BoundCurve:
    obj: str
    alpha: np.ndarray
    beta: np.ndarray
    value: np.ndarray
    slope: float

    def rows(self):
        return zip(self.alpha.tolist(), self.beta.tolist(), self.value.tolist())


def bound_curve(obj: str, rates: BaseRates, grid: Iterable[tuple[float, float]]) -> BoundCurve:
    """Evaluate ``guarantee`` on a grid of ``(alpha, beta)`` points.

    ``slope`` is the largest ``guarantee / max(alpha, beta)`` seen on the grid
    (ignoring the origin), an empirical estimate of the constant relating the
    bound to ``max(alpha, beta)``.  Unattainable points are recorded as NaN.
    """
    pts = np.array([(float(al), float(be)) for al, be in grid], dtype=float).reshape(-1, 2)
    values = np.array([_guarantee_or_nan(obj, rates, al, be) for al, be in pts])
    scale = pts.max(axis=1) if pts.size else np.zeros(0)
    mask = (scale > 0) & np.isfinite(values)
    slope = float(np.max(values[mask] / scale[mask])) if mask.any() else 0.0
    return BoundCurve(obj, pts[:, 0], pts[:, 1], values, slope)
