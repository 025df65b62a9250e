import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from fairbound import bounds
from fairbound.bounds import (
    CALIBRATION,
    NOTIONS,
    SEPARATION,
    SubpopQuad,
    bound_curve,
    build_rp1,
    build_rp2,
    calibration_lower_bound,
    guarantee,
    guarantee_report,
    oracle_objective,
    sp_guarantee,
    tradeoff_beta_lower_bound,
)
from fairbound.core import BaseRates, InfeasibleCoefficients, NumericalFailure
from fairbound.lp import LpSolution, LpStatus

ADULT = BaseRates(0.33, 0.316, 0.121)

# published rows: (adversary BA, task BA, guarantees); r is not published,
# and these columns barely move for r in [.32, .34]
TABLE_ROWS = {
    "reconstruction": (0.846, 0.811, dict(sp=0.692, dopp=1, dr=1, dodds=1, dpc=0.219, dnc=0.781, dc=0.5)),
    "lfr": (0.667, 0.648, dict(sp=0.334, dopp=1, dr=0.740, dodds=0.870, dpc=0.219, dnc=0.553, dc=0.386)),
    "vfae": (0.745, 0.727, dict(sp=0.490, dopp=1, dr=0.917, dodds=0.959, dpc=0.219, dnc=0.709, dc=0.464)),
    "mmd_l2": (0.611, 0.733, dict(sp=0.222, dopp=1, dr=0.612, dodds=0.806, dpc=0.219, dnc=0.441, dc=0.330)),
    "mmd_l2sqrt2": (0.573, 0.681, dict(sp=0.146, dopp=1, dr=0.526, dodds=0.763, dpc=0.219, dnc=0.365, dc=0.292)),
}


def random_rates(rng):
    return BaseRates(*rng.uniform(0.05, 0.95, size=3))


@pytest.mark.parametrize("row", sorted(TABLE_ROWS))
def test_published_guarantees(row):
    adv, task, expected = TABLE_ROWS[row]
    alpha, beta = 2 * adv - 1, 2 * (1 - task)
    for obj, value in expected.items():
        assert guarantee(obj, ADULT, alpha, beta) == pytest.approx(value, abs=1e-3), obj


def test_program_sizes():
    for obj in SEPARATION:
        programs = build_rp1(obj, ADULT, 0.2, 0.5)
        assert len(programs) == (4 if obj == "dodds" else 2)
        for lp in programs:
            assert lp.n_vars == 32
            assert lp.A_eq.shape == (4, 32)
            assert lp.A_ub.shape == (16 + 2, 32)
    for obj in CALIBRATION:
        lp = build_rp2(obj, ADULT, 0.2, 0.5)
        assert lp.n_vars == 64
        assert lp.A_eq.shape == (4, 64)
        assert lp.A_ub.shape == (64 + 2, 64)


def _highs_max(lp):
    res = linprog(-lp.c, A_ub=lp.A_ub, b_ub=lp.b_ub, A_eq=lp.A_eq, b_eq=lp.b_eq,
                  bounds=[(0, None)] * lp.n_vars, method="highs")
    assert res.status == 0
    return -res.fun


@pytest.mark.parametrize("seed", range(8))
def test_programs_agree_with_highs(seed):
    rng = np.random.default_rng(seed)
    rates = random_rates(rng)
    alpha, beta = rng.uniform(0.3, 1.0, size=2)
    for obj in SEPARATION + CALIBRATION:
        programs = build_rp1(obj, rates, alpha, beta) if obj in SEPARATION else [build_rp2(obj, rates, alpha, beta)]
        ref = max(_highs_max(lp) for lp in programs)
        assert guarantee(obj, rates, alpha, beta) == pytest.approx(min(max(ref, 0), 1), abs=1e-7)
        assert guarantee(obj, rates, alpha, beta, rule="bland") == pytest.approx(min(max(ref, 0), 1), abs=1e-7)


def test_sp_closed_form():
    for alpha in (0.0, 0.146, 0.692, 1.0):
        assert sp_guarantee(alpha) == alpha
        assert guarantee("sp", ADULT, alpha, 1.0) == alpha


def test_exact_at_origin_when_rates_match():
    rates = BaseRates(0.3, 0.4, 0.4)
    for obj in NOTIONS:
        assert guarantee(obj, rates, 0.0, 0.0) == pytest.approx(0.0, abs=1e-9)


def test_full_coefficients_reach_one():
    rates = BaseRates(0.5, 0.5, 0.5)
    rep = guarantee_report(rates, 1.0, 1.0)
    for obj in ("sp", "dopp", "dr", "dodds"):
        assert rep.bounds[obj] == pytest.approx(1.0, abs=1e-9)


def test_unattainable_coefficients():
    with pytest.raises(InfeasibleCoefficients):
        guarantee("dopp", BaseRates(0.5, 0.2, 0.7), 0.0, 0.0)


def test_input_validation():
    with pytest.raises(ValueError):
        guarantee("accuracy", ADULT, 0.1, 0.1)
    with pytest.raises(ValueError):
        guarantee("dpc", ADULT, 1.5, 0.1)
    with pytest.raises(ValueError):
        guarantee("dpc", ADULT, 0.1, -0.1)


def test_out_of_range_optimum_is_not_clamped(monkeypatch):
    def fake_solve(lp, rule="bland"):
        return LpSolution(LpStatus.OPTIMAL, np.zeros(lp.n_vars), 1.5)

    monkeypatch.setattr(bounds, "solve", fake_solve)
    with pytest.raises(NumericalFailure):
        guarantee("dopp", ADULT, 0.5, 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_monotone_grid(seed):
    rates = random_rates(np.random.default_rng(seed))
    ticks = np.linspace(0.2, 1.0, 5)

    def cell(obj, al, be):
        try:
            return guarantee(obj, rates, al, be)
        except InfeasibleCoefficients:
            return np.nan

    for obj in NOTIONS:
        grid = np.array([[cell(obj, al, be) for be in ticks] for al in ticks])
        assert np.isfinite(grid[-1, -1])
        # once attainable, a point stays attainable as either coefficient grows
        for axis in (0, 1):
            step = np.diff(np.isfinite(grid).astype(int), axis=axis)
            assert np.all(step >= 0)
            diffs = np.diff(grid, axis=axis)
            assert np.all(diffs[np.isfinite(diffs)] >= -1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_calibration_floor(seed):
    rng = np.random.default_rng(seed)
    rates = random_rates(rng)
    floor = calibration_lower_bound(rates)
    for _ in range(5):
        alpha, beta = rng.uniform(0.5, 1.0, size=2)
        for obj in CALIBRATION:
            assert guarantee(obj, rates, alpha, beta) >= floor - 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_dodds_no_larger_than_mean_of_parts(seed):
    rng = np.random.default_rng(seed)
    rates = random_rates(rng)
    alpha, beta = rng.uniform(0.4, 1.0, size=2)
    parts = guarantee("dopp", rates, alpha, beta) + guarantee("dr", rates, alpha, beta)
    assert guarantee("dodds", rates, alpha, beta) <= 0.5 * parts + 1e-9


@pytest.mark.parametrize("obj", SEPARATION + CALIBRATION)
def test_oracle_never_exceeds_guarantee(obj):
    rng = np.random.default_rng(7)
    for _ in range(40):
        rates = random_rates(rng)
        quad = SubpopQuad.random(rng, rates, n_atoms=8 if obj in SEPARATION else 16, concentration=0.3)
        alpha, beta, value = oracle_objective(obj, quad)
        assert guarantee(obj, rates, alpha, beta) >= value - 1e-7


def test_oracle_examples():
    rates = BaseRates(0.4, 0.3, 0.6)
    u = np.full(8, 1 / 8)
    alpha, _, value = oracle_objective("dopp", SubpopQuad(u, u, u, u, rates))
    assert alpha == pytest.approx(0.0) and value == pytest.approx(0.0)
    left, right = np.r_[np.full(4, 0.25), np.zeros(4)], np.r_[np.zeros(4), np.full(4, 0.25)]
    assert oracle_objective("dopp", SubpopQuad(u, left, u, right, rates))[2] == pytest.approx(1.0)


def test_subpop_quad_validation():
    with pytest.raises(ValueError):
        SubpopQuad([0.5, 0.6], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5], ADULT)
    with pytest.raises(ValueError):
        SubpopQuad([1.0], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5], ADULT)


def test_calibration_lower_bound_values():
    assert calibration_lower_bound(BaseRates(0.3, 0.316, 0.121)) == pytest.approx(0.098, abs=6e-4)
    assert calibration_lower_bound(BaseRates(0.3, 0.4, 0.4)) == 0.0
    assert calibration_lower_bound(BaseRates(0.5, 1e-6, 1 - 1e-6)) == pytest.approx(0.5, abs=1e-5)


def _tradeoff_symbolic(r, a, b, alpha):
    r, a, b, alpha = (sympy.Rational(v) for v in (r, a, b, alpha))
    gap = sympy.Abs(a - b)
    denom = r * (1 - r) * (a / r + b / (1 - r)) * ((1 - a) / r + (1 - b) / (1 - r))
    return sympy.Max(0, (gap**2 - gap * alpha) / denom)


def test_tradeoff_formula():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r, a, b = (round(v, 6) for v in rng.uniform(0.01, 0.99, size=3))
        alpha = round(float(rng.uniform(0, 1)), 6)
        got = tradeoff_beta_lower_bound(BaseRates(r, a, b), alpha)
        want = float(_tradeoff_symbolic(str(r), str(a), str(b), str(alpha)))
        assert got == pytest.approx(want, abs=1e-12)
    assert tradeoff_beta_lower_bound(BaseRates(0.4, 0.3, 0.3), 0.0) == 0.0
    assert tradeoff_beta_lower_bound(BaseRates(0.4, 0.3, 0.7), 0.4) == pytest.approx(0.0, abs=1e-15)


def test_report_fields():
    rep = guarantee_report(ADULT, 0.146, 0.638)
    assert set(rep.bounds) == set(NOTIONS)
    assert rep.bounds["sp"] == 0.146
    assert rep.monotone
    assert rep.calibration_lower_bound == pytest.approx(0.0975)
    d = rep.as_dict()
    assert set(d) >= {"upper_bounds", "calibration_lower_bound", "tradeoff_beta_lower_bound"}


def test_report_domination():
    low = guarantee_report(ADULT, 0.3, 0.6)
    high = guarantee_report(ADULT, 0.5, 0.8)
    for obj in NOTIONS:
        assert high.bounds[obj] >= low.bounds[obj] - 1e-9


def test_bound_curve_diagonal():
    rates = BaseRates(0.5, 0.5, 0.5)
    ts = np.linspace(0, 1, 21)
    for obj in ("dopp", "dpc"):
        curve = bound_curve(obj, rates, [(t, t) for t in ts])
        assert curve.value[0] == pytest.approx(0.0, abs=1e-9)
        assert np.all(np.diff(curve.value) >= -1e-9)
        assert np.isfinite(curve.slope) and curve.slope <= 1 / 0.05
        assert len(list(curve.rows())) == len(ts)


def test_bound_curve_marks_unattainable_points():
    curve = bound_curve("dopp", BaseRates(0.5, 0.2, 0.7), [(0.0, 0.0), (0.5, 0.5)])
    assert np.isnan(curve.value[0]) and np.isfinite(curve.value[1])


@settings(max_examples=40, deadline=None)
@given(
    r=st.floats(0.05, 0.95),
    a=st.floats(0.05, 0.95),
    b=st.floats(0.05, 0.95),
    alpha=st.floats(0.0, 1.0),
    beta=st.floats(0.0, 1.0),
)
def test_bounds_in_unit_interval(r, a, b, alpha, beta):
    rates = BaseRates(r, a, b)
    for obj in NOTIONS:
        try:
            value = guarantee(obj, rates, alpha, beta)
        except InfeasibleCoefficients:
            continue
        assert 0.0 <= value <= 1.0
