"""Dense two-phase simplex for the small programs built by :mod:`fairbound.bounds`.

Programs are stated in maximization form::

    maximize    c @ x
    subject to  A_eq @ x == b_eq
                A_ub @ x <= b_ub
                x >= 0

The solver keeps a full tableau in a numpy array. It is meant for programs
with a few dozen variables and constraints, where a dense tableau is cheap
and the absence of clever data structures makes the result easy to audit.
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np

from fairbound.core import NumericalFailure


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclasses.dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-9
    pivot: float = 1e-10
    max_iter: int = 10_000


DEFAULT_TOLERANCES = Tolerances()


@dataclasses.dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        object.__setattr__(self, "c", c)
        for A_name, b_name in (("A_eq", "b_eq"), ("A_ub", "b_ub")):
            A, b = getattr(self, A_name), getattr(self, b_name)
            if A is None:
                A, b = np.zeros((0, n)), np.zeros(0)
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.asarray(b, dtype=float).ravel()
            if A.shape != (b.size, n):
                raise ValueError(
                    f"{A_name} has shape {A.shape}, expected ({b.size}, {n})"
                )
            if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
                raise ValueError(f"{A_name}/{b_name} contain non-finite entries")
            object.__setattr__(self, A_name, A)
            object.__setattr__(self, b_name, b)
        if not np.all(np.isfinite(c)):
            raise ValueError("objective contains non-finite entries")

    @property
    def n_vars(self) -> int:
        return self.c.size

    def is_feasible(self, x, tol: float = 1e-9) -> bool:
        """Check ``x`` against every constraint, independently of any solver."""
        x = np.asarray(x, dtype=float)
        if np.any(x < -tol):
            return False
        if self.A_eq.size and np.max(np.abs(self.A_eq @ x - self.b_eq)) > tol:
            return False
        if self.A_ub.size and np.max(self.A_ub @ x - self.b_ub) > tol:
            return False
        return True


@dataclasses.dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    x: np.ndarray | None
    value: float | None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class _Tableau:
    """Row-reduced tableau ``[A | b]`` with a separate reduced-cost row."""

    def __init__(self, A, b, basis, tol: Tolerances, rule: str):
        self.T = np.hstack([A, b[:, None]])
        self.basis = np.array(basis, dtype=int)
        self.tol = tol
        self.rule = rule
        self.iterations = 0

    def set_objective(self, cost):
        # reduced costs r_j = c_j - c_B B^-1 A_j; the last entry holds -c_B B^-1 b
        row = np.append(cost, 0.0)
        cb = cost[self.basis]
        self.obj = row - cb @ self.T

    def pivot(self, i, j):
        T = self.T
        T[i] /= T[i, j]
        col = T[:, j].copy()
        col[i] = 0.0
        T -= col[:, None] * T[i]
        self.obj -= self.obj[j] * T[i]
        self.basis[i] = j

    def _entering(self):
        r = self.obj[:-1]
        cand = (r > self.tol.feasibility).nonzero()[0]
        if cand.size == 0:
            return None
        if self.rule == "dantzig" and not self._degenerate_run:
            return int(cand[np.argmax(r[cand])])
        return int(cand[0])

    def _leaving(self, j):
        col = self.T[:, j]
        rows = (col > self.tol.pivot).nonzero()[0]
        if rows.size == 0:
            return None
        ratios = self.T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + self.tol.feasibility]
        if self.rule == "dantzig" and not self._degenerate_run:
            # largest pivot element among the ties, for stability
            return int(ties[np.argmax(col[ties])])
        # Bland: among tied rows leave the smallest basic variable index
        return int(ties[np.argmin(self.basis[ties])])

    def run(self):
        self._degenerate_run = False
        while True:
            if self.iterations >= self.tol.max_iter:
                raise NumericalFailure(
                    f"simplex exceeded {self.tol.max_iter} iterations"
                )
            j = self._entering()
            if j is None:
                return LpStatus.OPTIMAL
            i = self._leaving(j)
            if i is None:
                return LpStatus.UNBOUNDED
            # after a degenerate step fall back to Bland's rule until progress resumes
            self._degenerate_run = self.T[i, -1] <= self.tol.feasibility
            self.pivot(i, j)
            self.iterations += 1


def solve(
    lp: LinearProgram,
    tol: Tolerances = DEFAULT_TOLERANCES,
    rule: str = "bland",
) -> LpSolution:
    """Solve ``lp`` with a two-phase primal simplex.

    ``rule="bland"`` uses Bland's smallest-index rule for every pivot.
    ``rule="dantzig"`` picks the largest reduced cost but reverts to Bland's
    rule on degenerate pivots, and falls back to a full Bland solve if its
    answer fails the feasibility check.

    An optimal answer is always checked against the original constraints;
    one that violates them raises :class:`NumericalFailure`.

    >>> sol = solve(LinearProgram(c=[1.0, 2.0], A_ub=[[1.0, 1.0]], b_ub=[3.0]))
    >>> sol.status.name, sol.value
    ('OPTIMAL', 6.0)
    """
    if rule not in ("bland", "dantzig"):
        raise ValueError(f"unknown pivot rule {rule!r}")
    try:
        sol = _solve(lp, tol, rule)
    except NumericalFailure:
        if rule == "bland":
            raise
        sol = None
    if sol is not None and (not sol.optimal or _verified(lp, sol.x, tol)):
        return sol
    if rule == "dantzig":
        sol = _solve(lp, tol, "bland")
        if not sol.optimal or _verified(lp, sol.x, tol):
            return sol
    raise NumericalFailure("simplex solution violates the constraints; the program is ill-conditioned")


def _verified(lp: LinearProgram, x, tol: Tolerances) -> bool:
    scale = max(1.0, float(np.abs(lp.b_eq).max(initial=0.0)), float(np.abs(lp.b_ub).max(initial=0.0)))
    return lp.is_feasible(x, tol=1e3 * tol.feasibility * scale)


def _solve(lp: LinearProgram, tol: Tolerances, rule: str) -> LpSolution:
    n = lp.n_vars
    m_eq, m_ub = lp.b_eq.size, lp.b_ub.size
    m = m_eq + m_ub

    # standard form: original vars | slacks | artificials
    A = np.zeros((m, n + m_ub))
    b = np.concatenate([lp.b_eq, lp.b_ub])
    A[:m_eq, :n] = lp.A_eq
    A[m_eq:, :n] = lp.A_ub
    A[m_eq:, n:] = np.eye(m_ub)
    neg = b < 0
    A[neg] *= -1
    b = np.abs(b)

    basis = [-1] * m
    for k in range(m_ub):
        row = m_eq + k
        if not neg[row]:
            basis[row] = n + k
    need_art = [i for i in range(m) if basis[i] < 0]
    n_std = n + m_ub
    n_art = len(need_art)
    if n_art:
        art = np.zeros((m, n_art))
        for a_idx, row in enumerate(need_art):
            art[row, a_idx] = 1.0
            basis[row] = n_std + a_idx
        A = np.hstack([A, art])

    tab = _Tableau(A, b, basis, tol, rule)
    total = n_std + n_art

    if n_art:
        phase1 = np.zeros(total)
        phase1[n_std:] = -1.0
        tab.set_objective(phase1)
        tab.run()
        if -tab.obj[-1] < -tol.feasibility * max(1.0, np.abs(b).max()):
            return LpSolution(LpStatus.INFEASIBLE, None, None, tab.iterations)
        # drive remaining artificials out of the basis; drop redundant rows
        keep = []
        for i in range(m):
            if tab.basis[i] < n_std:
                keep.append(i)
                continue
            row = tab.T[i, :n_std]
            cand = np.flatnonzero(np.abs(row) > tol.pivot)
            if cand.size:
                tab.pivot(i, int(cand[0]))
                keep.append(i)
        if len(keep) < m:
            tab.T = tab.T[keep]
            tab.basis = tab.basis[keep]
        tab.T = np.delete(tab.T, np.s_[n_std:total], axis=1)

    cost = np.zeros(n_std)
    cost[:n] = lp.c
    tab.set_objective(cost)
    status = tab.run()
    if status is LpStatus.UNBOUNDED:
        return LpSolution(status, None, None, tab.iterations)

    x = np.zeros(n_std)
    x[tab.basis] = tab.T[:, -1]
    x = x[:n]
    x[np.abs(x) < 1e-15] = 0.0
    return LpSolution(LpStatus.OPTIMAL, x, float(lp.c @ x), tab.iterations)
