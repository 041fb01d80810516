"""Dense two-phase tableau simplex for the small LPs of bound synthesis.

Bland's rule throughout (lowest-index entering column, lowest-index leaving
basic variable on ratio ties), so the method cannot cycle and is fully
deterministic.  Problems here have at most four plane coefficients and a few
hundred sample constraints, so a dense tableau is the right tool.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Sense",
    "Status",
    "Constraint",
    "LpProblem",
    "LpSolution",
    "NumericalInstability",
    "solve_lp",
]

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-12


class Sense(str, enum.Enum):
    GE = ">="
    LE = "<="
    EQ = "="


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


class NumericalInstability(ArithmeticError):
    pass


@dataclass(frozen=True)
class Constraint:
    row: tuple[float, ...]
    rhs: float
    sense: Sense = Sense.GE


@dataclass
class LpProblem:
    """Minimize ``objective @ x`` subject to ``constraints``.

    ``bounds`` holds one ``(lo, hi)`` pair per variable with ``None`` for an
    open side; the default leaves every variable free.
    """

    objective: Sequence[float]
    constraints: list[Constraint]
    bounds: list[tuple[float | None, float | None]] | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.shape[0]
        if not self.constraints:
            raise ValueError("an LP needs at least one constraint")
        cons = []
        for c in self.constraints:
            if not isinstance(c, Constraint):
                row, rhs, *rest = c
                c = Constraint(tuple(float(v) for v in row), float(rhs), Sense(rest[0]) if rest else Sense.GE)
            if len(c.row) != n:
                raise ValueError(f"constraint row has length {len(c.row)}, expected {n}")
            cons.append(c)
        self.constraints = cons
        if self.bounds is None:
            self.bounds = [(None, None)] * n
        if len(self.bounds) != n:
            raise ValueError("one bound pair per variable is required")
        A = np.array([c.row for c in cons], dtype=float)
        b = np.array([c.rhs for c in cons], dtype=float)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(self.objective))):
            raise ValueError("LP coefficients must be finite")

    @property
    def n_vars(self) -> int:
        return int(self.objective.shape[0])

    @classmethod
    def from_arrays(cls, objective, A, b, sense: Sense | str = Sense.GE, bounds=None) -> "LpProblem":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        senses = [Sense(sense)] * len(b) if isinstance(sense, (str, Sense)) else [Sense(s) for s in sense]
        cons = [Constraint(tuple(row), float(r), s) for row, r, s in zip(A, b, senses)]
        return cls(objective, cons, bounds)


@dataclass
class LpSolution:
    status: Status
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = float("nan")
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    piv = T[r, c]
    if abs(piv) < PIVOT_TOL:
        raise NumericalInstability(f"pivot magnitude {abs(piv):.3g} below {PIVOT_TOL}")
    T[r] /= piv
    col = T[:, c].copy()
    col[r] = 0.0
    rows = np.flatnonzero(col)
    T[rows] -= col[rows, None] * T[r]
    T[:, c] = 0.0
    T[r, c] = 1.0


def _run_simplex(T: np.ndarray, basis: list[int], allowed: np.ndarray, max_pivots: int) -> tuple[str, int]:
    """Iterate on tableau ``T`` whose last row holds reduced costs and last column the rhs."""
    m = T.shape[0] - 1
    pivots = 0
    while True:
        costs = T[m, :-1]
        candidates = np.flatnonzero((costs < -OPT_TOL) & allowed)
        if candidates.size == 0:
            return "optimal", pivots
        c = int(candidates[0])
        col = T[:m, c]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            return "unbounded", pivots
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + FEAS_TOL * max(1.0, abs(best))]
        # Bland: lowest basic index leaves; artificials (negative markers) first
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, r, c)
        basis[r] = c
        pivots += 1
        if pivots > max_pivots:
            raise NumericalInstability("simplex exceeded its pivot budget")


def _to_standard(p: LpProblem):
    """Map original variables onto non-negative ones: ``x = shift + M @ y``."""
    n = p.n_vars
    cols: list[tuple[int, float]] = []
    shift = np.zeros(n)
    extra_rows: list[tuple[int, float]] = []
    for i, (lo, hi) in enumerate(p.bounds):
        if lo is None and hi is None:
            cols += [(i, 1.0), (i, -1.0)]
        elif lo is not None:
            shift[i] = lo
            cols.append((i, 1.0))
            if hi is not None:
                extra_rows.append((len(cols) - 1, hi - lo))
        else:
            shift[i] = hi
            cols.append((i, -1.0))
    M = np.zeros((n, len(cols)))
    for j, (i, s) in enumerate(cols):
        M[i, j] = s
    return shift, M, extra_rows


def solve_lp(p: LpProblem) -> LpSolution:
    shift, M, extra = _to_standard(p)
    A0 = np.array([c.row for c in p.constraints], dtype=float)
    b0 = np.array([c.rhs for c in p.constraints], dtype=float) - A0 @ shift
    senses = [c.sense for c in p.constraints]
    A = A0 @ M
    b = b0
    if extra:
        rows = np.zeros((len(extra), M.shape[1]))
        for k, (j, ub) in enumerate(extra):
            rows[k, j] = 1.0
        A = np.vstack([A, rows])
        b = np.concatenate([b, [ub for _, ub in extra]])
        senses = senses + [Sense.LE] * len(extra)
    cost = p.objective @ M
    m, ny = A.shape

    # rhs >= 0 so slacks / artificials start feasible
    flip = b < 0
    A = np.where(flip[:, None], -A, A)
    b = np.abs(b)
    senses = [
        (Sense.LE if s is Sense.GE else Sense.GE if s is Sense.LE else s) if f else s
        for s, f in zip(senses, flip)
    ]
    n_slack = sum(s is not Sense.EQ for s in senses)
    art_rows = [i for i, s in enumerate(senses) if s is not Sense.LE]
    # Artificial columns are never stored: an artificial that leaves the basis
    # never re-enters, and one still basic is tracked by a negative marker.
    N = ny + n_slack
    T = np.zeros((m + 1, N + 1))
    T[:m, :ny] = A
    T[:m, -1] = b
    basis = [0] * m
    k = ny
    for i, s in enumerate(senses):
        if s is Sense.LE:
            T[i, k] = 1.0
            basis[i] = k
            k += 1
        elif s is Sense.GE:
            T[i, k] = -1.0
            k += 1
    for i in art_rows:
        basis[i] = -1 - i

    budget = 50 * (m + N) + 1000
    pivots = 0
    allowed = np.ones(N, dtype=bool)
    if art_rows:
        # phase 1: minimise the artificial sum
        T[m, :] = -T[art_rows].sum(axis=0)
        _, used = _run_simplex(T, basis, allowed, budget)
        pivots += used
        infeasibility = sum(T[i, -1] for i in range(m) if basis[i] < 0)
        if infeasibility > FEAS_TOL * (1.0 + float(np.max(b, initial=0.0))):
            return LpSolution(Status.INFEASIBLE, pivots=pivots)
        for i in range(m):
            if basis[i] < 0:
                nz = np.flatnonzero(np.abs(T[i, :N]) > 1e-9)
                if nz.size:
                    _pivot(T, i, int(nz[0]))
                    basis[i] = int(nz[0])
                    pivots += 1
        keep = [i for i in range(m) if basis[i] >= 0]
        if len(keep) < m:
            T = np.vstack([T[keep], T[m:]])
            basis = [basis[i] for i in keep]
            m = len(keep)

    # phase 2
    full_cost = np.zeros(N)
    full_cost[:ny] = cost
    T[m, :-1] = full_cost
    T[m, -1] = 0.0
    for i, j in enumerate(basis):
        if full_cost[j] != 0.0:
            T[m] -= full_cost[j] * T[i]
    status, used = _run_simplex(T, basis, allowed, budget)
    pivots += used
    if status == "unbounded":
        return LpSolution(Status.UNBOUNDED, pivots=pivots)

    y = np.zeros(N)
    for i, j in enumerate(basis):
        if j >= 0:
            y[j] = T[i, -1]
    x = shift + M @ y[:ny]
    residual = _violation(p, x)
    if residual > 0:
        raise NumericalInstability(f"simplex solution violates a constraint by {residual:.3g}")
    return LpSolution(Status.OPTIMAL, x, float(p.objective @ x), pivots)


def _violation(p: LpProblem, x: np.ndarray) -> float:
    """Largest constraint violation beyond tolerance (0 if all satisfied)."""
    worst = 0.0
    for c in p.constraints:
        lhs = float(np.dot(c.row, x))
        tol = 1e-9 * (1.0 + abs(c.rhs)) + 1e-12 * float(np.abs(c.row) @ np.abs(x))
        if c.sense is Sense.GE:
            gap = c.rhs - lhs
        elif c.sense is Sense.LE:
            gap = lhs - c.rhs
        else:
            gap = abs(lhs - c.rhs)
        if gap > tol:
            worst = max(worst, gap)
    return worst


def brute_force_lp(objective: Sequence[float], A, b, sense: str = ">=") -> tuple[float, np.ndarray] | None:
    """Vertex enumeration oracle for tiny LPs with free variables.

    Returns ``(objective, x)`` at the best feasible vertex or ``None`` when no
    vertex is feasible.  Does not detect unboundedness.
    """
    from itertools import combinations

    c = np.asarray(objective, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    n = c.shape[0]
    best = None
    sign = 1.0 if sense == ">=" else -1.0
    for rows in combinations(range(A.shape[0]), n):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, b[list(rows)])
        if np.all(sign * (A @ x - b) >= -1e-9 * (1 + np.abs(b))):
            val = float(c @ x)
            if best is None or val < best[0]:
                best = (val, x)
    return best
