"""Dense two-phase simplex for small linear programs.

Problems are ``min c.x + constant`` subject to ``A_ub x <= b_ub``,
``A_eq x = b_eq`` and ``x >= 0``. Pivoting uses Dantzig's rule and falls
back to Bland's rule after a run of degenerate pivots, which rules out
cycling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

TOL = 1e-9
DEGENERATE_STREAK = 25


class LPError(RuntimeError):
    pass


class InfeasibleError(LPError):
    pass


class UnboundedError(LPError):
    pass


@dataclass
class LpProblem:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    constant: float = 0.0
    names: list[str] | None = None
    row_names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_ub, self.b_ub = _rows(self.A_ub, self.b_ub, n)
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n)
        for arr in (self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise LPError("LP coefficients must be finite")
        if self.names is None:
            self.names = [f"x{j}" for j in range(n)]
        if self.row_names is None:
            self.row_names = [f"ub{i}" for i in range(len(self.b_ub))] + [f"eq{i}" for i in range(len(self.b_eq))]

    @property
    def n_vars(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        return float(self.c @ np.asarray(x, dtype=float) + self.constant)

    def is_feasible(self, x, tol: float = 1e-7) -> bool:
        x = np.asarray(x, dtype=float)
        scale = 1.0 + np.abs(x).max(initial=0.0)
        return bool(
            np.all(x >= -tol * scale)
            and np.all(self.A_ub @ x <= self.b_ub + tol * scale)
            and np.all(np.abs(self.A_eq @ x - self.b_eq) <= tol * scale)
        )

    def dumps(self) -> str:
        """Plain-text dump; :func:`loads` reads it back."""
        lines = ["# lp v1", f"constant {float(self.constant)!r}"]
        for name, cost in zip(self.names, self.c):
            lines.append(f"var {name} {float(cost)!r}")
        blocks = [(self.A_ub, self.b_ub, "le"), (self.A_eq, self.b_eq, "eq")]
        row_iter = iter(self.row_names)
        for A, b, sense in blocks:
            for row, rhs in zip(A, b):
                terms = " ".join(f"{self.names[j]}:{float(row[j])!r}" for j in np.flatnonzero(row))
                lines.append(f"row {next(row_iter)} {sense} {float(rhs)!r} {terms}".rstrip())
        return "\n".join(lines) + "\n"

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps())


def _rows(A, b, n):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape != (b.size, n):
        raise LPError(f"constraint block has shape {A.shape}, expected ({b.size}, {n})")
    return A, b


def loads(text: str) -> LpProblem:
    names, costs, constant = [], [], 0.0
    rows = {"le": ([], []), "eq": ([], [])}
    row_names = {"le": [], "eq": []}
    index = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if tok[0] == "constant":
                constant = float(tok[1])
            elif tok[0] == "var":
                index[tok[1]] = len(names)
                names.append(tok[1])
                costs.append(float(tok[2]))
            elif tok[0] == "row":
                sense = tok[2]
                coefs = {}
                for term in tok[4:]:
                    name, val = term.rsplit(":", 1)
                    coefs[index[name]] = float(val)
                rows[sense][0].append(coefs)
                rows[sense][1].append(float(tok[3]))
                row_names[sense].append(tok[1])
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except (IndexError, KeyError, ValueError) as exc:
            raise LPError(f"line {lineno}: cannot parse {raw!r}: {exc}") from None

    def dense(coef_rows):
        A = np.zeros((len(coef_rows), len(names)))
        for i, coefs in enumerate(coef_rows):
            for j, v in coefs.items():
                A[i, j] = v
        return A

    return LpProblem(
        np.array(costs), dense(rows["le"][0]), np.array(rows["le"][1]), dense(rows["eq"][0]), np.array(rows["eq"][1]),
        constant=constant, names=names, row_names=row_names["le"] + row_names["eq"],
    )


def load(path) -> LpProblem:
    return loads(Path(path).read_text())


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    iterations: int
    basis: list[int] = field(default_factory=list)


class _Tableau:
    """Simplex tableau with the objective row stored last."""

    def __init__(self, T: np.ndarray, basis: list[int]):
        self.T = T
        self.basis = basis
        self.pivots = 0

    def pivot(self, row: int, col: int) -> None:
        T = self.T
        T[row] /= T[row, col]
        col_vals = T[:, col].copy()
        col_vals[row] = 0.0
        T -= np.outer(col_vals, T[row])
        self.basis[row] = col
        self.pivots += 1

    def run(self, allowed: np.ndarray, max_pivots: int) -> None:
        T = self.T
        bland = False
        streak = 0
        while True:
            reduced = T[-1, :-1]
            candidates = np.flatnonzero((reduced < -TOL) & allowed)
            if candidates.size == 0:
                return
            col = int(candidates[0]) if bland else int(candidates[np.argmin(reduced[candidates])])
            column = T[:-1, col]
            rows = np.flatnonzero(column > TOL)
            if rows.size == 0:
                raise UnboundedError(f"objective unbounded along column {col}")
            ratios = T[rows, -1] / column[rows]
            best = ratios.min()
            tied = rows[ratios <= best + TOL * (1.0 + abs(best))]
            row = int(min(tied, key=lambda r: self.basis[r]))
            if best <= TOL:
                streak += 1
                if streak >= DEGENERATE_STREAK and not bland:
                    logger.debug("switching to Bland's rule after %d degenerate pivots", streak)
                    bland = True
            else:
                streak = 0
                bland = False
            self.pivot(row, col)
            if self.pivots > max_pivots:
                raise LPError(f"simplex exceeded {max_pivots} pivots")


def solve_lp(problem: LpProblem, max_pivots: int | None = None) -> LpSolution:
    n = problem.n_vars
    A_ub, b_ub, A_eq, b_eq = problem.A_ub, problem.b_ub, problem.A_eq, problem.b_eq
    m_ub, m_eq = len(b_ub), len(b_eq)
    m = m_ub + m_eq

    # columns: original | slacks | artificials | rhs
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1.0
    b = np.where(neg, -b, b)

    basis = [-1] * m
    needs_art = []
    for i in range(m):
        if i < m_ub and not neg[i]:
            basis[i] = n + i
        else:
            needs_art.append(i)
    n_struct = n + m_ub
    n_art = len(needs_art)
    total = n_struct + n_art
    T = np.zeros((m + 1, total + 1))
    T[:m, :n_struct] = A
    T[:m, -1] = b
    for k, i in enumerate(needs_art):
        T[i, n_struct + k] = 1.0
        basis[i] = n_struct + k
    max_pivots = max_pivots or 50 * (m + total + 10)
    tab = _Tableau(T, basis)

    if n_art:
        # phase 1: minimize the sum of artificials
        T[-1, :] = 0.0
        T[-1, n_struct:total] = 1.0
        for i in needs_art:
            T[-1] -= T[i]
        tab.run(np.ones(total, dtype=bool), max_pivots)
        infeas = -T[-1, -1]
        if infeas > 1e-7 * (1.0 + np.abs(b).max(initial=0.0)):
            raise InfeasibleError(f"LP infeasible (phase-1 residual {infeas:.3g})")
        # drive zero-valued artificials out of the basis; drop redundant rows
        drop = []
        for i in range(m):
            if tab.basis[i] >= n_struct:
                row = T[i, :n_struct]
                j = np.flatnonzero(np.abs(row) > 1e-7)
                if j.size:
                    tab.pivot(i, int(j[0]))
                else:
                    drop.append(i)
        if drop:
            keep = [i for i in range(m) if i not in drop] + [m]
            T = T[keep]
            tab.T = T
            tab.basis = [tab.basis[i] for i in range(m) if i not in drop]
            m = len(tab.basis)

    # phase 2
    T[-1, :] = 0.0
    T[-1, :n] = problem.c
    for i, j in enumerate(tab.basis):
        if T[-1, j] != 0.0:
            T[-1] -= T[-1, j] * T[i]
    allowed = np.zeros(total, dtype=bool)
    allowed[:n_struct] = True
    tab.run(allowed, max_pivots)

    x = np.zeros(total)
    for i, j in enumerate(tab.basis):
        x[j] = T[i, -1]
    x = np.maximum(x[:n], 0.0)
    return LpSolution(x, problem.objective(x), tab.pivots, list(tab.basis))
