"""
Revised simplex method for  min cᵀx  s.t.  A x = b, x ≥ 0.

Two phases (artificial basis first), Dantzig pricing with a switch to Bland's rule
after a run of degenerate pivots, sparse LU of the basis refactored every pivot.
The optimal basis also yields the dual values y = B⁻ᵀ c_B.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

import settings
from log_utils import get_logger

logger = get_logger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class LPResult:
    status: str
    x: np.ndarray
    objective: float
    duals: np.ndarray
    iterations: int
    basis: np.ndarray

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


class RevisedSimplex:
    """Dense-vector, sparse-matrix revised simplex"""

    def __init__(self, A, b, c, tol: float = 1e-9, max_iter: Optional[int] = None,
                 bland_after: int = 50):
        self.A = sparse.csc_matrix(A, dtype=float)
        self.b = np.asarray(b, dtype=float).copy()
        self.c = np.asarray(c, dtype=float).copy()
        m, n = self.A.shape
        if self.b.shape != (m,) or self.c.shape != (n,):
            raise ValueError(f"shape mismatch: A {self.A.shape}, b {self.b.shape}, c {self.c.shape}")
        self.m, self.n = m, n
        self.tol = tol
        self.max_iter = max_iter or settings.MAX_ITER
        self.bland_after = bland_after
        self.iterations = 0

        # rows with negative right-hand side are negated so the artificial basis is feasible
        flip = np.where(self.b < 0, -1.0, 1.0)
        self.A = sparse.diags(flip) @ self.A
        self.b = flip * self.b
        self._flip = flip
        self._full = sparse.hstack([self.A, sparse.eye(m)], format='csc')

    def _factor(self, basis: np.ndarray):
        return splu(self._full[:, basis].tocsc())

    def _run(self, basis: np.ndarray, cost: np.ndarray, eligible: np.ndarray, phase: int):
        """Simplex iterations from a feasible basis; returns (status, basis, x_B, y)"""
        lu = self._factor(basis)
        x_b = lu.solve(self.b)
        degenerate_run = 0
        while True:
            if self.iterations >= self.max_iter:
                y = lu.solve(cost[basis], trans='T')
                return ITERATION_LIMIT, basis, x_b, y
            y = lu.solve(cost[basis], trans='T')
            reduced = cost - self._full.T @ y
            candidates = eligible.copy()
            candidates[basis] = False
            scale = max(1.0, float(np.max(np.abs(cost))))
            negative = candidates & (reduced < -self.tol * scale)
            if not np.any(negative):
                return OPTIMAL, basis, x_b, y
            if degenerate_run >= self.bland_after:
                entering = int(np.flatnonzero(negative)[0])
            else:
                entering = int(np.flatnonzero(negative)[np.argmin(reduced[negative])])

            column = self._full[:, entering].toarray().ravel()
            w = lu.solve(column)
            positive = w > self.tol
            if not np.any(positive):
                return UNBOUNDED, basis, x_b, y
            ratios = np.full(self.m, np.inf)
            ratios[positive] = np.maximum(x_b[positive], 0.0) / w[positive]
            step = float(ratios.min())
            ties = np.flatnonzero(ratios <= step + self.tol * max(1.0, step))
            leaving = int(ties[np.argmin(basis[ties])]) if degenerate_run >= self.bland_after \
                else int(ties[np.argmax(w[ties])])

            degenerate_run = degenerate_run + 1 if step <= self.tol else 0
            basis = basis.copy()
            basis[leaving] = entering
            self.iterations += 1
            lu = self._factor(basis)
            x_b = lu.solve(self.b)
            if self.iterations % 500 == 0:
                logger.debug("simplex_progress", phase=phase, iteration=self.iterations,
                             objective=float(cost[basis] @ x_b))

    def solve(self) -> LPResult:
        m, n = self.m, self.n
        art = np.arange(n, n + m)

        # Phase I: minimize the sum of artificials
        cost1 = np.concatenate([np.zeros(n), np.ones(m)])
        eligible = np.ones(n + m, dtype=bool)
        status, basis, x_b, _ = self._run(art.copy(), cost1, eligible, phase=1)
        infeas = float(cost1[basis] @ x_b)
        if status == ITERATION_LIMIT:
            return self._result(status, basis, x_b, np.zeros(m))
        if infeas > self.tol * max(1.0, float(np.abs(self.b).sum())):
            logger.info("simplex_infeasible", residual=infeas)
            return self._result(INFEASIBLE, basis, x_b, np.zeros(m))

        basis = self._drive_out_artificials(basis)

        # Phase II: artificials may stay basic at zero but never enter
        cost2 = np.concatenate([self.c, np.zeros(m)])
        eligible = np.concatenate([np.ones(n, dtype=bool), np.zeros(m, dtype=bool)])
        status, basis, x_b, y = self._run(basis, cost2, eligible, phase=2)
        return self._result(status, basis, x_b, y)

    def _drive_out_artificials(self, basis: np.ndarray) -> np.ndarray:
        basis = basis.copy()
        n = self.n
        for pos in np.flatnonzero(basis >= n):
            lu = self._factor(basis)
            unit = np.zeros(self.m)
            unit[pos] = 1.0
            row = lu.solve(unit, trans='T')
            entries = self.A.T @ row
            entries[basis[basis < n]] = 0.0
            swap = np.flatnonzero(np.abs(entries) > 1e-7)
            if swap.size:
                basis[pos] = int(swap[0])
        return basis

    def _result(self, status: str, basis: np.ndarray, x_b: np.ndarray, y: np.ndarray) -> LPResult:
        x = np.zeros(self.n + self.m)
        x[basis] = x_b
        x = np.maximum(x[:self.n], 0.0)
        return LPResult(status=status, x=x, objective=float(self.c @ x), duals=self._flip * y,
                        iterations=self.iterations, basis=basis)


def linprog_equality(A, b, c, tol: float = 1e-9, max_iter: Optional[int] = None) -> LPResult:
    """Convenience wrapper: min cᵀx s.t. A x = b, x ≥ 0"""
    return RevisedSimplex(A, b, c, tol=tol, max_iter=max_iter).solve()
