"""
Monge–Kantorovich pair for the relaxed compliance problem.

    I(F,Ω,Σ) = sup { ⟨F,u⟩ : ρ(e(u)) ≤ 1, u = 0 on Σ }
             = min { ∫ ρ⁰(λ) : −div λ = F off Σ, spt λ ⊂ Ω̄ }

and the optimal density μ = ρ⁰(λ)/I, with minimal compliance I²/2.

Grid path: primal–dual (Chambolle–Pock) iteration on the stress problem with the cellwise
prox of ρ⁰. Truss path: the same problem on a ground structure is a linear program.
Both report certified bounds: the stress side (corrected to exact equilibrium) from above,
the displacement side (rescaled into the ρ ≤ 1 ball) from below.
"""

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.sparse.linalg import splu

import settings
from compliance import compliance_E
from domain_grid import (DensityMeasure, DiscreteDomain, DisplacementField, StressField, TrussGraph,
                         check_connected, ground_structure)
from errors import ConvergenceError, InconsistencyError, InfeasibleProblemError
from integrands import ElasticLaw, GaugeTable
from log_utils import get_logger
from simplex import INFEASIBLE, OPTIMAL, RevisedSimplex

logger = get_logger(__name__)


class MKOptions(BaseModel):
    """Solver options for the Monge–Kantorovich problem"""
    model_config = ConfigDict(frozen=True)

    tol: float = Field(settings.MK_TOL, gt=0)
    max_iter: int = Field(settings.MAX_ITER, ge=1)
    check_every: int = Field(50, ge=1)
    gauge: Literal["relaxed", "original"] = "relaxed"
    adaptive: bool = True
    seed: int = settings.SEED


@dataclass
class MKSolution:
    I_value: float
    lam: StressField
    u: DisplacementField
    mu_opt: DensityMeasure
    primal: float
    dual: float
    gap: float
    residual: float
    iterations: int
    method: str
    gauge: str
    law: ElasticLaw
    dom: DiscreteDomain
    graph: Optional[TrussGraph] = None
    history: list = field(default_factory=list)

    @property
    def scalar(self) -> bool:
        return self.dom.scalar

    def summary(self) -> dict:
        return {
            "I": self.I_value,
            "primal": self.primal,
            "dual": self.dual,
            "gap": self.gap,
            "residual": self.residual,
            "iterations": self.iterations,
            "method": self.method,
            "gauge": self.gauge,
            "scalar": self.scalar,
            "optimal_mass_value": 0.5 * self.I_value ** 2,
        }


def _relative_gap(primal: float, dual: float) -> float:
    return abs(primal - dual) / max(abs(primal), 1e-300)


# === Scalar-mode gauge (Euclidean) ===


class _EuclideanGauge:
    def rho(self, z: np.ndarray) -> np.ndarray:
        return np.linalg.norm(z, axis=-1)

    def rho0(self, xi: np.ndarray) -> np.ndarray:
        return np.linalg.norm(xi, axis=-1)

    def prox_rho0(self, xi: np.ndarray, step) -> np.ndarray:
        norm = np.linalg.norm(xi, axis=-1, keepdims=True)
        shrink = np.maximum(0.0, 1.0 - step / np.maximum(norm, 1e-300))
        return xi * shrink


def _gauge_for(dom: DiscreteDomain, law: ElasticLaw, gauge: str):
    return _EuclideanGauge() if dom.scalar else GaugeTable(law, gauge)


def _zero_solution(dom: DiscreteDomain, law: ElasticLaw, method: str, gauge: str,
                   graph: Optional[TrussGraph] = None) -> MKSolution:
    shape = (dom.n_cells, dom.dim) if dom.scalar else (dom.n_cells, dom.dim, dom.dim)
    lam = StressField(np.zeros(shape)) if graph is None else StressField(bars=np.zeros(graph.n_bars))
    return MKSolution(0.0, lam, DisplacementField(np.zeros((dom.n_nodes, dom.ncomp))),
                      DensityMeasure.lebesgue(dom), 0.0, 0.0, 0.0, 0.0, 0, method, gauge, law, dom, graph)


# === Grid path ===


def _power_norm(E_act: sparse.csr_matrix, seed: int, iters: int = 100) -> float:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(E_act.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = E_act.T @ (E_act @ v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            break
        v = w / est
    return float(np.sqrt(est))


def solve_mk_grid(dom: DiscreteDomain, law: ElasticLaw, opts: Optional[MKOptions] = None) -> MKSolution:
    """Mass-minimal stress on the grid by a primal–dual iteration"""
    opts = opts or MKOptions()
    dom.check_posed()
    gauge = _gauge_for(dom, law, opts.gauge)
    free_nodes = ~dom.clamped & dom.omega_nodes
    free = np.repeat(free_nodes, dom.ncomp)
    F_full = dom.load_vector
    if np.any(F_full[np.repeat(~dom.omega_nodes, dom.ncomp)] != 0):
        raise InfeasibleProblemError("load applied outside Ω̄")
    F = F_full[free]
    if not np.any(F):
        return _zero_solution(dom, law, "grid", opts.gauge)

    n = dom.dim
    nn = n if dom.scalar else n * n
    act = np.flatnonzero(dom.active_cells)
    rows = (act[:, None] * nn + np.arange(nn)).ravel()
    E_act = dom.strain_matrix[rows][:, np.flatnonzero(free)].tocsr()
    K = E_act.T.tocsr()            # integrated cell stress -> nodal force on free dofs
    cell_shape = (act.size, n) if dom.scalar else (act.size, n, n)

    gram = (K @ E_act).tocsc()
    ridge = 1e-12 * float(gram.diagonal().max())
    gram_lu = splu((gram + ridge * sparse.eye(gram.shape[0])).tocsc())
    f_norm = float(np.linalg.norm(F))

    def equilibrate(x_flat: np.ndarray) -> np.ndarray:
        r = F - K @ x_flat
        return x_flat + E_act @ gram_lu.solve(r)

    x = equilibrate(np.zeros(E_act.shape[0]))
    if np.linalg.norm(F - K @ x) > 1e-6 * f_norm:
        raise InfeasibleProblemError("no stress supported in Ω̄ balances the load "
                                     "(load outside the range of the grid divergence)")
    y = np.zeros(F.size)

    norm_k = 1.01 * _power_norm(E_act, opts.seed)
    tau = sigma = 0.99 / norm_k
    alpha_adapt, eta, delta_ratio = 0.5, 0.95, 1.5

    def prox(v: np.ndarray, step: float) -> np.ndarray:
        return gauge.prox_rho0(v.reshape(cell_shape), step).reshape(-1)

    best_primal, best_dual = np.inf, -np.inf
    best_lam = x.copy()
    best_u = np.zeros(F.size)
    history = []
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        x_old, y_old = x, y
        Ky = E_act @ y
        x = prox(x - tau * Ky, tau)
        x_bar = 2.0 * x - x_old
        y = y + sigma * (K @ x_bar - F)

        if opts.adaptive and iterations % 10 == 0:
            dx, dy = x_old - x, y_old - y
            p_res = np.linalg.norm(dx / tau - E_act @ dy)
            d_res = np.linalg.norm(dy / sigma - K @ dx)
            if p_res > delta_ratio * d_res:
                tau, sigma = tau / (1.0 - alpha_adapt), sigma * (1.0 - alpha_adapt)
                alpha_adapt *= eta
            elif d_res > delta_ratio * p_res:
                tau, sigma = tau * (1.0 - alpha_adapt), sigma / (1.0 - alpha_adapt)
                alpha_adapt *= eta

        if iterations % opts.check_every == 0:
            lam_c = equilibrate(x)
            primal = float(np.sum(gauge.rho0(lam_c.reshape(cell_shape))))
            u = -y
            peak = float(np.max(gauge.rho((E_act @ u).reshape(cell_shape)), initial=0.0))
            dual = float(F @ u) / peak if peak > 0 else -np.inf
            history.append((iterations, primal, dual))
            if primal < best_primal:
                best_primal, best_lam = primal, lam_c
            if dual > best_dual:
                best_dual, best_u = dual, u / peak
            gap = _relative_gap(best_primal, best_dual)
            logger.debug("mk_iteration", iteration=iterations, primal=best_primal, dual=best_dual,
                         gap=gap, tau=tau, sigma=sigma)
            if gap <= opts.tol:
                break

    gap = _relative_gap(best_primal, best_dual)
    if gap > opts.tol:
        raise ConvergenceError(f"grid MK solver did not reach gap {opts.tol} in {iterations} iterations",
                               primal=best_primal, dual=best_dual, iterations=iterations,
                               details={"gap": gap})

    residual = float(np.linalg.norm(F - K @ best_lam)) / max(1.0, f_norm)
    lam_cells = np.zeros((dom.n_cells,) + cell_shape[1:])
    lam_cells[act] = best_lam.reshape(cell_shape) / dom.cell_volume
    mass = np.zeros(dom.n_cells)
    mass[act] = gauge.rho0(best_lam.reshape(cell_shape))
    mu = DensityMeasure.on(dom, mass / (dom.cell_volume * best_primal))
    u_full = np.zeros(dom.n_dofs)
    u_full[free] = best_u
    logger.info("mk_grid_solved", I=best_primal, dual=best_dual, gap=gap, iterations=iterations,
                cells=int(act.size), gauge=opts.gauge)
    return MKSolution(best_primal, StressField(lam_cells), DisplacementField(u_full.reshape(dom.n_nodes, dom.ncomp)),
                      mu, best_primal, best_dual, gap, residual, iterations, "grid", opts.gauge, law, dom,
                      history=history)


# === Truss path ===


def bar_cost(dom: DiscreteDomain, law: ElasticLaw) -> float:
    """ρ⁰ of a unit axial force per unit length (√γ in 2D); identical for both gauges"""
    return 1.0 if dom.scalar else float(np.sqrt(2.0 * law.rank_one_coef))


def solve_mk_truss(dom: DiscreteDomain, law: ElasticLaw, connectivity_radius: float,
                   opts: Optional[MKOptions] = None, node_mask: Optional[np.ndarray] = None,
                   graph: Optional[TrussGraph] = None) -> MKSolution:
    """Michell problem on a ground structure as the LP  min Σ c_b L_b (q⁺ + q⁻),  B(q⁺ − q⁻) = F"""
    opts = opts or MKOptions()
    dom.check_posed()
    graph = graph or ground_structure(dom, connectivity_radius, node_mask)
    free = dom.free_dofs
    F = dom.load_vector[free]
    if not np.any(F):
        return _zero_solution(dom, law, "truss", opts.gauge, graph)
    check_connected(dom, graph)

    B = graph.equilibrium.tocsr()[np.flatnonzero(free)]
    live = np.diff(B.indptr) > 0
    if np.any(F[~live] != 0):
        raise InfeasibleProblemError("a loaded degree of freedom is not reached by any bar")
    B_live = B[np.flatnonzero(live)]
    cost = bar_cost(dom, law) * graph.lengths
    A = sparse.hstack([B_live, -B_live], format='csc')
    c = np.concatenate([cost, cost])
    result = RevisedSimplex(A, F[live], c, tol=1e-10, max_iter=opts.max_iter).solve()
    if result.status == INFEASIBLE:
        raise InfeasibleProblemError("the ground structure cannot equilibrate the load")
    if result.status != OPTIMAL:
        raise ConvergenceError(f"truss LP stopped with status {result.status}",
                               iterations=result.iterations)

    m = graph.n_bars
    q = result.x[:m] - result.x[m:]
    primal = float(cost @ np.abs(q))
    u_free = np.zeros(free.sum())
    u_free[live] = result.duals
    dual = float(F @ u_free)
    residual = float(np.linalg.norm(B @ q - F)) / max(1.0, float(np.linalg.norm(F)))
    gap = _relative_gap(primal, dual)
    density = bar_cost(dom, law) * np.abs(q) / primal
    mu = DensityMeasure.truss(dom, graph, density)
    u_full = np.zeros(dom.n_dofs)
    u_full[free] = u_free
    logger.info("mk_truss_solved", I=primal, dual=dual, gap=gap, bars=m,
                active_bars=int(np.count_nonzero(density)), iterations=result.iterations)
    return MKSolution(primal, StressField(bars=q), DisplacementField(u_full.reshape(dom.n_nodes, dom.ncomp)),
                      mu, primal, dual, gap, residual, result.iterations, "truss", opts.gauge, law, dom, graph)


# === Optimal mass ===


def optimal_mass_value(sol: MKSolution, cross_tol: float = 0.05, compliance_tol: float = 1e-4) -> float:
    """I²/2, cross-checked against the compliance of the recovered optimal density"""
    value = 0.5 * sol.I_value ** 2
    if sol.I_value == 0.0:
        return 0.0
    k = sol.dom.dim if sol.gauge == "original" else sol.dom.dim - 1
    report = compliance_E(sol.dom, sol.mu_opt, sol.law, k=k, tol=compliance_tol)
    deviation = abs(report.value - value) / value
    logger.info("optimal_mass_cross_check", value=value, compliance=report.value, deviation=deviation)
    if not np.isfinite(report.value) or deviation > cross_tol:
        raise InconsistencyError(
            f"I²/2 = {value:.6g} disagrees with the compliance of μ_opt = {report.value:.6g}",
            {"value": value, "compliance": report.value, "deviation": deviation, "tolerance": cross_tol})
    return value
