"""
Compliance functionals on grid and truss measures.

    c(μ)   = −inf { ∫ j(e(u)) dμ − ⟨F,u⟩ }           (quadratic law, one linear solve)
    E_k(μ) = −inf { ∫ j_k(e(u)) dμ − ⟨F,u⟩ }         (E = E_{n−1}, convex non-quadratic)
    c_ε(ω) = c(1_ω/ε)

Every evaluation returns a primal value from displacements and a dual value from an
equilibrated stress field (the stress formulation min ∫ j_k*(σ) dμ, −div(σμ) = F), so the
reported gap certifies the value. Measures whose support does not reach the load are
handled by a Lebesgue floor extrapolated to zero.

Since j_k ≤ j, the functionals are ordered E_0 ≥ E_1 ≥ … ≥ E_n = c.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

import settings
from domain_grid import (DensityMeasure, DiscreteDomain, DisplacementField, StressField,
                         _equilibrium_matrix, discrete_strain)
from errors import ConvergenceError, InputError
from integrands import ElasticLaw, j_k_batch, j_k_star_batch, stress_from_strain
from log_utils import get_logger

logger = get_logger(__name__)

STABILIZATION = 1e-8
_RIDGE = 1e-10
_RESIDUAL_TOL = 1e-8
_DIVERGENCE_RATIO = 10.0


@dataclass
class ComplianceReport:
    value: float
    displacement: DisplacementField
    stress: StressField
    primal: float
    dual: float
    gap: float
    law_kind: str
    k: int
    iterations: int = 0
    delta: Optional[float] = None
    floor_values: List[Tuple[float, float]] = field(default_factory=list)
    extrapolation_residual: Optional[float] = None
    diagnosis: Optional[str] = None

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))

    def to_row(self) -> dict:
        """One CSV run-log row"""
        return {
            "law": self.law_kind,
            "k": self.k,
            "delta": "" if self.delta is None else self.delta,
            "value": self.value,
            "primal": self.primal,
            "dual": self.dual,
            "gap": self.gap,
            "iterations": self.iterations,
            "extrapolation_residual": "" if self.extrapolation_residual is None else self.extrapolation_residual,
        }

    def rescaled(self, t: float) -> 'ComplianceReport':
        """Report for the measure t·μ given this report for μ"""
        stress = StressField(None if self.stress.cells is None else self.stress.cells / t, self.stress.bars)
        return ComplianceReport(self.value / t, DisplacementField(self.displacement.values / t), stress,
                                self.primal / t, self.dual / t, self.gap, self.law_kind, self.k,
                                self.iterations, self.delta,
                                [(d, v / t) for d, v in self.floor_values],
                                self.extrapolation_residual, self.diagnosis)


def law_kind(dom: DiscreteDomain, k: int) -> str:
    if dom.scalar or k == dom.dim:
        return "j"
    if k == dom.dim - 1:
        return "j_bar"
    return "j_k"


def _gap(primal: float, dual: float) -> float:
    return abs(primal - dual) / max(1.0, abs(dual))


# === Assembly ===


class _WeightedSystem:
    """Quadratic-law stiffness for normalized weights plus the pieces the E solver needs"""

    def __init__(self, dom: DiscreteDomain, law: ElasticLaw, w: np.ndarray,
                 bars: Optional[np.ndarray], theta: Optional[np.ndarray]):
        self.dom, self.law, self.w = dom, law, w
        vol = dom.cell_volume
        nn = dom.dim if dom.scalar else dom.dim * dom.dim
        E = dom.strain_matrix
        if dom.scalar:
            elastic = vol * (E.T @ sparse.diags(np.repeat(w, nn)) @ E)
            stiff_scale = 1.0
            self.rank_one = 0.5
        else:
            Tr = dom.trace_matrix
            elastic = vol * (2.0 * law.beta * (E.T @ sparse.diags(np.repeat(w, nn)) @ E)
                             + law.alpha * (Tr.T @ sparse.diags(w) @ Tr))
            stiff_scale = 2.0 * law.beta + dom.dim * abs(law.alpha)
            self.rank_one = law.rank_one_coef
        H = dom.hourglass_matrix
        per_row = H.shape[0] // dom.n_cells
        coef = STABILIZATION * stiff_scale / dom.h ** 2 * vol
        self.stab = coef * (H.T @ sparse.diags(np.repeat(w, per_row)) @ H)

        self.bars = bars if bars is not None and len(bars) else None
        if self.bars is not None:
            coords = dom.node_coords
            vec = coords[self.bars[:, 1]] - coords[self.bars[:, 0]]
            self.bar_lengths = np.linalg.norm(vec, axis=1)
            self.bar_op = _equilibrium_matrix(dom, self.bars, vec / self.bar_lengths[:, None])
            self.bar_stiffness = theta / (2.0 * self.rank_one * self.bar_lengths)
            self.theta = theta
            self.bars_k = self.bar_op @ sparse.diags(self.bar_stiffness) @ self.bar_op.T
        else:
            self.bars_k = sparse.csr_matrix((dom.n_dofs, dom.n_dofs))
        self.extra = (self.stab + self.bars_k).tocsr()
        self.K = (elastic + self.extra).tocsr()

    def bar_forces(self, u: np.ndarray) -> Optional[np.ndarray]:
        if self.bars is None:
            return None
        return self.bar_stiffness * (self.bar_op.T @ u)


@dataclass
class _SupportPlan:
    active: np.ndarray
    ok: bool
    ridge: bool
    stranded: List[int]


def _support_plan(dom: DiscreteDomain, w: np.ndarray, bars, theta) -> _SupportPlan:
    rows, cols = [], []
    weighted = np.flatnonzero(w > 0)
    corners = dom.cell_nodes[weighted]
    for j in range(1, corners.shape[1]):
        rows.append(corners[:, 0])
        cols.append(corners[:, j])
    touched = np.zeros(dom.n_nodes, dtype=bool)
    touched[corners.ravel()] = True
    if bars is not None and len(bars):
        live = bars[theta > 0]
        rows.append(live[:, 0])
        cols.append(live[:, 1])
        touched[live.ravel()] = True
    r = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
    c = np.concatenate(cols) if cols else np.zeros(0, dtype=int)
    adj = sparse.coo_matrix((np.ones(r.size), (r, c)), shape=(dom.n_nodes, dom.n_nodes))
    _, labels = connected_components(adj, directed=False)
    loaded = np.any(dom.load != 0.0, axis=1) & ~dom.clamped
    if np.any(dom.clamped):
        anchors = np.unique(labels[dom.clamped & touched])
        anchored = np.isin(labels, anchors) & touched
        stranded = [int(p) for p in np.flatnonzero(loaded & ~anchored)]
        active_nodes = anchored & ~dom.clamped
        # pin-jointed trusses may carry mechanisms the load does not excite
        ridge = not np.any(w > 0)
    else:
        stranded = [int(p) for p in np.flatnonzero(loaded & ~touched)]
        active_nodes = touched
        ridge = True
    return _SupportPlan(np.repeat(active_nodes, dom.ncomp), not stranded, ridge, stranded)


def _factor(K: sparse.csr_matrix, active: np.ndarray, ridge: bool):
    Kaa = K[active][:, active].tocsc()
    if ridge:
        scale = float(np.max(np.abs(Kaa.diagonal()))) if Kaa.shape[0] else 1.0
        Kaa = (Kaa + _RIDGE * scale * sparse.eye(Kaa.shape[0])).tocsc()
    return splu(Kaa)


def _solve_active(lu, active: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    u = np.zeros(active.size)
    u[active] = lu.solve(rhs[active])
    return u


# === Stress side ===


def _stress_side(system: _WeightedSystem, k: int, u: np.ndarray, sigma: np.ndarray) -> float:
    """Σ vol w j_k*(σ) + ½ uᵀ(stab + bars) u for an equilibrated (σ, u) pair"""
    dom, w = system.dom, system.w
    idx = w > 0
    if dom.scalar:
        density = 0.5 * np.sum(sigma[idx] ** 2, axis=-1)
    else:
        density = j_k_star_batch(system.law, k, sigma[idx])
    if not np.all(np.isfinite(density)):
        return np.inf
    return float(dom.cell_volume * (w[idx] @ density) + 0.5 * u @ (system.extra @ u))


def _cell_stress(system: _WeightedSystem, u: np.ndarray) -> np.ndarray:
    e = discrete_strain(system.dom, u)
    if system.dom.scalar:
        return e
    return stress_from_strain(system.law, e)


def _internal_force(system: _WeightedSystem, lam: np.ndarray, u: np.ndarray) -> np.ndarray:
    dom = system.dom
    return dom.cell_volume * (dom.strain_matrix.T @ lam.reshape(-1)) + system.extra @ u


# === c(μ) ===


def _solve_c(dom: DiscreteDomain, law: ElasticLaw, w, bars, theta, plan: _SupportPlan) -> ComplianceReport:
    system = _WeightedSystem(dom, law, w, bars, theta)
    F = dom.load_vector
    lu = _factor(system.K, plan.active, plan.ridge)
    u = _solve_active(lu, plan.active, F)
    residual = system.K @ u - F
    residual[~plan.active] = 0.0
    if not np.all(np.isfinite(u)) or np.linalg.norm(residual) > _RESIDUAL_TOL * max(1.0, np.linalg.norm(F)):
        raise np.linalg.LinAlgError("weighted stiffness is singular on the support")
    primal = float(F @ u - 0.5 * u @ (system.K @ u))
    sigma = _cell_stress(system, u)
    dual = _stress_side(system, dom.dim, u, sigma)
    value = 0.5 * float(F @ u)
    return ComplianceReport(value, DisplacementField(u.reshape(dom.n_nodes, dom.ncomp)),
                            StressField(sigma, system.bar_forces(u)), primal, dual,
                            _gap(primal, dual), "j", dom.dim)


# === E_k(μ) ===


def _solve_E(dom: DiscreteDomain, law: ElasticLaw, k: int, w, bars, theta, plan: _SupportPlan,
             tol: float, max_iter: int, check_every: int = 20) -> ComplianceReport:
    system = _WeightedSystem(dom, law, w, bars, theta)
    F = dom.load_vector
    vol = dom.cell_volume
    idx = w > 0
    wi = w[idx]
    lu = _factor(system.K, plan.active, plan.ridge)
    precondition = lambda g: _solve_active(lu, plan.active, g)

    def energy(u, temperature):
        e = discrete_strain(dom, u)[idx]
        value, grad = j_k_batch(law, k, e, temperature)
        lam = np.zeros((dom.n_cells, dom.dim, dom.dim))
        lam[idx] = wi[:, None, None] * grad
        obj = vol * float(wi @ value) + 0.5 * u @ (system.extra @ u) - F @ u
        g = _internal_force(system, lam, u) - F
        g[~plan.active] = 0.0
        return obj, g, grad

    def certificate(u):
        e = discrete_strain(dom, u)[idx]
        exact, sel = j_k_batch(law, k, e, 0.0)
        primal = float(F @ u - vol * (wi @ exact) - 0.5 * u @ (system.extra @ u))
        sigma = np.zeros((dom.n_cells, dom.dim, dom.dim))
        sigma[idx] = sel
        residual = F - _internal_force(system, w[:, None, None] * sigma, u)
        residual[~plan.active] = 0.0
        v = precondition(residual)
        corrected = sigma + stress_from_strain(law, discrete_strain(dom, v))
        dual = _stress_side(system, k, u + v, corrected)
        return primal, dual, corrected

    u0 = precondition(F)
    best_u = u0
    best_primal, best_dual, best_sigma = certificate(u0)
    c_value = 0.5 * float(F @ u0)
    mass = vol * float(wi.sum())
    n_subsets = max(2, math.comb(dom.dim, k))
    temperature = 1e-2 * max(c_value, 1e-300) / (max(mass, 1e-300) * np.log(n_subsets))
    floor_temperature = 1e-3 * tol * max(c_value, 1e-300) / (max(mass, 1e-300) * np.log(n_subsets))

    x = u0.copy()
    y = u0.copy()
    t = 1.0
    L = 1.0
    fx, _, _ = energy(x, temperature)
    iterations = 0
    stage_best = fx
    while iterations < max_iter:
        fy, gy, _ = energy(y, temperature)
        step = precondition(gy)
        decrease = float(gy @ step)
        while True:
            x_new = y - step / L
            f_new, _, _ = energy(x_new, temperature)
            if f_new <= fy - 0.5 * decrease / L + 1e-14 * abs(fy):
                break
            L *= 2.0
        iterations += 1
        if f_new > fx:
            # adaptive restart
            t = 1.0
            y = x.copy()
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, fx, t = x_new, f_new, t_new
        L = max(L * 0.9, 1e-3)

        if iterations % check_every == 0:
            primal, dual, sigma = certificate(x)
            if primal > best_primal:
                best_primal, best_u = primal, x.copy()
            if dual < best_dual:
                best_dual, best_sigma = dual, sigma
            rel = abs(best_dual - best_primal) / max(abs(best_dual), 1e-300)
            logger.debug("compliance_E_progress", iteration=iterations, primal=best_primal,
                         dual=best_dual, gap=rel, temperature=temperature)
            if rel <= tol:
                break
            progress = (stage_best - fx) / max(abs(fx), 1e-300)
            stage_best = min(stage_best, fx)
            if progress < 0.1 * tol and temperature > floor_temperature:
                temperature *= 0.1
                t, y, L = 1.0, x.copy(), max(L, 1.0)
                fx, _, _ = energy(x, temperature)
                stage_best = fx
    rel = abs(best_dual - best_primal) / max(abs(best_dual), 1e-300)
    if rel > tol:
        raise ConvergenceError(f"E_{k} solver did not reach gap {tol} in {iterations} iterations",
                               primal=best_primal, dual=best_dual, iterations=iterations,
                               details={"gap": rel})
    return ComplianceReport(best_primal, DisplacementField(best_u.reshape(dom.n_nodes, dom.ncomp)),
                            StressField(best_sigma, system.bar_forces(best_u)), best_primal, best_dual,
                            _gap(best_primal, best_dual), law_kind(dom, k), k, iterations)


# === Support handling ===


def _zero_report(dom: DiscreteDomain, k: int, kind: str, cells: bool = True) -> ComplianceReport:
    shape = (dom.n_cells, dom.dim) if dom.scalar else (dom.n_cells, dom.dim, dom.dim)
    return ComplianceReport(0.0, DisplacementField(np.zeros((dom.n_nodes, dom.ncomp))),
                            StressField(np.zeros(shape) if cells else None), 0.0, 0.0, 0.0, kind, k)


def _infinite_report(dom: DiscreteDomain, k: int, kind: str, diagnosis: str, floor_values=None) -> ComplianceReport:
    rep = _zero_report(dom, k, kind)
    rep.value = rep.primal = rep.dual = np.inf
    rep.gap = 0.0
    rep.diagnosis = diagnosis
    rep.floor_values = list(floor_values or [])
    logger.warning("compliance_unsupported_load", law=kind, diagnosis=diagnosis)
    return rep


def _evaluate(dom: DiscreteDomain, measure: DensityMeasure, k: int,
              solve: Callable[..., ComplianceReport], floor_ladder: Tuple[float, ...]) -> ComplianceReport:
    kind = law_kind(dom, k)
    if not np.any(dom.load[~dom.clamped]):
        return _zero_report(dom, k, kind)
    if measure.cell_weights.shape != (dom.n_cells,):
        raise InputError(f"measure has {measure.cell_weights.size} cell weights, domain has {dom.n_cells} cells")
    w = np.where(dom.active_cells, measure.cell_weights, 0.0)
    bars, theta = (measure.bars, measure.bar_density) if measure.has_truss else (None, None)
    scale = max(float(w.max(initial=0.0)), float(theta.max(initial=0.0)) if theta is not None else 0.0)
    if scale <= 0:
        return _infinite_report(dom, k, kind, "measure has zero mass")
    wn = w / scale
    tn = None if theta is None else theta / scale

    plan = _support_plan(dom, wn, bars, tn)
    if plan.ok:
        try:
            return solve(wn, bars, tn, plan).rescaled(scale)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            logger.info("compliance_fast_path_failed", reason=str(exc))

    # Lebesgue floor on the empty cells of Ω, extrapolated to zero
    mean = (dom.cell_volume * wn.sum() + (0.0 if tn is None else float(tn @ _lengths(dom, bars)))) / dom.volume
    holes = dom.active_cells & (wn <= 0)
    ladder = sorted(floor_ladder, reverse=True)
    values, reports = [], []
    for delta in ladder:
        w_delta = wn + delta * mean * holes
        plan_d = _support_plan(dom, w_delta, bars, tn)
        if not plan_d.ok:
            node = plan_d.stranded[0]
            return _infinite_report(dom, k, kind, f"loaded node {node} at {dom.node_coords[node].tolist()} "
                                                  f"cannot reach Σ")
        rep = solve(w_delta, bars, tn, plan_d).rescaled(scale)
        rep.delta = delta
        values.append((delta, rep.value))
        reports.append(rep)
        logger.debug("compliance_floor", delta=delta, value=rep.value)
    if values[-1][1] > _DIVERGENCE_RATIO * values[0][1]:
        stranded = plan.stranded[0] if plan.stranded else None
        where = "" if stranded is None else f" (loaded node {stranded} at {dom.node_coords[stranded].tolist()})"
        return _infinite_report(dom, k, kind, f"compliance diverges as the floor vanishes{where}: "
                                              f"the load is not supported by μ", values)
    db, cb = values[-1]
    extrapolated, residual = cb, None
    if len(values) >= 2:
        da, ca = values[-2]
        extrapolated = cb - db * (ca - cb) / (da - db)
    if len(values) >= 3:
        d0, c0 = values[0]
        predicted = cb + (d0 - db) * (ca - cb) / (da - db)
        residual = abs(predicted - c0) / max(1.0, abs(extrapolated))
    final = reports[-1]
    final.value = float(extrapolated)
    final.floor_values = values
    final.extrapolation_residual = residual
    final.diagnosis = "floor-regularized and extrapolated to zero floor"
    return final


def _lengths(dom: DiscreteDomain, bars: np.ndarray) -> np.ndarray:
    coords = dom.node_coords
    return np.linalg.norm(coords[bars[:, 1]] - coords[bars[:, 0]], axis=1)


# === Public operations ===


def compliance_c(dom: DiscreteDomain, measure: DensityMeasure, law: ElasticLaw,
                 floor_ladder: Optional[Tuple[float, ...]] = None) -> ComplianceReport:
    """c(μ) for the quadratic law j"""
    ladder = floor_ladder or settings.FLOOR_LADDER

    def solve(w, bars, theta, plan):
        return _solve_c(dom, law, w, bars, theta, plan)

    report = _evaluate(dom, measure, dom.dim, solve, ladder)
    logger.info("compliance_c", value=report.value, gap=report.gap, delta=report.delta)
    return report


def compliance_E(dom: DiscreteDomain, measure: DensityMeasure, law: ElasticLaw, k: Optional[int] = None,
                 tol: float = settings.DEFAULT_TOL, max_iter: int = 20000,
                 floor_ladder: Optional[Tuple[float, ...]] = None) -> ComplianceReport:
    """E_k(μ) for the rank-constrained law j_k; k defaults to n − 1 (the relaxed law j̄)"""
    n = dom.dim
    k = n - 1 if k is None else law.check_k(k)
    ladder = floor_ladder or settings.FLOOR_LADDER
    kind = law_kind(dom, k)
    if dom.scalar or k == n:
        report = compliance_c(dom, measure, law, ladder)
        report.law_kind, report.k = kind, k
        return report
    if k == 0:
        if not np.any(dom.load[~dom.clamped]):
            return _zero_report(dom, 0, kind)
        return _infinite_report(dom, 0, kind, "j_0 ≡ 0 admits no stress: E_0 is infinite for nonzero load")
    if not np.any(measure.cell_weights > 0) and measure.has_truss:
        # rank-one stresses only: every E_k with k ≥ 1 equals c
        report = compliance_c(dom, measure, law, ladder)
        report.law_kind, report.k = kind, k
        return report

    def solve(w, bars, theta, plan):
        return _solve_E(dom, law, k, w, bars, theta, plan, tol, max_iter)

    report = _evaluate(dom, measure, k, solve, ladder)
    logger.info("compliance_E", k=k, value=report.value, gap=report.gap, iterations=report.iterations)
    return report


def compliance_c_eps(dom: DiscreteDomain, omega: np.ndarray, eps: float, law: ElasticLaw,
                     floor_ladder: Optional[Tuple[float, ...]] = None) -> float:
    """c_ε(ω) = c(1_ω/ε) for a cell set of volume ε"""
    mask = np.asarray(omega, dtype=bool) & dom.active_cells
    volume = dom.cell_volume * np.count_nonzero(mask)
    if abs(volume - eps) > dom.cell_volume * (1.0 + 1e-12):
        raise InputError(f"|ω| = {volume} differs from ε = {eps} by more than one cell volume")
    return compliance_c(dom, DensityMeasure.indicator(dom, mask, eps), law, floor_ladder).value


def compliance_of_set(dom: DiscreteDomain, omega: np.ndarray, law: ElasticLaw,
                      floor_ladder: Optional[Tuple[float, ...]] = None) -> float:
    """c(ω): compliance of the shape ω with unit density"""
    mask = np.asarray(omega, dtype=bool) & dom.active_cells
    return compliance_c(dom, DensityMeasure.on(dom, mask.astype(float)), law, floor_ladder).value
