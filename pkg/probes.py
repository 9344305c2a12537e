"""
Numeric experiments around the vanishing-mass limit.

- gamma_upper_sweep: fattened truss targets, c_ε(μ_ε) along an ε ladder against E(target)
- seppecher_field: periodic balls carrying a divergence-free stress equal to I₂ inside
- young_extract: atomic fits of the local Young measures of (μ_ε, σ_ε) snapshots
- conj2_check / conj3_verify: the Jensen-type inequality and its decomposition chain
- gap_probe: heuristic upper bounds on inf c_ε against inf c = I²/2

The gap probe only produces upper bounds for a combinatorial problem; treat its output as such.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import nnls

import settings
from compliance import compliance_c, compliance_E
from domain_grid import Box, DensityMeasure, DiscreteDomain, StressField, discrete_div, fatten
from errors import InconsistencyError, InputError, UnresolvedMicrostructureError
from integrands import ElasticLaw, eval_j_bar_star, j_k_star_batch
from log_utils import get_logger
from mk_solver import MKOptions, solve_mk_grid
from tensor_core import SymTensor, as_matrix, det_batch

logger = get_logger(__name__)

_CHAIN_TOL = 1e-9


def ordered_map(fn: Callable, items: Sequence, workers: Optional[int] = None) -> list:
    """Map over ladder points; results keep submission order whatever the worker count"""
    workers = max(1, workers or settings.WORKERS)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _check_ladder(eps_ladder: Sequence[float]) -> Tuple[float, ...]:
    ladder = tuple(float(e) for e in eps_ladder)
    if not ladder:
        raise InputError("ε ladder is empty")
    if any(e <= 0 for e in ladder):
        raise InputError(f"ε values must be positive, got {list(ladder)}")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise InputError(f"ε ladder must be strictly decreasing, got {list(ladder)}")
    return ladder


# === Young measures ===


@dataclass
class DiscreteYoungMeasure:
    """Finitely many atoms ξᵢ (n×n symmetric) with weights wᵢ > 0 summing to one"""
    weights: np.ndarray
    tensors: np.ndarray
    barycenter: np.ndarray = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        t = np.asarray(self.tensors, dtype=float)
        if t.ndim != 3 or t.shape[0] != w.size or t.shape[1] != t.shape[2] or t.shape[1] not in (2, 3):
            raise InputError(f"atoms must be an (m, n, n) stack matching {w.size} weights, got {t.shape}")
        if w.size == 0:
            raise InputError("a Young measure needs at least one atom")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise InputError("atom weights must be positive and finite")
        if not np.allclose(t, np.swapaxes(t, -1, -2), atol=1e-12):
            raise InputError("atoms must be symmetric tensors")
        self.weights = w / w.sum()
        self.tensors = 0.5 * (t + np.swapaxes(t, -1, -2))
        self.barycenter = np.einsum('a,aij->ij', self.weights, self.tensors)

    @classmethod
    def from_atoms(cls, atoms: Sequence[Tuple[float, Any]]) -> 'DiscreteYoungMeasure':
        if not atoms:
            raise InputError("a Young measure needs at least one atom")
        return cls(np.array([w for w, _ in atoms], dtype=float),
                   np.stack([as_matrix(xi) for _, xi in atoms]))

    @classmethod
    def dirac(cls, xi) -> 'DiscreteYoungMeasure':
        return cls(np.ones(1), as_matrix(xi)[None])

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DiscreteYoungMeasure':
        try:
            return cls.from_atoms([(a["weight"], a["tensor"]) for a in data["atoms"]])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed Young measure: {exc}") from exc

    @property
    def dim(self) -> int:
        return int(self.tensors.shape[1])

    @property
    def size(self) -> int:
        return int(self.weights.size)

    def mean(self) -> SymTensor:
        return SymTensor.from_matrix(self.barycenter)

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ np.asarray(values, dtype=float))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "atoms": [{"weight": float(w), "tensor": t.tolist()} for w, t in zip(self.weights, self.tensors)],
            "barycenter": self.barycenter.tolist(),
        }


# === Γ-limsup sweep ===


@dataclass
class GammaSweepReport:
    eps: Tuple[float, ...]
    c_eps: List[float]
    c_target: float
    E_target: float
    gaps: List[float]
    flags: List[str]

    def within_band(self, tol: float) -> bool:
        """c_ε(μ_ε) ≤ E(target)(1 + tol) at the smallest ε"""
        return bool(np.isfinite(self.c_eps[-1]) and self.c_eps[-1] <= self.E_target * (1.0 + tol))

    @property
    def limsup_estimate(self) -> float:
        return float(self.c_eps[-1])

    def rows(self) -> List[Dict[str, Any]]:
        return [{"eps": e, "c_eps": c, "c_target": self.c_target, "E_target": self.E_target,
                 "gap": g, "flag": f} for e, c, g, f in zip(self.eps, self.c_eps, self.gaps, self.flags)]


def gamma_upper_sweep(dom: DiscreteDomain, target: DensityMeasure, eps_ladder: Sequence[float],
                      law: ElasticLaw, workers: Optional[int] = None,
                      supersample: int = 8) -> GammaSweepReport:
    """Fatten a truss target at every ε and compare c_ε(μ_ε) with E(target)"""
    ladder = _check_ladder(eps_ladder)
    if not target.has_truss or target.bar_mass <= 0:
        raise InputError("the sweep target needs a truss part with positive mass")
    target = target.normalize()
    c_target = compliance_c(dom, target, law).value
    E_target = compliance_E(dom, target, law).value

    def one(eps: float) -> float:
        return compliance_c(dom, fatten(dom, target, eps, supersample), law).value

    values = ordered_map(one, ladder, workers)
    flags = ["" if np.isfinite(v) else "unsupported" for v in values]
    gaps = [v - E_target for v in values]
    logger.info("gamma_sweep_done", eps=list(ladder), c_eps=values, E_target=E_target)
    return GammaSweepReport(ladder, values, c_target, E_target, gaps, flags)


# === Seppecher periodic example ===

_INNER, _ANNULUS, _OUTSIDE = 0, 1, 2


@dataclass
class SeppecherField:
    """Balls of radius R = ε√(ε/π) on an ε-periodic lattice, with μ_ε = 1_A/ε and
    the Airy stress of A(r) = r²/2 (r ≤ R), A' = 2R − r (R ≤ r ≤ 2R), constant beyond."""
    eps: float
    radius: float
    dom: DiscreteDomain
    measure: DensityMeasure
    stress: StressField
    region: np.ndarray

    @property
    def patch_area(self) -> float:
        return self.dom.volume

    def inner_cells(self) -> np.ndarray:
        return self.region == _INNER

    def weighted_energy(self) -> float:
        """∫|σ_ε|² dμ_ε per unit area of the patch"""
        sq = np.einsum('cij,cij->c', self.stress.cells, self.stress.cells)
        return float(self.dom.cell_volume * (self.measure.cell_weights @ sq)) / self.patch_area

    def lebesgue_average(self, psi: Optional[np.ndarray] = None) -> np.ndarray:
        """∫ σ_ε ψ dx per unit area"""
        psi = np.ones(self.dom.n_cells) if psi is None else np.asarray(psi, dtype=float)
        return self.dom.cell_volume * np.einsum('c,cij->ij', psi, self.stress.cells) / self.patch_area

    def measure_average(self, psi: Optional[np.ndarray] = None) -> np.ndarray:
        """∫ σ_ε ψ dμ_ε per unit area"""
        psi = np.ones(self.dom.n_cells) if psi is None else np.asarray(psi, dtype=float)
        w = self.dom.cell_volume * self.measure.cell_weights * psi
        return np.einsum('c,cij->ij', w, self.stress.cells) / self.patch_area

    def divergence_residuals(self) -> Dict[str, float]:
        """Pointwise-scaled nodal divergence, split by the regions around each node"""
        div = np.abs(discrete_div(self.dom, self.stress)).max(axis=1) / self.dom.cell_volume
        corners = self.dom.cell_nodes
        around = np.broadcast_to(self.region[:, None], corners.shape)
        low = np.full(self.dom.n_nodes, _OUTSIDE + 1)
        high = np.full(self.dom.n_nodes, -1)
        np.minimum.at(low, corners.ravel(), around.ravel())
        np.maximum.at(high, corners.ravel(), around.ravel())
        pure = low == high
        constant = pure & (low != _ANNULUS)
        annulus = pure & (low == _ANNULUS)
        scale = float(np.abs(self.stress.cells).max()) / self.dom.h

        def peak(mask: np.ndarray) -> float:
            return float(div[mask].max()) if np.any(mask) else 0.0

        return {
            "constant_regions": peak(constant),
            "annulus": peak(annulus),
            "interfaces": peak(~pure),
            "bound": 1e-8 * scale,
        }

    def snapshot(self) -> 'FieldSnapshot':
        return FieldSnapshot(self.eps, self.dom, self.measure, self.stress.cells)

    def summary(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "radius": self.radius,
            "cells_per_period": int(round(self.eps / self.dom.h)),
            "weighted_energy": self.weighted_energy(),
            "lebesgue_average": self.lebesgue_average().tolist(),
            "measure_average": self.measure_average().tolist(),
            "divergence": self.divergence_residuals(),
        }


def _airy_stress(local: np.ndarray, radius: float) -> Tuple[np.ndarray, np.ndarray]:
    r = np.linalg.norm(local, axis=1)
    region = np.where(r <= radius, _INNER, np.where(r < 2.0 * radius, _ANNULUS, _OUTSIDE))
    sigma = np.zeros((local.shape[0], 2, 2))
    sigma[region == _INNER] = np.eye(2)
    ring = region == _ANNULUS
    rr = r[ring]
    rhat = local[ring] / rr[:, None]
    that = np.stack([-rhat[:, 1], rhat[:, 0]], axis=1)
    sigma[ring] = (-np.einsum('ci,cj->cij', that, that)
                   + ((2.0 * radius - rr) / rr)[:, None, None] * np.einsum('ci,cj->cij', rhat, rhat))
    return sigma, region


def seppecher_field(eps: float, resolution: int, periods: int = 2) -> SeppecherField:
    """Patch of periods × periods cells of the ε-periodic ball pattern; ``resolution`` cells per period"""
    if not 0 < eps <= np.pi / 16:
        raise InputError(f"ε must lie in (0, π/16] so the annuli fit in a period, got {eps}")
    if resolution < 2 or periods < 1:
        raise InputError("need at least two cells per period and one period")
    radius = eps * np.sqrt(eps / np.pi)
    h = eps / resolution
    across = 2.0 * radius / h
    if across < 8.0:
        raise UnresolvedMicrostructureError(
            f"ball diameter spans {across:.2f} cells at ε = {eps}; at least 8 are required",
            {"eps": eps, "resolution": resolution, "cells_across": across,
             "min_resolution": int(np.ceil(8.0 * eps / (2.0 * radius)))})
    n_cells = periods * resolution
    dom = DiscreteDomain(2, (n_cells, n_cells), h, origin=(-0.5 * eps, -0.5 * eps))
    centers = dom.cell_centers
    local = centers - eps * np.round(centers / eps)
    sigma, region = _airy_stress(local, radius)
    measure = DensityMeasure.indicator(dom, region == _INNER, eps)
    logger.info("seppecher_field", eps=eps, radius=radius, cells=dom.n_cells,
                inner_cells=int(np.count_nonzero(region == _INNER)))
    return SeppecherField(eps, radius, dom, measure, StressField(sigma), region)


# === Young extraction ===


@dataclass
class FieldSnapshot:
    eps: float
    dom: DiscreteDomain
    measure: DensityMeasure
    stress: np.ndarray


@dataclass
class YoungFit:
    eps: float
    probe: int
    measure: Optional[DiscreteYoungMeasure]
    residual: float
    condition: float
    samples: int
    note: str = ""

    def row(self) -> Dict[str, Any]:
        atoms = [] if self.measure is None else self.measure.to_dict()["atoms"]
        return {"eps": self.eps, "probe": self.probe, "atoms": len(atoms), "residual": self.residual,
                "condition": self.condition, "samples": self.samples, "note": self.note}


def _cluster(samples: np.ndarray, mass: np.ndarray, radius: float, max_atoms: int) -> np.ndarray:
    """Greedy deterministic clustering: heaviest samples seed atoms, the rest join the nearest"""
    order = np.lexsort((np.arange(mass.size), -mass))
    centers: List[np.ndarray] = []
    for i in order:
        if centers and min(np.linalg.norm(samples[i] - c) for c in centers) <= radius:
            continue
        centers.append(samples[i])
        if len(centers) == max_atoms:
            break
    centers_arr = np.array(centers)
    labels = np.argmin(np.linalg.norm(samples[:, None, :] - centers_arr[None], axis=-1), axis=1)
    atoms = np.array([np.average(samples[labels == a], axis=0, weights=mass[labels == a])
                      for a in range(len(centers)) if np.any(labels == a)])
    return atoms


def _fit_atoms(samples: np.ndarray, mass: np.ndarray, radius: float, max_atoms: int,
               max_condition: float) -> Tuple[Optional[np.ndarray], Optional[np.ndarray], float, float]:
    atoms = _cluster(samples, mass, radius, max_atoms)
    width = radius

    def psi(points: np.ndarray) -> np.ndarray:
        d2 = np.sum((points[:, None, :] - atoms[None]) ** 2, axis=-1)
        return np.exp(-0.5 * d2 / (width * width))

    moments = mass @ psi(samples)
    design = psi(atoms).T
    condition = float(np.linalg.cond(design))
    if not np.isfinite(condition) or condition > max_condition:
        return None, None, float("nan"), condition
    penalty = 10.0 * max(1.0, float(np.abs(design).max()))
    system = np.vstack([design, penalty * np.ones((1, atoms.shape[0]))])
    rhs = np.concatenate([moments, [penalty]])
    weights, _ = nnls(system, rhs)
    residual = float(np.linalg.norm(design @ weights - moments) / max(np.linalg.norm(moments), 1e-300))
    return atoms, weights, residual, condition


def young_extract(snapshots: Sequence[FieldSnapshot], probes: Optional[Sequence[Box]] = None,
                  cluster_radius: Optional[float] = None, max_atoms: int = 8,
                  max_condition: float = 1e12, min_ladder: int = 3) -> List[YoungFit]:
    """Atomic fits of the local Young measure in each probe region, for every snapshot.

    Probe boxes are given in coordinates relative to each snapshot's bounding box
    ([0, 1]ⁿ covers the whole grid), so ladders on differently sized patches compare.
    Moments are averages of Gaussian test functions Ψ(σ_ε) against μ_ε on the probe.
    """
    if len(snapshots) < min_ladder:
        raise InputError(f"Young extraction needs a ladder of at least {min_ladder} snapshots")
    dims = {(s.dom.dim, s.dom.scalar) for s in snapshots}
    if len(dims) != 1 or next(iter(dims))[1]:
        raise InputError("snapshots must share one tensor-valued domain dimension")
    dim = snapshots[0].dom.dim
    probes = list(probes) if probes else [((0.0,) * dim, (1.0,) * dim)]
    iu = np.triu_indices(dim)
    fits: List[YoungFit] = []
    for snap in snapshots:
        dom = snap.dom
        extent = dom.h * np.asarray(dom.cells)
        rel = (dom.cell_centers - dom.origin) / extent
        stress = np.asarray(snap.stress, dtype=float).reshape(dom.n_cells, dim, dim)
        flat = stress[:, iu[0], iu[1]] * np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
        for p, (lo, hi) in enumerate(probes):
            inside = np.all((rel >= np.asarray(lo)) & (rel <= np.asarray(hi)), axis=1)
            mass = np.where(inside, snap.measure.cell_weights, 0.0)
            keep = mass > 0
            if not np.any(keep):
                fits.append(YoungFit(snap.eps, p, None, float("nan"), float("nan"), 0, "no mass in probe"))
                continue
            samples, m = flat[keep], mass[keep] / mass[keep].sum()
            scale = max(1.0, float(np.abs(samples).max()))
            radius = cluster_radius if cluster_radius is not None else 0.1 * scale
            atoms, weights, residual, condition = _fit_atoms(samples, m, radius, max_atoms, max_condition)
            if atoms is None:
                logger.warning("young_fit_ill_conditioned", eps=snap.eps, probe=p, condition=condition)
                fits.append(YoungFit(snap.eps, p, None, residual, condition, int(keep.sum()), "ill-conditioned"))
                continue
            live = weights > 1e-12 * weights.max()
            tensors = np.zeros((int(live.sum()), dim, dim))
            scaled = atoms[live] / np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
            tensors[:, iu[0], iu[1]] = scaled
            tensors[:, iu[1], iu[0]] = scaled
            fits.append(YoungFit(snap.eps, p, DiscreteYoungMeasure(weights[live], tensors),
                                 residual, condition, int(keep.sum())))
    return fits


def weight_near(measure: DiscreteYoungMeasure, xi, radius: float = 1e-6) -> float:
    """Total atom weight within ``radius`` (Frobenius) of ξ"""
    d = np.linalg.norm(measure.tensors - as_matrix(xi), axis=(1, 2))
    return float(measure.weights[d <= radius].sum())


# === Jensen-type inequalities ===


@dataclass
class Conj2Result:
    lhs: float
    rhs: float
    satisfied: bool

    def to_dict(self) -> Dict[str, Any]:
        return {"lhs": self.lhs, "rhs": self.rhs, "satisfied": self.satisfied}


def conj2_check(nu: DiscreteYoungMeasure, law: ElasticLaw) -> Conj2Result:
    """∫ j* dν  against  (j̄)*([ν])"""
    if nu.dim != law.dim:
        raise InputError(f"Young measure is {nu.dim}-dimensional, law is {law.dim}-dimensional")
    lhs = nu.integrate(j_k_star_batch(law, law.dim, nu.tensors))
    rhs = eval_j_bar_star(law, nu.barycenter)
    return Conj2Result(lhs, rhs, bool(lhs >= rhs - _CHAIN_TOL))


@dataclass
class Conj3Report:
    composed: DiscreteYoungMeasure
    int_j_star_nu: float
    int_j_star_nu0: float
    int_j_bar_star_nu0: float
    j_bar_star_mean: float
    conj2: Conj2Result

    @property
    def chain(self) -> Tuple[float, float, float, float]:
        return (self.int_j_star_nu, self.int_j_star_nu0, self.int_j_bar_star_nu0, self.j_bar_star_mean)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "int_j_star_nu": self.int_j_star_nu,
            "int_j_star_nu0": self.int_j_star_nu0,
            "int_j_bar_star_nu0": self.int_j_bar_star_nu0,
            "j_bar_star_mean": self.j_bar_star_mean,
            "conj2": self.conj2.to_dict(),
            "composed": self.composed.to_dict(),
        }


def conj3_verify(nu0: DiscreteYoungMeasure, kernels: Sequence[DiscreteYoungMeasure], law: ElasticLaw,
                 det_tol: float = 1e-9, barycenter_tol: float = 1e-10) -> Conj3Report:
    """Compose ν = ∫ λ_ξ ν₀(dξ) and check  ∫j*dν ≥ ∫j*dν₀ ≥ ∫(j̄)*dν₀ ≥ (j̄)*([ν])"""
    if nu0.dim != law.dim:
        raise InputError(f"ν₀ is {nu0.dim}-dimensional, law is {law.dim}-dimensional")
    if len(kernels) != nu0.size:
        raise InputError(f"need one kernel per atom of ν₀: {nu0.size} atoms, {len(kernels)} kernels")
    norms = np.linalg.norm(nu0.tensors, axis=(1, 2))
    dets = np.abs(det_batch(nu0.tensors))
    for i, (xi, d, nrm) in enumerate(zip(nu0.tensors, dets, norms)):
        if d > det_tol * max(1.0, nrm) ** law.dim:
            raise InputError(f"atom {i} of ν₀ is not degenerate: det = {d:.3e}",
                             {"atom": i, "tensor": xi.tolist(), "det": float(d)})
        kernel = kernels[i]
        if kernel.dim != law.dim:
            raise InputError(f"kernel {i} has the wrong dimension")
        drift = float(np.max(np.abs(kernel.barycenter - xi)))
        if drift > barycenter_tol * max(1.0, nrm):
            raise InputError(f"kernel {i} has barycenter off its atom by {drift:.3e}",
                             {"atom": i, "drift": drift})

    weights = np.concatenate([w0 * k.weights for w0, k in zip(nu0.weights, kernels)])
    tensors = np.concatenate([k.tensors for k in kernels])
    composed = DiscreteYoungMeasure(weights, tensors)

    n = law.dim
    q1 = composed.integrate(j_k_star_batch(law, n, composed.tensors))
    q2 = nu0.integrate(j_k_star_batch(law, n, nu0.tensors))
    q3 = nu0.integrate(j_k_star_batch(law, n - 1, nu0.tensors))
    q4 = eval_j_bar_star(law, composed.barycenter)
    chain = (q1, q2, q3, q4)
    for a, b, link in zip(chain, chain[1:], ("kernel Jensen", "degenerate equality", "barycentre Jensen")):
        if a < b - _CHAIN_TOL * max(1.0, abs(b)):
            raise InconsistencyError(f"{link} link of the conj3 chain fails: {a:.12g} < {b:.12g}",
                                     {"chain": list(chain), "link": link})
    conj2 = conj2_check(composed, law)
    if not conj2.satisfied:
        raise InconsistencyError("composed measure violates the conj2 inequality",
                                 {"lhs": conj2.lhs, "rhs": conj2.rhs})
    return Conj3Report(composed, q1, q2, q3, q4, conj2)


def random_conj3_instance(law: ElasticLaw, rng: np.random.Generator, atoms: int = 3,
                          kernel_atoms: int = 2) -> Tuple[DiscreteYoungMeasure, List[DiscreteYoungMeasure]]:
    """Degenerate atoms with symmetric kernels around them (pairs ξ ± η, plus ξ itself if odd)"""
    n = law.dim
    tensors = []
    for _ in range(atoms):
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        vals = rng.standard_normal(n)
        vals[rng.integers(n)] = 0.0
        tensors.append((q * vals) @ q.T)
    nu0 = DiscreteYoungMeasure(rng.uniform(0.1, 1.0, atoms), np.stack(tensors))
    kernels = []
    for xi in nu0.tensors:
        parts, w = [], []
        for _ in range(kernel_atoms // 2):
            eta = rng.standard_normal((n, n))
            eta = 0.5 * (eta + eta.T)
            weight = rng.uniform(0.1, 1.0)
            parts += [xi + eta, xi - eta]
            w += [weight, weight]
        if kernel_atoms % 2 or not parts:
            parts.append(xi)
            w.append(rng.uniform(0.1, 1.0))
        kernels.append(DiscreteYoungMeasure(np.array(w), np.stack(parts)))
    return nu0, kernels


# === Gap probe ===


@dataclass
class GapReport:
    eps: Tuple[float, ...]
    eps_effective: List[float]
    c_eps_upper: List[float]
    c_inf: float
    I_value: float
    exchanges: List[int]
    label: str = "heuristic upper bound on inf c_eps; c_inf = I^2/2 with the unrelaxed gauge"

    @property
    def gaps(self) -> List[float]:
        return [c - self.c_inf for c in self.c_eps_upper]

    def rows(self) -> List[Dict[str, Any]]:
        return [{"eps": e, "eps_effective": ee, "c_eps_upper": c, "c_inf": self.c_inf, "gap": g, "exchanges": x}
                for e, ee, c, g, x in zip(self.eps, self.eps_effective, self.c_eps_upper, self.gaps,
                                          self.exchanges)]


def _cell_neighbors(dom: DiscreteDomain) -> List[np.ndarray]:
    idx = np.arange(dom.n_cells).reshape(dom.cells)
    out: List[List[int]] = [[] for _ in range(dom.n_cells)]
    for axis in range(dom.dim):
        lo = np.take(idx, np.arange(dom.cells[axis] - 1), axis=axis).ravel()
        hi = np.take(idx, np.arange(1, dom.cells[axis]), axis=axis).ravel()
        for a, b in zip(lo, hi):
            out[a].append(b)
            out[b].append(a)
    return [np.array(sorted(v), dtype=int) for v in out]


def _greedy_set(dom: DiscreteDomain, law: ElasticLaw, score: np.ndarray, eps: float, rounds: int,
                neighbors: List[np.ndarray]) -> Tuple[float, float, int]:
    active = np.flatnonzero(dom.active_cells)
    m = int(np.clip(round(eps / dom.cell_volume), 1, active.size))
    order = active[np.lexsort((active, -score[active]))]
    chosen = np.zeros(dom.n_cells, dtype=bool)
    chosen[order[:m]] = True
    vol = m * dom.cell_volume

    def cost(mask: np.ndarray) -> float:
        return compliance_c(dom, DensityMeasure.indicator(dom, mask, vol), law).value

    best = cost(chosen)
    accepted = 0
    for _ in range(rounds):
        if m == active.size:
            break
        inside = np.flatnonzero(chosen)
        drop = inside[np.lexsort((inside, score[inside]))][0]
        frontier = sorted({int(c) for i in inside for c in neighbors[i]
                           if not chosen[c] and dom.active_cells[c]})
        if not frontier:
            break
        add = max(frontier, key=lambda c: (score[c], -c))
        trial = chosen.copy()
        trial[drop], trial[add] = False, True
        value = cost(trial)
        if value < best:
            chosen, best = trial, value
            accepted += 1
        else:
            break
    return vol, best, accepted


def gap_probe(dom: DiscreteDomain, eps_ladder: Sequence[float], law: ElasticLaw,
              opts: Optional[MKOptions] = None, exchange_rounds: int = 4,
              workers: Optional[int] = None) -> GapReport:
    """Greedy top-mass cell sets with local exchange against I²/2 for the law's own gauge"""
    ladder = _check_ladder(eps_ladder)
    opts = (opts or MKOptions()).model_copy(update={"gauge": "original"})
    sol = solve_mk_grid(dom, law, opts)
    c_inf = 0.5 * sol.I_value ** 2
    score = sol.mu_opt.cell_weights
    neighbors = _cell_neighbors(dom)

    results = ordered_map(lambda eps: _greedy_set(dom, law, score, eps, exchange_rounds, neighbors),
                           ladder, workers)
    eff = [r[0] for r in results]
    upper = [r[1] for r in results]
    exchanges = [r[2] for r in results]
    logger.info("gap_probe_done", eps=list(ladder), c_eps_upper=upper, c_inf=c_inf)
    return GapReport(ladder, eff, upper, c_inf, sol.I_value, exchanges)
