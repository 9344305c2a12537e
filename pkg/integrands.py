"""
Convex integrands of the isotropic quadratic law and its rank-constrained relaxations.

All functions work on eigenvalues first and lift to tensors through the spectral frame:
j, j*, j_k and their conjugates are orthogonally invariant, so a tensor-level value or
gradient is the eigenvalue-level one placed on the eigendirections of the argument.

With κ_k = α/((n−k)α + 2β):

    j_k(z) = β · max_{|S|=k} ( Σ_{i∈S} λᵢ² + κ_k (Σ_{i∈S} λᵢ)² )

the maximizing stress being τ_S = 2β(λ_S + κ_k Σ_S λ) on the eigendirections in S.
j_n = j, j_{n−1} = j̄ and the gauges are ρ = √(2 j̄), ρ⁰ = √(2 j̄*).
"""

import itertools
import threading
from functools import lru_cache
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize
from scipy.special import logsumexp

import settings
from errors import InputError
from log_utils import get_logger
from tensor_core import SymTensor, as_matrix, eigh_batch, frob_inner, reconstruct, trace_batch

logger = get_logger(__name__)

GaugeKind = Literal["relaxed", "original"]


# === Law ===


class ElasticLaw(BaseModel):
    """Isotropic quadratic law j(z) = ½ α (tr z)² + β |z|² in dimension n"""
    model_config = ConfigDict(frozen=True)

    dim: Literal[2, 3]
    alpha: float
    beta: float = Field(gt=0)
    gamma: float = 0.0

    @model_validator(mode='before')
    @classmethod
    def _derive_gamma(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        n, alpha, beta = data.get('dim'), data.get('alpha'), data.get('beta')
        if n is None or alpha is None or beta is None:
            return data
        n, alpha, beta = int(n), float(alpha), float(beta)
        if beta <= 0 or n * alpha + 2.0 * beta <= 0:
            raise ValueError(f"law is not elliptic: need beta > 0 and n*alpha + 2*beta > 0 "
                             f"(n={n}, alpha={alpha}, beta={beta})")
        gamma = (alpha + 2.0 * beta) / (4.0 * beta * (alpha + beta))
        given = data.get('gamma')
        if given not in (None, 0.0) and abs(float(given) - gamma) > 1e-12 * gamma:
            raise ValueError(f"gamma={given} does not match (alpha+2beta)/(4beta(alpha+beta)) = {gamma}")
        data['gamma'] = gamma
        return data

    @property
    def n(self) -> int:
        return self.dim

    def kappa(self, k: int) -> float:
        return self.alpha / ((self.dim - k) * self.alpha + 2.0 * self.beta)

    @property
    def trace_coef(self) -> float:
        """c in j*(ξ) = (1/4β)(|ξ|² − c (tr ξ)²)"""
        return self.alpha / (self.dim * self.alpha + 2.0 * self.beta)

    @property
    def rank_one_coef(self) -> float:
        """a₁ with j*(τ e⊗e) = a₁ τ²; equals γ/2 in 2D"""
        return (1.0 - self.trace_coef) / (4.0 * self.beta)

    def check_k(self, k: int) -> int:
        if not isinstance(k, (int, np.integer)) or not 0 <= k <= self.dim:
            raise InputError(f"rank bound k must be an integer in [0, {self.dim}], got {k!r}")
        return int(k)


def law_from_gamma(dim: int, gamma: float) -> ElasticLaw:
    """Shear-only law (α = 0) with the requested γ = 1/(2β)"""
    if gamma <= 0:
        raise InputError(f"gamma must be positive, got {gamma}")
    return ElasticLaw(dim=dim, alpha=0.0, beta=1.0 / (2.0 * gamma))


# === Eigenvalue-level kernels ===


@lru_cache(maxsize=None)
def subset_masks(n: int, k: int) -> np.ndarray:
    """(C(n,k), n) indicator rows of the k-subsets of eigen-indices"""
    rows = [[1.0 if i in s else 0.0 for i in range(n)] for s in itertools.combinations(range(n), k)]
    return np.array(rows, dtype=float).reshape(-1, n)


def subset_energies(law: ElasticLaw, k: int, lam: np.ndarray) -> np.ndarray:
    masks = subset_masks(law.dim, k)
    kap = law.kappa(k)
    sq = (lam * lam) @ masks.T
    s = lam @ masks.T
    return law.beta * (sq + kap * s * s)


def _subset_stresses(law: ElasticLaw, k: int, lam: np.ndarray) -> np.ndarray:
    masks = subset_masks(law.dim, k)
    s = lam @ masks.T
    return 2.0 * law.beta * (lam[..., None, :] + law.kappa(k) * s[..., :, None]) * masks


def _selection_weights(energies: np.ndarray, temperature: float) -> np.ndarray:
    if temperature > 0:
        shifted = (energies - energies.max(axis=-1, keepdims=True)) / temperature
        p = np.exp(shifted)
    else:
        top = energies.max(axis=-1, keepdims=True)
        tol = 1e-12 * np.abs(top) + 1e-300
        p = (energies >= top - tol).astype(float)
    return p / p.sum(axis=-1, keepdims=True)


def j_values(law: ElasticLaw, lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    tr = lam.sum(axis=-1)
    return 0.5 * law.alpha * tr * tr + law.beta * np.sum(lam * lam, axis=-1)


def j_star_values(law: ElasticLaw, tau: np.ndarray) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    tr = tau.sum(axis=-1)
    return (np.sum(tau * tau, axis=-1) - law.trace_coef * tr * tr) / (4.0 * law.beta)


def j_k_values(law: ElasticLaw, k: int, lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if k == 0:
        return np.zeros(lam.shape[:-1])
    if k == law.dim:
        return j_values(law, lam)
    return subset_energies(law, k, lam).max(axis=-1)


def j_k_stress(law: ElasticLaw, k: int, lam: np.ndarray, temperature: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Value and eigenvalue-space gradient of j_k, or of its log-sum-exp smoothing at temperature > 0.

    At ties between subsets (temperature 0) the gradient is the average of the tied
    selections.
    """
    lam = np.asarray(lam, dtype=float)
    if k == 0:
        return np.zeros(lam.shape[:-1]), np.zeros_like(lam)
    if k == law.dim:
        tr = lam.sum(axis=-1, keepdims=True)
        return j_values(law, lam), 2.0 * law.beta * lam + law.alpha * tr
    energies = subset_energies(law, k, lam)
    p = _selection_weights(energies, temperature)
    grad = np.einsum('...s,...si->...i', p, _subset_stresses(law, k, lam))
    if temperature > 0:
        value = temperature * logsumexp(energies / temperature, axis=-1)
    else:
        value = energies.max(axis=-1)
    return value, grad


def _two_support_norm(tau: np.ndarray) -> np.ndarray:
    t = -np.sort(-np.abs(tau), axis=-1)
    head, tail = t[..., 0], t[..., 1] + t[..., 2]
    return np.where(head > tail, np.sqrt(head * head + tail * tail), np.abs(t.sum(axis=-1)) / np.sqrt(2.0))


@lru_cache(maxsize=None)
def _subset_hessians(dim: int, alpha: float, beta: float, k: int) -> np.ndarray:
    law = ElasticLaw(dim=dim, alpha=alpha, beta=beta)
    masks = subset_masks(dim, k)
    kap = law.kappa(k)
    return np.stack([2.0 * beta * (np.diag(m) + kap * np.outer(m, m)) for m in masks])


def _matrix_fractional_conjugate(law: ElasticLaw, k: int, tau: np.ndarray) -> float:
    """min over w in the simplex of ½ τᵀ (Σ_S w_S H_S)⁻¹ τ for one eigenvalue vector"""
    scale = float(np.linalg.norm(tau))
    if scale == 0.0:
        return 0.0
    t = tau / scale
    hs = _subset_hessians(law.dim, law.alpha, law.beta, k)
    m = hs.shape[0]
    ridge = 1e-12 * 2.0 * law.beta * np.eye(law.dim)

    def objective(w):
        mat = np.einsum('s,sij->ij', w, hs) + ridge
        v = np.linalg.solve(mat, t)
        return 0.5 * float(t @ v), -0.5 * np.einsum('i,sij,j->s', v, hs, v)

    starts = [np.full(m, 1.0 / m)]
    for i in range(m):
        w0 = np.full(m, 0.2 / max(m - 1, 1))
        w0[i] = 0.8
        starts.append(w0)
    best = np.inf
    for w0 in starts:
        res = minimize(objective, w0, jac=True, method='SLSQP',
                       bounds=[(0.0, 1.0)] * m,
                       constraints=[{'type': 'eq', 'fun': lambda w: np.sum(w) - 1.0,
                                     'jac': lambda w: np.ones_like(w)}],
                       options={'ftol': 1e-15, 'maxiter': 500})
        best = min(best, float(res.fun))
    return best * scale * scale


def j_k_star_values(law: ElasticLaw, k: int, tau: np.ndarray, rank_tol: float = settings.RANK_TOL) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    n = law.dim
    if k == n:
        return j_star_values(law, tau)
    absval = np.abs(tau)
    top = absval.max(axis=-1)
    rank = np.sum(absval > rank_tol * np.maximum(1.0, top)[..., None], axis=-1)
    if k == 0:
        return np.where(rank == 0, 0.0, np.inf)
    if k == 1:
        total = absval.sum(axis=-1)
        return law.rank_one_coef * total * total
    # n = 3, k = 2
    low_rank = rank <= k
    out = np.where(low_rank, j_star_values(law, tau), 0.0)
    if law.alpha == 0.0:
        norm = _two_support_norm(tau)
        return np.where(low_rank, out, norm * norm / (4.0 * law.beta))
    flat_tau = tau.reshape(-1, n)
    flat_out = out.reshape(-1)
    for idx in np.flatnonzero(~low_rank.reshape(-1)):
        flat_out[idx] = _matrix_fractional_conjugate(law, k, flat_tau[idx])
    return flat_out.reshape(out.shape)


# === Tensor-level operations ===


def _eig(z) -> Tuple[np.ndarray, np.ndarray]:
    return eigh_batch(as_matrix(z))


def eval_j(law: ElasticLaw, z) -> float:
    m = as_matrix(z)
    tr = float(np.trace(m))
    return 0.5 * law.alpha * tr * tr + law.beta * float(frob_inner(m, m))


def eval_j_star(law: ElasticLaw, xi) -> float:
    m = as_matrix(xi)
    tr = float(np.trace(m))
    return (float(frob_inner(m, m)) - law.trace_coef * tr * tr) / (4.0 * law.beta)


def eval_j_k(law: ElasticLaw, k: int, z) -> float:
    k = law.check_k(k)
    if k == law.dim:
        return eval_j(law, z)
    return float(j_k_values(law, k, _eig(z)[0]))


def eval_j_bar(law: ElasticLaw, z) -> float:
    return eval_j_k(law, law.dim - 1, z)


def eval_j_k_star(law: ElasticLaw, k: int, xi) -> float:
    k = law.check_k(k)
    if k == law.dim:
        return eval_j_star(law, xi)
    return float(j_k_star_values(law, k, _eig(xi)[0]))


def eval_j_bar_star(law: ElasticLaw, xi) -> float:
    return eval_j_k_star(law, law.dim - 1, xi)


def grad_j_k(law: ElasticLaw, k: int, z) -> SymTensor:
    """(Sub)gradient of j_k; averaged selection at subset ties"""
    k = law.check_k(k)
    vals, frames = _eig(z)
    _, g = j_k_stress(law, k, vals)
    return SymTensor.from_matrix(reconstruct(g, frames))


def grad_j_bar(law: ElasticLaw, z) -> SymTensor:
    return grad_j_k(law, law.dim - 1, z)


def j_k_batch(law: ElasticLaw, k: int, z: np.ndarray, temperature: float = 0.0,
              with_grad: bool = True) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Values and gradients of j_k (or its smoothing) on a stack of tensors (..., n, n)"""
    z = np.asarray(z, dtype=float)
    if k == law.dim:
        tr = trace_batch(z)
        value = 0.5 * law.alpha * tr * tr + law.beta * frob_inner(z, z)
        grad = 2.0 * law.beta * z + law.alpha * tr[..., None, None] * np.eye(law.dim) if with_grad else None
        return value, grad
    if k == 0:
        return np.zeros(z.shape[:-2]), (np.zeros_like(z) if with_grad else None)
    vals, frames = eigh_batch(z)
    value, g = j_k_stress(law, k, vals, temperature)
    return value, (reconstruct(g, frames) if with_grad else None)


def j_k_star_batch(law: ElasticLaw, k: int, xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if k == law.dim:
        tr = trace_batch(xi)
        return (frob_inner(xi, xi) - law.trace_coef * tr * tr) / (4.0 * law.beta)
    return j_k_star_values(law, k, eigh_batch(xi)[0])


def stress_from_strain(law: ElasticLaw, e: np.ndarray) -> np.ndarray:
    """σ = ∇j(e) = α tr(e) I + 2β e on a stack of strains"""
    return 2.0 * law.beta * e + law.alpha * trace_batch(e)[..., None, None] * np.eye(law.dim)


def strain_from_stress(law: ElasticLaw, s: np.ndarray) -> np.ndarray:
    """e = ∇j*(σ), the inverse of stress_from_strain"""
    return (s - law.trace_coef * trace_batch(s)[..., None, None] * np.eye(law.dim)) / (2.0 * law.beta)


# === Gauges ===


def _project_ellipsoid(y: np.ndarray, h: np.ndarray, iters: int = 100) -> np.ndarray:
    """Project rows of y onto {Σ h_j y_j² ≤ 1} (axes already diagonal, h > 0)"""
    q = np.sum(h * y * y, axis=-1)
    outside = q > 1.0
    if not np.any(outside):
        return y
    yo = y[outside]
    mu = np.zeros(yo.shape[0])
    for _ in range(iters):
        d = 1.0 + mu[:, None] * h
        g = np.sum(h * yo * yo / (d * d), axis=-1) - 1.0
        dg = -2.0 * np.sum(h * h * yo * yo / (d * d * d), axis=-1)
        step = g / dg
        mu = mu - step
        if np.all(np.abs(step) <= 1e-15 * np.maximum(mu, 1e-300)):
            break
    out = y.copy()
    out[outside] = yo / (1.0 + mu[:, None] * h)
    return out


def _quadratic_axes(law: ElasticLaw, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal axes (rows) and curvatures of ½ λᵀ H λ on a k-subset"""
    kap = law.kappa(k)
    ones = np.ones(k) / np.sqrt(k)
    basis = [ones]
    for j in range(1, k):
        v = np.zeros(k)
        v[:j] = 1.0
        v[j] = -float(j)
        basis.append(v / np.linalg.norm(v))
    curv = np.array([2.0 * law.beta * (1.0 + k * kap)] + [2.0 * law.beta] * (k - 1))
    return np.array(basis), curv


def _project_cylinder(law: ElasticLaw, k: int, subset: Tuple[int, ...], y: np.ndarray) -> np.ndarray:
    axes, curv = _quadratic_axes(law, k)
    idx = list(subset)
    coords = y[:, idx] @ axes.T
    proj = _project_ellipsoid(coords, curv)
    out = y.copy()
    out[:, idx] = proj @ axes
    return out


def project_level_set(law: ElasticLaw, k: int, lam: np.ndarray, iters: int = 500,
                      tol: float = 1e-13) -> np.ndarray:
    """Euclidean projection of eigenvalue rows onto {λ : j_k(λ) ≤ ½}"""
    lam = np.asarray(lam, dtype=float)
    shape = lam.shape
    y = lam.reshape(-1, law.dim)
    n = law.dim
    if k == 1:
        bound = np.sqrt(2.0 * law.rank_one_coef)
        return np.clip(y, -bound, bound).reshape(shape)
    if k == n:
        axes, curv = _quadratic_axes(law, n)
        return (_project_ellipsoid(y @ axes.T, curv) @ axes).reshape(shape)
    subsets = list(itertools.combinations(range(n), k))
    inside = j_k_values(law, k, y) <= 0.5 * (1.0 + 1e-14)
    out = y.copy()
    if np.all(inside):
        return out.reshape(shape)
    # Dykstra over the subset cylinders
    x = y[~inside]
    cur = x.copy()
    incs = [np.zeros_like(x) for _ in subsets]
    for _ in range(iters):
        prev = cur
        for s, subset in enumerate(subsets):
            z = cur + incs[s]
            cur = _project_cylinder(law, k, subset, z)
            incs[s] = z - cur
        if np.max(np.abs(cur - prev)) <= tol * max(1.0, float(np.max(np.abs(cur)))):
            break
    out[~inside] = cur
    return out.reshape(shape)


def _gauge_mode(law: ElasticLaw, gauge: GaugeKind) -> str:
    if gauge == "original":
        return "quadratic"
    if law.dim == 2:
        return "closed-form-2D"
    if law.alpha == 0.0:
        return "closed-form-3D-shear"
    return "numeric"


class GaugeTable:
    """ρ and ρ⁰ of one law, with a lazily tabulated ρ⁰ for 3D laws without closed form.

    ``gauge="relaxed"`` uses j̄ (the mass cost of the relaxed problem),
    ``gauge="original"`` uses j itself (ρ⁰ = √(2 j*)).
    """

    def __init__(self, law: ElasticLaw, gauge: GaugeKind = "relaxed",
                 resolution_deg: float = settings.GAUGE_RESOLUTION_DEG):
        if gauge not in ("relaxed", "original"):
            raise InputError(f"unknown gauge {gauge!r}")
        if resolution_deg <= 0 or resolution_deg > 45:
            raise InputError(f"gauge resolution must lie in (0, 45] degrees, got {resolution_deg}")
        self.law = law
        self.gauge = gauge
        self.k = law.dim if gauge == "original" else law.dim - 1
        self.mode = _gauge_mode(law, gauge)
        self.resolution = np.deg2rad(resolution_deg)
        self._n_theta = int(round(np.pi / self.resolution))
        self._n_phi = int(round(2.0 * np.pi / self.resolution))
        self._samples: Dict[Tuple[int, int], float] = {}
        self._lock = threading.Lock()

    @property
    def samples(self) -> Dict[Tuple[int, int], float]:
        with self._lock:
            return dict(self._samples)

    # --- eigenvalue level ---

    def rho_eig(self, lam: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(2.0 * j_k_values(self.law, self.k, lam), 0.0))

    def rho0_exact_eig(self, tau: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(2.0 * j_k_star_values(self.law, self.k, tau), 0.0))

    def _node_direction(self, i: int, j: int) -> np.ndarray:
        theta = min(i * self.resolution, np.pi)
        phi = j * self.resolution
        return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])

    def _fill(self, nodes: List[Tuple[int, int]]) -> None:
        with self._lock:
            missing = [node for node in nodes if node not in self._samples]
        if not missing:
            return
        dirs = np.array([self._node_direction(i, j) for i, j in missing])
        values = self.rho0_exact_eig(dirs)
        with self._lock:
            for node, value in zip(missing, values):
                self._samples[node] = float(value)
        logger.debug("gauge_table_filled", added=len(missing), total=len(self._samples))

    def _tabulated(self, tau: np.ndarray) -> np.ndarray:
        flat = tau.reshape(-1, 3)
        radius = np.linalg.norm(flat, axis=-1)
        out = np.zeros(flat.shape[0])
        nz = radius > 0
        d = flat[nz] / radius[nz, None]
        theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0)) / self.resolution
        phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2.0 * np.pi) / self.resolution
        i0 = np.minimum(np.floor(theta).astype(int), self._n_theta - 1)
        j0 = np.floor(phi).astype(int) % self._n_phi
        ft, fp = theta - i0, phi - np.floor(phi)
        i1, j1 = i0 + 1, (j0 + 1) % self._n_phi
        nodes = sorted({(int(a), int(b)) for ii, jj in ((i0, j0), (i0, j1), (i1, j0), (i1, j1))
                        for a, b in zip(ii, jj)})
        self._fill(nodes)
        with self._lock:
            table = self._samples
            v00 = np.array([table[(int(a), int(b))] for a, b in zip(i0, j0)])
            v01 = np.array([table[(int(a), int(b))] for a, b in zip(i0, j1)])
            v10 = np.array([table[(int(a), int(b))] for a, b in zip(i1, j0)])
            v11 = np.array([table[(int(a), int(b))] for a, b in zip(i1, j1)])
        interp = ((1 - ft) * (1 - fp) * v00 + (1 - ft) * fp * v01
                  + ft * (1 - fp) * v10 + ft * fp * v11)
        out[nz] = radius[nz] * interp
        return out.reshape(tau.shape[:-1])

    def rho0_eig(self, tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if self.mode == "numeric":
            return self._tabulated(tau)
        return self.rho0_exact_eig(tau)

    def project_polar_ball(self, lam: np.ndarray) -> np.ndarray:
        """Projection onto {ρ ≤ 1} in eigenvalue space"""
        return project_level_set(self.law, self.k, lam)

    # --- tensor level, on stacks (..., n, n) ---

    def rho(self, z: np.ndarray) -> np.ndarray:
        return self.rho_eig(eigh_batch(np.asarray(z, dtype=float))[0])

    def rho0(self, xi: np.ndarray) -> np.ndarray:
        return self.rho0_eig(eigh_batch(np.asarray(xi, dtype=float))[0])

    def prox_rho0(self, xi: np.ndarray, step) -> np.ndarray:
        """prox of step·ρ⁰ through the Moreau identity ξ − s P(ξ/s); step may vary per tensor"""
        step = np.asarray(step, dtype=float)
        if np.any(step <= 0):
            raise InputError("prox step must be positive")
        vals, frames = eigh_batch(np.asarray(xi, dtype=float))
        s = step[..., None] if step.ndim else step
        shrunk = vals - s * self.project_polar_ball(vals / s)
        return reconstruct(shrunk, frames)


# === Scalar API on single tensors ===


def rho(law: ElasticLaw, z, gauge: GaugeKind = "relaxed") -> float:
    return float(GaugeTable(law, gauge).rho(as_matrix(z)))


def rho0(law: ElasticLaw, xi, gauge: GaugeKind = "relaxed") -> float:
    table = GaugeTable(law, gauge)
    return float(table.rho0_exact_eig(_eig(xi)[0]))


def prox_rho0(law: ElasticLaw, xi, step: float, gauge: GaugeKind = "relaxed") -> SymTensor:
    if step <= 0:
        raise InputError(f"prox step must be positive, got {step}")
    return SymTensor.from_matrix(GaugeTable(law, gauge).prox_rho0(as_matrix(xi), step))


# === Brute-force oracles ===


def rank_one_sup(law: ElasticLaw, z, directions: int = 4096) -> float:
    """sup over rank-one ξ = τ e⊗e of z·ξ − j*(ξ), e on an angular grid (2D)"""
    m = as_matrix(z)
    if m.shape[0] != 2:
        raise InputError("rank_one_sup samples planar directions only")
    angles = np.linspace(0.0, np.pi, directions, endpoint=False)
    e = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    normal = np.einsum('ai,ij,aj->a', e, m, e)
    return float(np.max(normal * normal) / (4.0 * law.rank_one_coef))


def rank_k_frame_sup(law: ElasticLaw, k: int, z, samples: int = 20000, seed: int = 0) -> float:
    """sup over rank-≤k ξ by sampling orthonormal frames; the eigenvalue part is solved exactly"""
    k = law.check_k(k)
    m = as_matrix(z)
    n = law.dim
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((samples, n, n)))
    frames = np.concatenate([q, eigh_batch(m)[1][None]], axis=0)
    diag = np.einsum('aik,ij,ajk->ak', frames, m, frames)
    if k == 0:
        return 0.0
    return float(np.max(subset_energies(law, k, diag).max(axis=-1) if k < n else j_values(law, diag)))


def numeric_conjugate(law: ElasticLaw, xi, seed: int = 0) -> float:
    """sup_z z·ξ − j(z) by coarse random search refined with BFGS"""
    m = as_matrix(xi)
    n = law.dim
    iu = np.triu_indices(n)

    def unpack(v):
        a = np.zeros((n, n))
        a[iu] = v
        return a + np.triu(a, 1).T

    def negative(v):
        zz = unpack(v)
        return -(float(frob_inner(zz, m)) - eval_j(law, zz))

    rng = np.random.default_rng(seed)
    scale = max(1.0, float(np.linalg.norm(m))) / law.beta
    coarse = rng.uniform(-scale, scale, size=(256, iu[0].size))
    start = coarse[np.argmin([negative(v) for v in coarse])]
    res = minimize(negative, start, method='BFGS', options={'gtol': 1e-12})
    return float(-res.fun)


def integrand_row(law: ElasticLaw, eigenvalues, gauge: GaugeKind = "relaxed") -> Dict[str, float]:
    """One row of the integrand table for the diagonal tensor with the given eigenvalues"""
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.shape != (law.dim,):
        raise InputError(f"expected {law.dim} eigenvalues, got {lam.tolist()}")
    table = GaugeTable(law, gauge)
    row = {f"lambda{i + 1}": float(v) for i, v in enumerate(lam)}
    row["j"] = float(j_values(law, lam))
    row["j_bar"] = float(j_k_values(law, law.dim - 1, lam))
    for k in range(1, law.dim + 1):
        row[f"j_{k}"] = float(j_k_values(law, k, lam))
    row["rho"] = float(table.rho_eig(lam))
    row["rho0"] = float(table.rho0_exact_eig(lam))
    return row
