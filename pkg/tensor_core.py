"""
Small symmetric tensors (n = 2, 3) and their closed-form spectral decomposition.

Everything downstream (integrands, solvers, probes) works on stacks of tensors
shaped (..., n, n); the batch functions here are the hot path. ``SymTensor`` is
the value type used at the scalar API boundary.
"""

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

import settings
from errors import InputError

_TWO_PI_OVER_3 = 2.0 * np.pi / 3.0


# === Batch helpers ===


def sym_part(a: np.ndarray) -> np.ndarray:
    """Symmetric part of a stack of square matrices"""
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def trace_batch(a: np.ndarray) -> np.ndarray:
    return np.trace(a, axis1=-2, axis2=-1)


def frob_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Frobenius pairing z·ξ = Σ z_ij ξ_ij over the last two axes"""
    return np.einsum('...ij,...ij->...', a, b)


def det_batch(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    if n == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return (a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
            - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
            + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]))


def reconstruct(eigenvalues: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Σᵢ λᵢ eᵢ⊗eᵢ with eᵢ the columns of ``frames``"""
    return np.einsum('...ik,...k,...jk->...ij', frames, eigenvalues, frames)


def _sort_spectrum(vals: np.ndarray, vecs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # |λ| descending, ties broken by signed value descending
    keys = np.stack([-vals, -np.abs(vals)])
    order = np.lexsort(keys, axis=-1)
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)
    return vals, vecs


def _eigh2_unsorted(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    p = a[..., 0, 0]
    q = a[..., 1, 1]
    b = 0.5 * (a[..., 0, 1] + a[..., 1, 0])
    m = 0.5 * (p + q)
    d = 0.5 * (p - q)
    r = np.hypot(d, b)
    det = p * q - b * b
    hi = m + r
    lo = m - r
    # recover the cancelling root from the determinant
    with np.errstate(divide='ignore', invalid='ignore'):
        lo = np.where((m >= 0) & (hi != 0), det / np.where(hi != 0, hi, 1.0), lo)
        hi = np.where((m < 0) & (lo != 0), det / np.where(lo != 0, lo, 1.0), hi)
    theta = 0.5 * np.arctan2(b, d)
    c, s = np.cos(theta), np.sin(theta)
    vals = np.stack([hi, lo], axis=-1)
    vecs = np.empty(a.shape[:-2] + (2, 2))
    vecs[..., 0, 0] = c
    vecs[..., 1, 0] = s
    vecs[..., 0, 1] = -s
    vecs[..., 1, 1] = c
    return vals, vecs


def _newton_polish(a: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """One Newton step on det(a − λI) = 0"""
    c2 = trace_batch(a)
    c1 = (a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] ** 2
          + a[..., 0, 0] * a[..., 2, 2] - a[..., 0, 2] ** 2
          + a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] ** 2)
    c0 = det_batch(a)
    chi = -lam ** 3 + c2 * lam ** 2 - c1 * lam + c0
    dchi = -3.0 * lam ** 2 + 2.0 * c2 * lam - c1
    scale = np.maximum(np.abs(c2) ** 2, np.abs(c1)) + np.finfo(float).tiny
    ok = np.abs(dchi) > 1e-8 * scale
    step = np.where(ok, chi / np.where(ok, dchi, 1.0), 0.0)
    return lam - step


def _eigh3_unsorted(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    batch = a.shape[:-2]
    q = trace_batch(a) / 3.0
    eye = np.eye(3)
    b = a - q[..., None, None] * eye
    p = np.sqrt(np.sum(b * b, axis=(-2, -1)) / 6.0)
    degenerate = p <= 1e-300
    safe_p = np.where(degenerate, 1.0, p)
    r = np.clip(det_batch(b / safe_p[..., None, None]) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + _TWO_PI_OVER_3)
    l2 = 3.0 * q - l1 - l3
    l1 = _newton_polish(a, l1)
    l3 = _newton_polish(a, l3)
    l2 = 3.0 * q - l1 - l3

    # eigenvector of the best separated eigenvalue from cross products of a − λI
    iso = np.where(l1 - l2 >= l2 - l3, l1, l3)
    m = a - iso[..., None, None] * eye
    r0, r1, r2 = m[..., 0, :], m[..., 1, :], m[..., 2, :]
    crosses = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=-2)
    norms = np.linalg.norm(crosses, axis=-1)
    pick = np.argmax(norms, axis=-1)
    v = np.take_along_axis(crosses, pick[..., None, None], axis=-2)[..., 0, :]
    vnorm = np.take_along_axis(norms, pick[..., None], axis=-1)[..., 0]
    flat = degenerate | (vnorm <= 1e-300)
    v = np.where(flat[..., None], np.array([1.0, 0.0, 0.0]), v / np.where(flat, 1.0, vnorm)[..., None])

    # orthonormal basis (u, w) of the complement, then a 2x2 problem there
    use_x = np.abs(v[..., 0]) > np.abs(v[..., 1])
    u = np.where(use_x[..., None],
                 np.stack([-v[..., 2], np.zeros(batch), v[..., 0]], axis=-1),
                 np.stack([np.zeros(batch), v[..., 2], -v[..., 1]], axis=-1))
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    w = np.cross(v, u)
    au = np.einsum('...ij,...j->...i', a, u)
    aw = np.einsum('...ij,...j->...i', a, w)
    av = np.einsum('...ij,...j->...i', a, v)
    small = np.empty(batch + (2, 2))
    small[..., 0, 0] = np.einsum('...i,...i->...', u, au)
    small[..., 1, 1] = np.einsum('...i,...i->...', w, aw)
    small[..., 0, 1] = small[..., 1, 0] = np.einsum('...i,...i->...', u, aw)
    mu, rot = _eigh2_unsorted(small)
    e_a = rot[..., 0, 0, None] * u + rot[..., 1, 0, None] * w
    e_b = rot[..., 0, 1, None] * u + rot[..., 1, 1, None] * w

    vals = np.stack([np.einsum('...i,...i->...', v, av), mu[..., 0], mu[..., 1]], axis=-1)
    vecs = np.stack([v, e_a, e_b], axis=-1)
    return vals, vecs


def eigh_batch(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Spectral decomposition of a stack of symmetric 2x2 or 3x3 matrices.

    Returns eigenvalues (..., n) ordered by |λ| descending (ties: signed value
    descending) and frames (..., n, n) whose columns are the eigenvectors.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    if a.ndim < 2 or a.shape[-2] != n or n not in (2, 3):
        raise InputError(f"expected (..., n, n) with n in (2, 3), got shape {a.shape}")
    if n == 2:
        vals, vecs = _eigh2_unsorted(a)
    else:
        vals, vecs = _eigh3_unsorted(sym_part(a))
    return _sort_spectrum(vals, vecs)


def eigvals_batch(a: np.ndarray) -> np.ndarray:
    return eigh_batch(a)[0]


# === Value type ===


@dataclass(frozen=True)
class SymTensor:
    """Symmetric n x n tensor stored by its upper triangle (row-major)."""
    dim: int
    entries: Tuple[float, ...]

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise InputError(f"SymTensor dimension must be 2 or 3, got {self.dim}")
        expected = self.dim * (self.dim + 1) // 2
        if len(self.entries) != expected:
            raise InputError(f"SymTensor of dim {self.dim} needs {expected} entries, got {len(self.entries)}")
        object.__setattr__(self, 'entries', tuple(float(x) for x in self.entries))

    @classmethod
    def from_matrix(cls, m: Sequence[Sequence[float]]) -> 'SymTensor':
        arr = sym_part(np.asarray(m, dtype=float))
        n = arr.shape[0]
        rows, cols = np.triu_indices(n)
        return cls(n, tuple(arr[rows, cols]))

    @classmethod
    def diag(cls, values: Iterable[float]) -> 'SymTensor':
        return cls.from_matrix(np.diag(list(values)))

    @classmethod
    def zero(cls, dim: int) -> 'SymTensor':
        return cls.from_matrix(np.zeros((dim, dim)))

    @classmethod
    def identity(cls, dim: int) -> 'SymTensor':
        return cls.from_matrix(np.eye(dim))

    @property
    def matrix(self) -> np.ndarray:
        m = np.zeros((self.dim, self.dim))
        rows, cols = np.triu_indices(self.dim)
        m[rows, cols] = self.entries
        m[cols, rows] = self.entries
        return m

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))

    @property
    def det(self) -> float:
        return float(det_batch(self.matrix))

    def dot(self, other: 'SymTensor') -> float:
        return float(frob_inner(self.matrix, other.matrix))

    def __add__(self, other: 'SymTensor') -> 'SymTensor':
        return SymTensor.from_matrix(self.matrix + other.matrix)

    def __sub__(self, other: 'SymTensor') -> 'SymTensor':
        return SymTensor.from_matrix(self.matrix - other.matrix)

    def __mul__(self, t: float) -> 'SymTensor':
        return SymTensor(self.dim, tuple(t * x for x in self.entries))

    __rmul__ = __mul__


def as_matrix(z) -> np.ndarray:
    """Accept a SymTensor or an array-like and return the (n, n) matrix"""
    if isinstance(z, SymTensor):
        return z.matrix
    return sym_part(np.asarray(z, dtype=float))


# === Operations ===


def eigen(z: SymTensor) -> Tuple[Tuple[float, ...], np.ndarray]:
    """Eigenvalues sorted by |λ| descending and the orthonormal frame (columns)"""
    vals, vecs = eigh_batch(as_matrix(z))
    return tuple(float(v) for v in vals), vecs


def outer(e: Sequence[float], tau: float) -> SymTensor:
    """Rank-one tensor τ e⊗e"""
    vec = np.asarray(e, dtype=float)
    if vec.ndim != 1 or vec.size not in (2, 3):
        raise InputError(f"direction must be a 2- or 3-vector, got shape {vec.shape}")
    if abs(np.linalg.norm(vec) - 1.0) > 1e-10:
        raise InputError(f"direction must be a unit vector, |e| = {np.linalg.norm(vec)!r}")
    return SymTensor.from_matrix(tau * np.outer(vec, vec))


def rank_eps_batch(a: np.ndarray, tol: float = settings.RANK_TOL) -> np.ndarray:
    vals = eigvals_batch(a)
    thresh = tol * np.maximum(1.0, np.abs(vals[..., 0]))
    return np.sum(np.abs(vals) > thresh[..., None], axis=-1)


def rank_eps(z: SymTensor, tol: float = settings.RANK_TOL) -> int:
    """Number of eigenvalues with |λᵢ| > tol·max(1, |λ₁|)"""
    if tol <= 0:
        raise InputError(f"rank tolerance must be positive, got {tol}")
    return int(rank_eps_batch(as_matrix(z), tol))
