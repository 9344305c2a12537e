"""
Discrete domains: a uniform rectangular grid over Ω (box or union of boxes), the clamped
set Σ, the load F, density measures and the discrete strain / divergence pair.

Displacements live on nodes, stresses and strains on cell centres (one-point quadrature).
The divergence is defined as the exact negative adjoint of the strain:

    cell_volume · Σ_c λ_c : e_c(u) = − Σ_p div(λ)_p · u_p

so nodal vectors are force-like (integrated) quantities.
"""

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import breadth_first_order, connected_components

from errors import InfeasibleProblemError, InputError
from log_utils import get_logger

logger = get_logger(__name__)

Box = Tuple[Sequence[float], Sequence[float]]

_GEOM_TOL = 1e-9


def _in_boxes(points: np.ndarray, boxes: Sequence[Box], tol: float) -> np.ndarray:
    inside = np.zeros(points.shape[0], dtype=bool)
    for lo, hi in boxes:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        inside |= np.all((points >= lo - tol) & (points <= hi + tol), axis=1)
    return inside


class DiscreteDomain:
    """Uniform grid of ``cells`` (per axis) with cell size ``h`` anchored at ``origin``.

    Fields with ``ncomp`` components per node: ``ncomp = dim`` for elasticity,
    ``ncomp = 1`` in scalar mode.
    """

    def __init__(self, dim: int, cells: Sequence[int], h: float,
                 origin: Optional[Sequence[float]] = None,
                 omega: Optional[Sequence[Box]] = None,
                 clamp: Optional[Sequence[Box]] = None,
                 point_loads: Optional[Sequence[Tuple[Sequence[float], Sequence[float]]]] = None,
                 distributed_load: Optional[np.ndarray] = None,
                 scalar: bool = False):
        if dim not in (2, 3):
            raise InputError(f"domain dimension must be 2 or 3, got {dim}")
        cells = tuple(int(c) for c in cells)
        if len(cells) != dim or min(cells) < 1:
            raise InputError(f"need {dim} positive cell counts, got {cells}")
        if h <= 0:
            raise InputError(f"cell size must be positive, got {h}")
        self.dim = dim
        self.cells = cells
        self.h = float(h)
        self.origin = np.zeros(dim) if origin is None else np.asarray(origin, dtype=float)
        self.scalar = bool(scalar)
        self.ncomp = 1 if scalar else dim
        self.node_shape = tuple(c + 1 for c in cells)
        self.n_nodes = int(np.prod(self.node_shape))
        self.n_cells = int(np.prod(cells))
        self.cell_volume = self.h ** dim

        upper = self.origin + self.h * np.asarray(cells)
        self.omega_boxes: List[Box] = list(omega) if omega else [(tuple(self.origin), tuple(upper))]
        self.active_cells = _in_boxes(self.cell_centers, self.omega_boxes, 0.0)
        if not np.any(self.active_cells):
            raise InputError("Ω contains no grid cell")
        self.active_cells.setflags(write=False)
        touched = np.zeros(self.n_nodes, dtype=bool)
        touched[self.cell_nodes[self.active_cells].ravel()] = True
        self.omega_nodes = touched
        self.omega_nodes.setflags(write=False)

        self.clamp_boxes: List[Box] = list(clamp or [])
        mask = _in_boxes(self.node_coords, self.clamp_boxes, _GEOM_TOL * self.h) if self.clamp_boxes \
            else np.zeros(self.n_nodes, dtype=bool)
        self.clamped = mask & self.omega_nodes
        self.clamped.setflags(write=False)

        self.point_loads = [(tuple(float(x) for x in p), tuple(np.atleast_1d(np.asarray(f, dtype=float))))
                            for p, f in (point_loads or [])]
        self.distributed_load = None if distributed_load is None else np.asarray(distributed_load, dtype=float)
        self.load = self._assemble_load()
        self.load.setflags(write=False)
        self._check_admissible()

    @classmethod
    def box(cls, dim: int, cells: Sequence[int], lengths: Sequence[float] = None, **kwargs) -> 'DiscreteDomain':
        """Grid over [0, L₁] × … with uniform cell size"""
        lengths = [1.0] * dim if lengths is None else [float(x) for x in lengths]
        if len(lengths) != dim or len(cells) != dim:
            raise InputError("lengths and cells must both have one entry per axis")
        hs = [length / c for length, c in zip(lengths, cells)]
        if max(hs) - min(hs) > 1e-12 * max(hs):
            raise InputError(f"cells must be square/cubic, got cell sizes {hs}")
        return cls(dim, cells, hs[0], **kwargs)

    # --- geometry ---

    @cached_property
    def node_coords(self) -> np.ndarray:
        grids = np.meshgrid(*[np.arange(s) for s in self.node_shape], indexing='ij')
        idx = np.stack([g.ravel() for g in grids], axis=-1)
        return self.origin + self.h * idx

    @cached_property
    def cell_centers(self) -> np.ndarray:
        grids = np.meshgrid(*[np.arange(s) for s in self.cells], indexing='ij')
        idx = np.stack([g.ravel() for g in grids], axis=-1)
        return self.origin + self.h * (idx + 0.5)

    @cached_property
    def corner_bits(self) -> np.ndarray:
        """(2^n, n) corner offsets of a cell in lexicographic order"""
        return np.array(list(itertools.product((0, 1), repeat=self.dim)), dtype=int)

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """(cells, 2^n) node indices of every cell's corners"""
        grids = np.meshgrid(*[np.arange(s) for s in self.cells], indexing='ij')
        base = np.stack([g.ravel() for g in grids], axis=-1)
        corners = base[:, None, :] + self.corner_bits[None, :, :]
        return np.ravel_multi_index(tuple(np.moveaxis(corners, -1, 0)), self.node_shape)

    @property
    def volume(self) -> float:
        """|Ω|"""
        return float(self.cell_volume * np.count_nonzero(self.active_cells))

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.ncomp

    @cached_property
    def free_dofs(self) -> np.ndarray:
        return np.repeat(~self.clamped, self.ncomp)

    def node_index(self, point: Sequence[float]) -> int:
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dim,):
            raise InputError(f"point {list(point)} is not {self.dim}-dimensional")
        rel = (p - self.origin) / self.h
        idx = np.rint(rel)
        if np.max(np.abs(rel - idx)) > _GEOM_TOL or np.any(idx < 0) or np.any(idx >= self.node_shape):
            raise InputError(f"point load at {p.tolist()} does not sit on a grid node")
        node = int(np.ravel_multi_index(tuple(idx.astype(int)), self.node_shape))
        if not self.omega_nodes[node]:
            raise InputError(f"point load at {p.tolist()} lies outside Ω")
        return node

    def cells_in_box(self, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
        return _in_boxes(self.cell_centers, [(lo, hi)], 0.0) & self.active_cells

    def nodes_in_box(self, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
        return _in_boxes(self.node_coords, [(lo, hi)], _GEOM_TOL * self.h) & self.omega_nodes

    # --- load ---

    def _assemble_load(self) -> np.ndarray:
        f = np.zeros((self.n_nodes, self.ncomp))
        for point, force in self.point_loads:
            if len(force) != self.ncomp:
                raise InputError(f"load {list(force)} must have {self.ncomp} components")
            f[self.node_index(point)] += force
        if self.distributed_load is not None:
            dens = self.distributed_load.reshape(self.n_cells, self.ncomp)
            dens = np.where(self.active_cells[:, None], dens, 0.0)
            share = self.cell_volume * dens / self.corner_bits.shape[0]
            for corner in range(self.corner_bits.shape[0]):
                np.add.at(f, self.cell_nodes[:, corner], share)
        return f

    @property
    def load_vector(self) -> np.ndarray:
        return self.load.ravel()

    def with_load(self, point_loads=None, distributed_load=None) -> 'DiscreteDomain':
        return DiscreteDomain(self.dim, self.cells, self.h, origin=self.origin, omega=self.omega_boxes,
                              clamp=self.clamp_boxes, point_loads=point_loads,
                              distributed_load=distributed_load, scalar=self.scalar)

    def scaled_load(self, t: float) -> 'DiscreteDomain':
        dist = None if self.distributed_load is None else t * self.distributed_load
        return self.with_load([(p, tuple(t * np.asarray(f))) for p, f in self.point_loads], dist)

    def _check_admissible(self) -> None:
        if np.any(self.clamped):
            return
        total = self.load.sum(axis=0)
        scale = max(1.0, float(np.abs(self.load).sum()))
        if np.any(np.abs(total) > 1e-12 * scale):
            raise InfeasibleProblemError("Σ is empty and the load has a nonzero resultant",
                                         {"resultant": total.tolist()})
        if self.scalar:
            return
        x = self.node_coords
        if self.dim == 2:
            moment = np.array([np.sum(x[:, 0] * self.load[:, 1] - x[:, 1] * self.load[:, 0])])
        else:
            moment = np.cross(x, self.load).sum(axis=0)
        if np.any(np.abs(moment) > 1e-12 * scale * max(1.0, float(np.abs(x).max()))):
            raise InfeasibleProblemError("Σ is empty and the load has a nonzero total moment",
                                         {"moment": moment.tolist()})

    def check_posed(self) -> None:
        """A structural problem needs Σ or a load; with neither there is nothing to hold or carry"""
        if not np.any(self.clamped) and not np.any(self.load):
            raise InfeasibleProblemError("Σ is empty and there is no load: the problem is not posed",
                                         {"clamped_nodes": 0, "loads": len(self.point_loads)})

    # --- operators ---

    @cached_property
    def gradient_weights(self) -> np.ndarray:
        """(2^n, n) derivative of each corner shape function at the cell centre"""
        return (2.0 * self.corner_bits - 1.0) / (2 ** (self.dim - 1) * self.h)

    @cached_property
    def strain_matrix(self) -> sparse.csr_matrix:
        """E with e = E u; rows (cell, a, b) over full n×n entries, or (cell, b) in scalar mode"""
        n, nc = self.dim, self.n_cells
        g = self.gradient_weights
        rows, cols, vals = [], [], []
        cell_ids = np.arange(nc)
        for corner in range(g.shape[0]):
            nodes = self.cell_nodes[:, corner]
            if self.scalar:
                for b in range(n):
                    rows.append(cell_ids * n + b)
                    cols.append(nodes)
                    vals.append(np.full(nc, g[corner, b]))
                continue
            for a in range(n):
                for b in range(n):
                    row = cell_ids * n * n + a * n + b
                    rows.append(row)
                    cols.append(nodes * n + a)
                    vals.append(np.full(nc, 0.5 * g[corner, b]))
                    rows.append(row)
                    cols.append(nodes * n + b)
                    vals.append(np.full(nc, 0.5 * g[corner, a]))
        shape = (nc * (n if self.scalar else n * n), self.n_dofs)
        mat = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)
        return mat.tocsr()

    @cached_property
    def trace_matrix(self) -> sparse.csr_matrix:
        """tr e per cell (vector mode only)"""
        n = self.dim
        sel = sparse.kron(sparse.eye(self.n_cells), sparse.csr_matrix(np.eye(n).reshape(1, n * n)))
        return (sel @ self.strain_matrix).tocsr()

    @cached_property
    def hourglass_matrix(self) -> sparse.csr_matrix:
        """Rows (cell, mode, component): the hourglass patterns invisible to one-point quadrature"""
        n, nc, m = self.dim, self.n_cells, self.ncomp
        signs = 2.0 * self.corner_bits - 1.0
        modes = [np.prod(signs[:, list(axes)], axis=1)
                 for r in range(2, n + 1) for axes in itertools.combinations(range(n), r)]
        modes = [mode / np.sqrt(len(mode)) for mode in modes]
        rows, cols, vals = [], [], []
        cell_ids = np.arange(nc)
        for mi, mode in enumerate(modes):
            for corner in range(signs.shape[0]):
                nodes = self.cell_nodes[:, corner]
                for a in range(m):
                    rows.append((cell_ids * len(modes) + mi) * m + a)
                    cols.append(nodes * m + a)
                    vals.append(np.full(nc, mode[corner]))
        shape = (nc * len(modes) * m, self.n_dofs)
        mat = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)
        return mat.tocsr()

    @property
    def hourglass_modes(self) -> int:
        return 2 ** self.dim - self.dim - 1


# === Fields and measures ===


@dataclass
class DisplacementField:
    """Nodal vectors (nodes, ncomp); zero on Σ"""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


@dataclass
class StressField:
    """Cell tensors (cells, n, n) (or cell vectors in scalar mode) and/or axial bar forces"""
    cells: Optional[np.ndarray] = None
    bars: Optional[np.ndarray] = None


@dataclass
class TrussGraph:
    """Candidate bars between grid nodes"""
    bars: np.ndarray
    lengths: np.ndarray
    directions: np.ndarray
    equilibrium: sparse.csc_matrix
    n_nodes: int

    @property
    def n_bars(self) -> int:
        return int(self.bars.shape[0])


@dataclass
class DensityMeasure:
    """Nonnegative cell weights (mass per unit volume) and an optional truss part
    (bars between grid nodes with linear densities)."""
    cell_weights: np.ndarray
    bars: Optional[np.ndarray] = None
    bar_density: Optional[np.ndarray] = None
    cell_volume: float = 1.0
    bar_lengths: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.cell_weights = np.asarray(self.cell_weights, dtype=float)
        if np.any(self.cell_weights < 0) or not np.all(np.isfinite(self.cell_weights)):
            raise InputError("density weights must be finite and nonnegative")
        if self.bars is not None:
            self.bars = np.asarray(self.bars, dtype=int).reshape(-1, 2)
            self.bar_density = np.asarray(self.bar_density, dtype=float)
            self.bar_lengths = np.asarray(self.bar_lengths, dtype=float)
            if self.bar_density.shape != (self.bars.shape[0],) or self.bar_lengths.shape != self.bar_density.shape:
                raise InputError("truss part needs one density and one length per bar")
            if np.any(self.bar_density < 0):
                raise InputError("bar densities must be nonnegative")

    @classmethod
    def on(cls, dom: DiscreteDomain, weights: np.ndarray) -> 'DensityMeasure':
        w = np.asarray(weights, dtype=float)
        if w.shape != (dom.n_cells,):
            raise InputError(f"expected {dom.n_cells} cell weights, got shape {w.shape}")
        return cls(np.where(dom.active_cells, w, 0.0), cell_volume=dom.cell_volume)

    @classmethod
    def lebesgue(cls, dom: DiscreteDomain) -> 'DensityMeasure':
        """Uniform probability density on Ω"""
        return cls.on(dom, dom.active_cells / dom.volume)

    @classmethod
    def indicator(cls, dom: DiscreteDomain, omega: np.ndarray, eps: float) -> 'DensityMeasure':
        """1_ω/ε: weights exactly 0 or 1/ε"""
        if eps <= 0:
            raise InputError(f"ε must be positive, got {eps}")
        mask = np.asarray(omega, dtype=bool) & dom.active_cells
        return cls.on(dom, np.where(mask, 1.0 / eps, 0.0))

    @classmethod
    def truss(cls, dom: DiscreteDomain, graph: 'TrussGraph', density: np.ndarray,
              keep_tol: float = 0.0) -> 'DensityMeasure':
        density = np.asarray(density, dtype=float)
        keep = density > keep_tol
        return cls(np.zeros(dom.n_cells), bars=graph.bars[keep], bar_density=density[keep],
                   cell_volume=dom.cell_volume, bar_lengths=graph.lengths[keep])

    @property
    def has_truss(self) -> bool:
        return self.bars is not None and self.bars.shape[0] > 0

    @property
    def bar_mass(self) -> float:
        if not self.has_truss:
            return 0.0
        return float(np.sum(self.bar_density * self.bar_lengths))

    @property
    def total_mass(self) -> float:
        return float(self.cell_volume * np.sum(self.cell_weights)) + self.bar_mass

    def scaled(self, t: float) -> 'DensityMeasure':
        if t < 0:
            raise InputError(f"measure scale must be nonnegative, got {t}")
        return DensityMeasure(t * self.cell_weights, self.bars,
                              None if self.bar_density is None else t * self.bar_density,
                              self.cell_volume, self.bar_lengths)

    def normalize(self) -> 'DensityMeasure':
        mass = self.total_mass
        if mass <= 0:
            raise InputError("cannot normalize a measure with zero mass")
        return self.scaled(1.0 / mass)

    def first_moment(self, dom: DiscreteDomain) -> np.ndarray:
        """∫ x dμ"""
        moment = self.cell_volume * (self.cell_weights @ dom.cell_centers)
        if self.has_truss:
            mid = 0.5 * (dom.node_coords[self.bars[:, 0]] + dom.node_coords[self.bars[:, 1]])
            moment = moment + (self.bar_density * self.bar_lengths) @ mid
        return moment


# === Discrete operators ===


def _nodal(dom: DiscreteDomain, u) -> np.ndarray:
    values = u.values if isinstance(u, DisplacementField) else np.asarray(u, dtype=float)
    if values.size != dom.n_dofs:
        raise InputError(f"displacement has {values.size} entries, domain has {dom.n_dofs} dofs")
    return values.reshape(-1)


def discrete_strain(dom: DiscreteDomain, u) -> np.ndarray:
    """Cell-centre symmetrized gradient (cells, n, n); cell gradient (cells, n) in scalar mode"""
    e = dom.strain_matrix @ _nodal(dom, u)
    if dom.scalar:
        return e.reshape(dom.n_cells, dom.dim)
    return e.reshape(dom.n_cells, dom.dim, dom.dim)


def discrete_div(dom: DiscreteDomain, lam) -> np.ndarray:
    """Negative adjoint of discrete_strain: nodal vectors (nodes, ncomp)"""
    values = lam.cells if isinstance(lam, StressField) else np.asarray(lam, dtype=float)
    flat = values.reshape(-1)
    if flat.size != dom.strain_matrix.shape[0]:
        raise InputError(f"stress has {flat.size} entries, expected {dom.strain_matrix.shape[0]}")
    return (-dom.cell_volume * (dom.strain_matrix.T @ flat)).reshape(dom.n_nodes, dom.ncomp)


def equilibrium_residual(dom: DiscreteDomain, lam) -> np.ndarray:
    """−div λ − F on free dofs (zero on Σ)"""
    res = -discrete_div(dom, lam) - dom.load
    res[dom.clamped] = 0.0
    return res


# === Ground structure ===


def ground_structure(dom: DiscreteDomain, connectivity_radius: float,
                     node_mask: Optional[np.ndarray] = None) -> TrussGraph:
    """All pairs of Ω̄ nodes within the radius whose segment stays inside Ω̄"""
    if connectivity_radius < dom.h * (1.0 - _GEOM_TOL):
        raise InputError(f"connectivity radius {connectivity_radius} is below the cell size {dom.h}")
    allowed = dom.omega_nodes.copy()
    if node_mask is not None:
        allowed &= np.asarray(node_mask, dtype=bool)
    reach = int(np.floor(connectivity_radius / dom.h * (1.0 + _GEOM_TOL)))
    offsets = [o for o in itertools.product(range(-reach, reach + 1), repeat=dom.dim)
               if o > (0,) * dom.dim and np.linalg.norm(o) <= connectivity_radius / dom.h * (1.0 + _GEOM_TOL)]
    grid_idx = np.stack(np.unravel_index(np.arange(dom.n_nodes), dom.node_shape), axis=-1)
    pairs = []
    for off in offsets:
        target = grid_idx + np.asarray(off)
        ok = np.all((target >= 0) & (target < np.asarray(dom.node_shape)), axis=1)
        src = np.flatnonzero(ok)
        dst = np.ravel_multi_index(tuple(target[ok].T), dom.node_shape)
        keep = allowed[src] & allowed[dst]
        pairs.append(np.stack([src[keep], dst[keep]], axis=-1))
    bars = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=int)
    if bars.shape[0] and len(dom.omega_boxes) > 1:
        bars = bars[_segments_inside(dom, bars)]
    if bars.shape[0] == 0:
        raise InfeasibleProblemError("ground structure is empty", {"radius": connectivity_radius})
    order = np.lexsort((bars[:, 1], bars[:, 0]))
    bars = bars[order]
    vec = dom.node_coords[bars[:, 1]] - dom.node_coords[bars[:, 0]]
    lengths = np.linalg.norm(vec, axis=1)
    directions = vec / lengths[:, None]
    equilibrium = _equilibrium_matrix(dom, bars, directions)
    logger.info("ground_structure", bars=int(bars.shape[0]), radius=connectivity_radius)
    return TrussGraph(bars, lengths, directions, equilibrium, dom.n_nodes)


def _segments_inside(dom: DiscreteDomain, bars: np.ndarray, samples: int = 16) -> np.ndarray:
    t = np.linspace(0.0, 1.0, samples)
    a = dom.node_coords[bars[:, 0]]
    b = dom.node_coords[bars[:, 1]]
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    inside = _in_boxes(pts.reshape(-1, dom.dim), dom.omega_boxes, _GEOM_TOL * dom.h)
    return inside.reshape(bars.shape[0], samples).all(axis=1)


def _equilibrium_matrix(dom: DiscreteDomain, bars: np.ndarray, directions: np.ndarray) -> sparse.csc_matrix:
    """B with B q = F: column of bar (i, j) holds −d at node i and +d at node j"""
    m, nc = bars.shape[0], dom.ncomp
    cols = np.arange(m)
    if dom.scalar:
        rows = np.concatenate([bars[:, 0], bars[:, 1]])
        vals = np.concatenate([-np.ones(m), np.ones(m)])
        return sparse.csc_matrix((vals, (rows, np.concatenate([cols, cols]))), shape=(dom.n_dofs, m))
    rows, cc, vals = [], [], []
    for a in range(nc):
        rows += [bars[:, 0] * nc + a, bars[:, 1] * nc + a]
        cc += [cols, cols]
        vals += [-directions[:, a], directions[:, a]]
    return sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cc))),
                             shape=(dom.n_dofs, m))


def check_connected(dom: DiscreteDomain, graph: TrussGraph) -> None:
    """Every loaded free node must reach Σ through bars (or, with Σ empty, its loaded peers)"""
    adj = sparse.coo_matrix((np.ones(graph.n_bars), (graph.bars[:, 0], graph.bars[:, 1])),
                            shape=(dom.n_nodes, dom.n_nodes))
    adj = (adj + adj.T).tocsr()
    loaded = np.flatnonzero(np.any(dom.load != 0.0, axis=1) & ~dom.clamped)
    if not loaded.size:
        return
    if np.any(dom.clamped):
        reached = np.zeros(dom.n_nodes, dtype=bool)
        for root in np.flatnonzero(dom.clamped):
            if reached[root]:
                continue
            reached[breadth_first_order(adj, root, directed=False, return_predecessors=False)] = True
        stranded = [int(p) for p in loaded if not reached[p]]
    else:
        _, labels = connected_components(adj, directed=False)
        stranded = []
        for label in np.unique(labels[loaded]):
            members = loaded[labels[loaded] == label]
            if np.any(np.abs(dom.load[members].sum(axis=0)) > 1e-12 * max(1.0, float(np.abs(dom.load).sum()))):
                stranded.append(int(members[0]))
    if stranded:
        node = stranded[0]
        raise InfeasibleProblemError(
            f"loaded node {node} at {dom.node_coords[node].tolist()} is not connected to Σ by the ground structure",
            {"stranded_nodes": stranded})


# === Fattening ===


def _segment_coverage(dom: DiscreteDomain, a: np.ndarray, b: np.ndarray, width: float,
                      supersample: int) -> Tuple[np.ndarray, np.ndarray]:
    """Cells touched by the slab/tube of the given width around [a, b] and their covered fraction"""
    half = 0.5 * width
    lo = np.minimum(a, b) - half
    hi = np.maximum(a, b) + half
    ilo = np.clip(np.floor((lo - dom.origin) / dom.h).astype(int), 0, np.asarray(dom.cells) - 1)
    ihi = np.clip(np.floor((hi - dom.origin) / dom.h).astype(int), 0, np.asarray(dom.cells) - 1)
    ranges = [np.arange(l, u + 1) for l, u in zip(ilo, ihi)]
    grids = np.meshgrid(*ranges, indexing='ij')
    cell_idx = np.stack([g.ravel() for g in grids], axis=-1)
    sub = (np.arange(supersample) + 0.5) / supersample
    offs = np.stack([g.ravel() for g in np.meshgrid(*([sub] * dom.dim), indexing='ij')], axis=-1)
    pts = dom.origin + dom.h * (cell_idx[:, None, :] + offs[None, :, :])
    seg = b - a
    length = float(np.linalg.norm(seg))
    d = seg / length
    rel = pts - a
    t = rel @ d
    perp = np.linalg.norm(rel - t[..., None] * d, axis=-1)
    inside = (t >= 0.0) & (t <= length) & (perp <= half)
    frac = inside.mean(axis=1)
    flat = np.ravel_multi_index(tuple(cell_idx.T), dom.cells)
    return flat, frac


def fatten(dom: DiscreteDomain, measure: DensityMeasure, eps: float, supersample: int = 8) -> DensityMeasure:
    """Replace the truss part of a measure by 1_{A_ε}/ε with |A_ε| = ε.

    Each bar of linear density θ becomes a slab of width εθ (2D) or a tube of
    cross-section εθ (3D); coverage is rasterized by supersampling every cell.
    """
    if eps <= 0:
        raise InputError(f"ε must be positive, got {eps}")
    if eps > dom.volume:
        raise InputError(f"ε = {eps} exceeds the domain volume {dom.volume}")
    if not measure.has_truss or measure.bar_mass <= 0:
        raise InputError("fattening needs a truss part with positive mass")
    mass = measure.bar_mass
    if abs(mass - 1.0) > 1e-12:
        logger.warning("fatten_normalizing", mass=mass)
    coverage = np.zeros(dom.n_cells)
    coords = dom.node_coords
    for (i, j), theta in zip(measure.bars, measure.bar_density / mass):
        if theta <= 0:
            continue
        cross = eps * theta
        width = cross if dom.dim == 2 else 2.0 * np.sqrt(cross / np.pi)
        cells, frac = _segment_coverage(dom, coords[i], coords[j], width, supersample)
        np.maximum.at(coverage, cells, frac)
    coverage = np.where(dom.active_cells, coverage, 0.0)
    covered = dom.cell_volume * coverage.sum()
    if covered <= 0:
        raise InputError(f"fattened support at ε = {eps} covers no cell")
    lost = 1.0 - covered / eps
    if abs(lost) > 0.01:
        logger.warning("fatten_rebalanced", eps=eps, volume_deficit=float(lost))
    weights = coverage / eps
    return DensityMeasure.on(dom, weights * (1.0 / (dom.cell_volume * weights.sum())))
