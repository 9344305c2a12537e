"""
Run artifacts: JSON summaries, CSV tables with schema sidecars, legacy-VTK fields, manifest.

Numbers are written with repr() so identical runs give byte-identical files.
"""

import csv
import json
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

import settings
from domain_grid import DiscreteDomain
from errors import InputError
from log_utils import get_logger

logger = get_logger(__name__)

MANIFEST = "manifest.json"

# Column documentation shared by every table the CLI writes
COLUMNS: Dict[str, str] = {
    "lambda1": "first eigenvalue of the diagonal test tensor",
    "lambda2": "second eigenvalue of the diagonal test tensor",
    "lambda3": "third eigenvalue of the diagonal test tensor",
    "j": "quadratic law j",
    "j_bar": "relaxed law (rank ≤ n−1 envelope)",
    "j_1": "rank-1 constrained law",
    "j_2": "rank-2 constrained law",
    "j_3": "rank-3 constrained law (equals j in 3D)",
    "rho": "gauge ρ = √(2 j̄) (or √(2 j) for the original gauge)",
    "rho0": "polar gauge ρ⁰",
    "law": "law used for the compliance (j, j_bar or j_k)",
    "k": "rank bound of the law",
    "delta": "floor factor used (empty when the measure supports the load directly)",
    "value": "compliance value",
    "primal": "displacement-side bound",
    "dual": "stress-side bound",
    "gap": "relative gap between the two bounds",
    "iterations": "solver iterations",
    "extrapolation_residual": "difference between the two smallest-floor values",
    "cell": "flat cell index (C order, x axis first)",
    "x": "cell-centre x coordinate",
    "y": "cell-centre y coordinate",
    "z": "cell-centre z coordinate",
    "density": "density (mass per unit volume)",
    "rho0_lambda": "polar gauge of the cell stress",
    "s1": "largest-magnitude principal stress",
    "s2": "second principal stress",
    "s3": "third principal stress",
    "d1x": "x component of the first principal direction",
    "d1y": "y component of the first principal direction",
    "d1z": "z component of the first principal direction",
    "flux_x": "x component of the flux (scalar mode)",
    "flux_y": "y component of the flux (scalar mode)",
    "flux_z": "z component of the flux (scalar mode)",
    "bar": "bar index in the ground structure",
    "x0": "first endpoint x",
    "y0": "first endpoint y",
    "z0": "first endpoint z",
    "x1": "second endpoint x",
    "y1": "second endpoint y",
    "z1": "second endpoint z",
    "force": "axial bar force (positive in tension)",
    "mass": "bar mass in the optimal measure",
    "eps": "mass parameter ε",
    "eps_effective": "volume of the selected cell set",
    "c_eps": "compliance c_ε of the fattened measure",
    "c_eps_upper": "heuristic upper bound on inf c_ε",
    "c_target": "compliance c of the target measure",
    "E_target": "relaxed compliance E of the target measure",
    "c_inf": "I²/2 for the unrelaxed gauge",
    "flag": "empty, or the reason a value is not finite",
    "exchanges": "accepted local-exchange moves",
    "probe": "probe region index",
    "atoms": "number of fitted atoms",
    "residual": "relative moment-fit residual",
    "condition": "condition number of the moment design matrix",
    "samples": "cells carrying mass in the probe",
    "note": "fit diagnostics",
    "radius": "ball radius R = ε√(ε/π)",
    "cells_per_period": "grid cells per period",
    "weighted_energy": "∫|σ_ε|² dμ_ε per unit area",
    "div_constant": "largest nodal divergence over the constant-stress regions",
    "div_annulus": "largest nodal divergence inside the annuli",
    "div_interfaces": "largest nodal divergence at region interfaces",
    "mean_dx_11": "∫σ₁₁ dx per unit area",
    "mean_dx_22": "∫σ₂₂ dx per unit area",
    "mean_dx_12": "∫σ₁₂ dx per unit area",
    "mean_dmu_11": "∫σ₁₁ dμ_ε per unit area",
    "mean_dmu_22": "∫σ₂₂ dμ_ε per unit area",
    "mean_dmu_12": "∫σ₁₂ dμ_ε per unit area",
    "weight_at_identity": "fitted weight at I₂",
    "quantity": "compared quantity",
    "a": "value in the first run",
    "b": "value in the second run",
    "abs_delta": "absolute difference",
    "rel_delta": "relative difference",
}


def _fmt(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else repr(v)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


class RunDirectory:
    """One output directory per run; keeps the list of files it wrote"""

    def __init__(self, root: str, name: str):
        self.path = Path(root) / name
        self.path.mkdir(parents=True, exist_ok=True)
        self.files: List[str] = []

    def _target(self, name: str) -> Path:
        self.files.append(name)
        return self.path / name

    def write_json(self, name: str, data: Any) -> Path:
        target = self._target(name)
        target.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding='utf-8')
        return target

    def write_csv(self, name: str, rows: Sequence[Dict[str, Any]], columns: Optional[Sequence[str]] = None,
                  docs: Optional[Dict[str, str]] = None) -> Path:
        """CSV plus ``<name>.schema.json`` documenting every column"""
        if columns is None:
            if not rows:
                raise InputError(f"cannot infer the columns of the empty table {name}")
            columns = list(rows[0].keys())
        docs = {**COLUMNS, **(docs or {})}
        missing = [c for c in columns if c not in docs]
        if missing:
            raise InputError(f"undocumented CSV columns in {name}: {missing}")
        target = self._target(f"{name}.csv")
        with target.open('w', newline='', encoding='utf-8') as fh:
            writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator='\n')
            writer.writeheader()
            for row in rows:
                writer.writerow({c: _fmt(row.get(c, "")) for c in columns})
        self.write_json(f"{name}.schema.json", {"table": f"{name}.csv",
                                                 "columns": [{"name": c, "description": docs[c]} for c in columns]})
        return target

    def write_vtk(self, name: str, dom: DiscreteDomain, cell_data: Dict[str, np.ndarray]) -> Path:
        """Legacy VTK STRUCTURED_POINTS with cell scalars, vectors and tensors"""
        target = self._target(f"{name}.vtk")
        nodes = list(dom.node_shape) + [1] * (3 - dom.dim)
        origin = list(dom.origin) + [0.0] * (3 - dom.dim)
        lines = ["# vtk DataFile Version 3.0", f"{settings.APP_NAME} {name}", "ASCII",
                 "DATASET STRUCTURED_POINTS",
                 f"DIMENSIONS {' '.join(str(n) for n in nodes)}",
                 f"ORIGIN {' '.join(repr(float(o)) for o in origin)}",
                 f"SPACING {dom.h!r} {dom.h!r} {dom.h!r}",
                 f"CELL_DATA {dom.n_cells}"]
        # VTK orders points x fastest; the grid stores axis 0 slowest
        perm = np.arange(dom.n_cells).reshape(dom.cells).transpose().ravel()
        for key, values in cell_data.items():
            arr = np.asarray(values, dtype=float)[perm]
            if arr.ndim == 1:
                lines += [f"SCALARS {key} double 1", "LOOKUP_TABLE default"]
                lines += [repr(float(v)) for v in arr]
            elif arr.ndim == 2:
                padded = np.zeros((arr.shape[0], 3))
                padded[:, :arr.shape[1]] = arr
                lines.append(f"VECTORS {key} double")
                lines += [" ".join(repr(float(v)) for v in row) for row in padded]
            elif arr.ndim == 3:
                padded = np.zeros((arr.shape[0], 3, 3))
                padded[:, :arr.shape[1], :arr.shape[2]] = arr
                lines.append(f"TENSORS {key} double")
                for t in padded:
                    lines += [" ".join(repr(float(v)) for v in row) for row in t]
            else:
                raise InputError(f"cell field {key} has unsupported shape {arr.shape}")
        target.write_text("\n".join(lines) + "\n", encoding='utf-8')
        return target

    def write_manifest(self, config: Dict[str, Any], summary: Dict[str, Any],
                       status: str = "ok", extra: Optional[Dict[str, Any]] = None) -> Path:
        manifest = {
            "app": settings.APP_NAME,
            "artifact_version": settings.APP_VERSION,
            "status": status,
            "config": config,
            "settings": settings.get_settings().model_dump(),
            "summary": summary,
            "files": sorted(set(self.files)),
            "python": platform.python_version(),
            "written_at": datetime.now(timezone.utc).isoformat(timespec='seconds'),
        }
        if extra:
            manifest.update(extra)
        target = self.path / MANIFEST
        target.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n", encoding='utf-8')
        logger.info("manifest_written", path=str(target), files=len(manifest["files"]))
        return target


def read_manifest(run_dir: str) -> Dict[str, Any]:
    path = Path(run_dir) / MANIFEST
    if not path.exists():
        raise InputError(f"no manifest in {run_dir}")
    return json.loads(path.read_text(encoding='utf-8'))


def cell_rows(dom: DiscreteDomain, columns: Dict[str, np.ndarray]) -> List[Dict[str, Any]]:
    """One row per active cell with its centre and the given per-cell columns"""
    names = "xyz"[:dom.dim]
    centers = dom.cell_centers
    rows = []
    for c in np.flatnonzero(dom.active_cells):
        row: Dict[str, Any] = {"cell": int(c)}
        row.update({names[a]: float(centers[c, a]) for a in range(dom.dim)})
        row.update({key: float(values[c]) for key, values in columns.items()})
        rows.append(row)
    return rows

