"""
Problem-file and run-configuration models, and builders from them to solver objects.

A problem file is JSON:

    {
      "name": "bar",
      "law": {"dim": 2, "alpha": 0.0, "beta": 0.5},
      "domain": {"lengths": [1, 1], "resolution": 64},
      "clamp": [[[0, 0], [0, 1]]],
      "loads": [{"point": [1, 0.5], "force": [-1, 0]}]
    }

plus optional blocks for the measure, truss ground structure, sweeps and probes.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

import settings
from domain_grid import DensityMeasure, DiscreteDomain
from errors import ConfigError
from integrands import ElasticLaw, law_from_gamma
from probes import DiscreteYoungMeasure

Point = List[float]
BoxSpec = Tuple[Point, Point]


class LawSpec(BaseModel):
    """Isotropic law by (alpha, beta) or, shear-only, by gamma"""
    dim: Literal[2, 3] = Field(2, description="Space dimension")
    alpha: Optional[float] = Field(None, description="First Lamé-type coefficient")
    beta: Optional[float] = Field(None, description="Shear coefficient, positive")
    gamma: Optional[float] = Field(None, description="Michell constant; alone it selects alpha = 0", gt=0)

    @model_validator(mode='after')
    def _complete(self) -> 'LawSpec':
        if self.beta is None and self.gamma is None:
            raise ValueError("law needs beta (with optional alpha) or gamma")
        return self

    def build(self) -> ElasticLaw:
        if self.beta is None:
            return law_from_gamma(self.dim, self.gamma)
        return ElasticLaw(dim=self.dim, alpha=self.alpha or 0.0, beta=self.beta, gamma=self.gamma)


class DomainSpec(BaseModel):
    lengths: List[float] = Field(..., description="Box edge lengths", min_length=2, max_length=3)
    resolution: int = Field(32, description="Cells per unit length", ge=1)
    origin: Optional[Point] = None
    omega: Optional[List[BoxSpec]] = Field(None, description="Ω as a union of boxes; default the whole grid")
    scalar: bool = Field(False, description="Scalar (conduction) mode")

    @field_validator('lengths')
    @classmethod
    def _positive(cls, v: List[float]) -> List[float]:
        if min(v) <= 0:
            raise ValueError("box lengths must be positive")
        return v


class LoadSpec(BaseModel):
    point: Point
    force: List[float] = Field(..., min_length=1, max_length=3)


class BarSpec(BaseModel):
    start: Point
    end: Point
    density: float = Field(..., gt=0, description="Linear density")


class MeasureSpec(BaseModel):
    kind: Literal["lebesgue", "boxes", "truss"] = "lebesgue"
    boxes: List[BoxSpec] = Field(default_factory=list)
    bars: List[BarSpec] = Field(default_factory=list)
    normalize: bool = True


class TrussSpec(BaseModel):
    radius_cells: float = Field(1.5, description="Ground-structure radius in cell sizes", ge=1.0)


class MKSpec(BaseModel):
    gauge: Literal["relaxed", "original"] = "relaxed"
    check_every: int = Field(50, ge=1)
    cross_tol: float = Field(0.05, gt=0)


class ComplianceSpec(BaseModel):
    kind: Literal["c", "E"] = "E"
    k: Optional[int] = Field(None, ge=0, le=3)


class SweepSpec(BaseModel):
    eps: List[float] = Field(..., min_length=1)
    target: MeasureSpec


class SeppecherSpec(BaseModel):
    eps: List[float] = Field(default_factory=lambda: [1 / 8, 1 / 16, 1 / 32], min_length=1)
    resolution: int = Field(96, ge=2, description="Cells per period")
    periods: int = Field(2, ge=1)


class AtomSpec(BaseModel):
    weight: float = Field(..., gt=0)
    tensor: List[List[float]]


class YoungSpec(BaseModel):
    atoms: List[AtomSpec] = Field(..., min_length=1)


class Conj3Spec(BaseModel):
    nu0: YoungSpec
    kernels: List[YoungSpec]


class GapSpec(BaseModel):
    eps: List[float] = Field(..., min_length=1)
    exchange_rounds: int = Field(4, ge=0)


class IntegrandTableSpec(BaseModel):
    eigenvalues: List[List[float]] = Field(default_factory=lambda: [[2.0, 1.0]])
    gauge: Literal["relaxed", "original"] = "relaxed"


class ProblemSpec(BaseModel):
    """Contents of a problem file"""
    model_config = ConfigDict(extra='forbid')

    name: str = "problem"
    law: LawSpec
    domain: Optional[DomainSpec] = None
    clamp: List[BoxSpec] = Field(default_factory=list)
    loads: List[LoadSpec] = Field(default_factory=list)
    measure: MeasureSpec = Field(default_factory=MeasureSpec)
    truss: TrussSpec = Field(default_factory=TrussSpec)
    mk: MKSpec = Field(default_factory=MKSpec)
    compliance: ComplianceSpec = Field(default_factory=ComplianceSpec)
    sweep: Optional[SweepSpec] = None
    seppecher: SeppecherSpec = Field(default_factory=SeppecherSpec)
    conj2: Optional[YoungSpec] = None
    conj3: Optional[Conj3Spec] = None
    gap: Optional[GapSpec] = None
    integrand_table: IntegrandTableSpec = Field(default_factory=IntegrandTableSpec)

    @model_validator(mode='after')
    def _consistent(self) -> 'ProblemSpec':
        if self.domain is not None and len(self.domain.lengths) != self.law.dim:
            raise ValueError(f"domain has {len(self.domain.lengths)} axes but the law is {self.law.dim}-dimensional")
        return self


class RunConfig(BaseModel):
    """Fully resolved run; echoed into the manifest"""
    model_config = ConfigDict(frozen=True)

    command: Literal["integrand-table", "compliance", "solve-mk", "gamma-sweep", "probe"]
    problem_path: Optional[str] = None
    problem: ProblemSpec
    out_dir: str = settings.OUTPUT_DIR
    tol: Optional[float] = Field(None, gt=0)
    resolution: Optional[int] = Field(None, ge=1)
    seed: int = settings.SEED
    workers: int = Field(settings.WORKERS, ge=1)
    method: Literal["grid", "truss"] = "grid"
    scalar: bool = False
    probe: Optional[Literal["seppecher", "conj2", "conj3", "gap"]] = None
    artifact_version: str = settings.APP_VERSION


def load_problem(path: str) -> ProblemSpec:
    try:
        raw = json.loads(Path(path).read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise ConfigError(f"problem file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"problem file is not valid JSON: {exc}", {"path": path}) from exc
    return parse_problem(raw, path)


def parse_problem(raw: Any, source: str = "<dict>") -> ProblemSpec:
    try:
        return ProblemSpec.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid problem in {source}",
                          {"errors": json.loads(exc.json(include_url=False))}) from exc


# === Builders ===


def build_law(problem: ProblemSpec) -> ElasticLaw:
    try:
        return problem.law.build()
    except ValidationError as exc:
        raise ConfigError("invalid law", {"errors": json.loads(exc.json(include_url=False))}) from exc


def build_domain(problem: ProblemSpec, resolution: Optional[int] = None, scalar: Optional[bool] = None) -> DiscreteDomain:
    if problem.domain is None:
        raise ConfigError("this command needs a 'domain' block in the problem file")
    spec = problem.domain
    res = resolution or spec.resolution
    cells = [max(1, int(round(length * res))) for length in spec.lengths]
    is_scalar = spec.scalar if scalar is None else (scalar or spec.scalar)
    loads = []
    for load in problem.loads:
        force = load.force
        if is_scalar and len(force) != 1:
            raise ConfigError("scalar mode needs one-component loads")
        if not is_scalar and len(force) != len(spec.lengths):
            raise ConfigError(f"load at {load.point} has {len(force)} components, expected {len(spec.lengths)}")
        loads.append((load.point, force))
    dom = DiscreteDomain.box(len(spec.lengths), cells, spec.lengths, origin=spec.origin,
                             omega=spec.omega, clamp=problem.clamp, point_loads=loads, scalar=is_scalar)
    dom.check_posed()
    return dom


def build_measure(spec: MeasureSpec, dom: DiscreteDomain) -> DensityMeasure:
    if spec.kind == "lebesgue":
        return DensityMeasure.lebesgue(dom)
    if spec.kind == "boxes":
        if not spec.boxes:
            raise ConfigError("measure kind 'boxes' needs at least one box")
        mask = np.zeros(dom.n_cells, dtype=bool)
        for lo, hi in spec.boxes:
            mask |= dom.cells_in_box(lo, hi)
        measure = DensityMeasure.on(dom, mask.astype(float))
    else:
        if not spec.bars:
            raise ConfigError("measure kind 'truss' needs at least one bar")
        ends = np.array([[dom.node_index(b.start), dom.node_index(b.end)] for b in spec.bars], dtype=int)
        lengths = np.linalg.norm(dom.node_coords[ends[:, 1]] - dom.node_coords[ends[:, 0]], axis=1)
        if np.any(lengths <= 0):
            raise ConfigError("truss bars need distinct end nodes")
        measure = DensityMeasure(np.zeros(dom.n_cells), bars=ends,
                                 bar_density=np.array([b.density for b in spec.bars]),
                                 cell_volume=dom.cell_volume, bar_lengths=lengths)
    if measure.total_mass <= 0:
        raise ConfigError("measure has zero mass")
    return measure.normalize() if spec.normalize else measure


def young_from_spec(spec: YoungSpec) -> DiscreteYoungMeasure:
    return DiscreteYoungMeasure.from_atoms([(a.weight, a.tensor) for a in spec.atoms])


def resolved_dict(config: RunConfig) -> Dict[str, Any]:
    return json.loads(config.model_dump_json())
