"""Configuration documents (JSON) for scenario generation and estimation.

Every section has defaults, so ``{}`` is a valid config.  Unknown keys are
rejected; validation errors carry the dotted path to the offending field.
"""

import json
from pathlib import Path
from typing import List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .factors import NoiseModel
from .geometry.icp import IcpParams
from .geometry.shapes import GRASP_AXES
from .sim import ComplianceModel, ContactParams, PatchSpec, SimNoise, ViewSpec
from .solver import SolverParams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = errors
        super().__init__("; ".join(f"{e['path']}: {e['message']}" for e in errors))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PokeConfig(_Section):
    # rotation of the gripper about world x then world y, degrees
    tilt_deg: Tuple[float, float] = (15.0, 0.0)
    depth_m: float = Field(0.003, gt=0)


def _default_pokes():
    return [PokeConfig(tilt_deg=(15.0, a)) for a in (0.0, 30.0, -30.0)]


class TrajectoryConfig(_Section):
    position_xy: Tuple[float, float] = (0.0, 0.0)
    hover_clearance_m: float = Field(0.01, gt=0.001)
    pokes: List[PokeConfig] = Field(default_factory=_default_pokes)


class GraspConfig(_Section):
    yaw_range_deg: float = Field(60.0, ge=0, le=360)
    offset_range_m: float = Field(0.005, ge=0)
    flip: bool = True  # draw the grasp side among the object's grasp axes


class NoiseConfig(_Section):
    cloud_m: float = Field(5e-4, ge=0)
    delta_trans_m: float = Field(1e-4, ge=0)
    delta_rot_rad: float = Field(1e-3, ge=0)
    force_n: float = Field(0.1, ge=0)
    torque_nm: float = Field(0.01, ge=0)

    def to_sim(self):
        return SimNoise(self.cloud_m, self.delta_trans_m, self.delta_rot_rad, self.force_n, self.torque_nm)


class ComplianceConfig(_Section):
    translational_n_per_m: float = Field(2e3, gt=0)
    rotational_nm_per_rad: float = Field(20.0, gt=0)

    def to_model(self):
        return ComplianceModel((self.translational_n_per_m,) * 3, (self.rotational_nm_per_rad,) * 3)


class ContactConfig(_Section):
    k_pen: float = Field(1e4, gt=0)
    force_threshold_n: float = Field(0.05, gt=0)
    max_iters: int = Field(200, ge=1)
    tol_n: float = Field(1e-6, gt=0)

    def to_params(self):
        return ContactParams(self.k_pen, self.force_threshold_n, self.max_iters, self.tol_n)


class TactileConfig(_Section):
    patch_m: Tuple[float, float] = (0.024, 0.018)
    center_m: Tuple[float, float] = (0.0, 0.0)
    depth_m: float = Field(1e-3, gt=0)
    samples: int = Field(4000, ge=1)

    def to_spec(self):
        return PatchSpec(self.patch_m, self.center_m, self.depth_m, self.samples)


class VisualConfig(_Section):
    enabled: bool = True
    viewpoint: Tuple[float, float, float] = (0.4, -0.4, 0.3)
    samples: int = Field(1500, ge=1)

    def to_spec(self):
        return ViewSpec(self.viewpoint, self.samples) if self.enabled else None


class SamplesConfig(_Section):
    n: int = Field(500, ge=1)
    seed: int = 0


class NoiseModelConfig(_Section):
    sigma_h1: float = Field(0.002, gt=0)
    sigma_h2: float = Field(0.001, gt=0)
    sigma_h3: float = Field(0.001, gt=0)
    sigma_force: float = Field(0.3, gt=0)
    sigma_torque: float = Field(0.03, gt=0)
    detect_force: float = Field(0.1, gt=0)
    detect_torque: float = Field(0.01, gt=0)
    epsilon: float = Field(4.5, gt=0)

    def to_model(self):
        return NoiseModel(**self.model_dump())


class SolverConfig(_Section):
    max_iters: int = Field(100, ge=1)
    damping: float = Field(1e-4, gt=0)
    damping_up: float = Field(10.0, gt=1)
    damping_down: float = Field(0.1, gt=0, lt=1)
    rel_cost_tol: float = Field(1e-9, gt=0)
    step_tol: float = Field(1e-10, gt=0)
    max_damping: float = Field(1e8, gt=0)

    def to_params(self):
        return SolverParams(**self.model_dump())


class IcpConfig(_Section):
    max_iters: int = Field(50, ge=1)
    tol: float = Field(1e-9, gt=0)
    max_corr_dist: float = Field(0.05, gt=0)

    def to_params(self):
        return IcpParams(self.max_iters, self.tol, self.max_corr_dist)


class EstimatorConfig(_Section):
    particles: int = Field(8, ge=1)
    sweep_range_deg: float = Field(90.0, gt=0, le=360)
    sweep_center_deg: Optional[float] = None  # None: phase drawn from the scenario seed
    detect_contact: bool = False
    verbose: bool = False
    noise_model: NoiseModelConfig = NoiseModelConfig()
    solver: SolverConfig = SolverConfig()
    icp: IcpConfig = IcpConfig()


class ObjectConfig(_Section):
    name: str
    mesh: Optional[str] = None
    grasp_axes: Optional[List[Tuple[float, float, float]]] = None

    def resolved(self):
        mesh = self.mesh or f"builtin:{self.name}"
        axes = self.grasp_axes or GRASP_AXES.get(self.name, [[0.0, 1.0, 0.0]])
        return mesh, [list(map(float, a)) for a in axes]


class GenConfig(_Section):
    schema_: int = Field(SCHEMA_VERSION, alias="schema")
    count: int = Field(20, ge=1)
    seed: int = 0
    objects: List[Union[str, ObjectConfig]] = Field(default_factory=lambda: ["cube"])
    environment: str = "builtin:table"
    trajectory: TrajectoryConfig = TrajectoryConfig()
    grasp: GraspConfig = GraspConfig()
    noise: NoiseConfig = NoiseConfig()
    compliance: ComplianceConfig = ComplianceConfig()
    contact: ContactConfig = ContactConfig()
    tactile: TactileConfig = TactileConfig()
    visual: VisualConfig = VisualConfig()
    object_samples: SamplesConfig = SamplesConfig()
    estimator: EstimatorConfig = EstimatorConfig()

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @field_validator("schema_")
    @classmethod
    def _schema(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema {v}; expected {SCHEMA_VERSION}")
        return v

    def object_list(self):
        return [ObjectConfig(name=o) if isinstance(o, str) else o for o in self.objects]


def _errors(exc):
    out = []
    for e in exc.errors():
        path = ".".join(str(p) for p in e["loc"] if not (isinstance(p, str) and p.startswith("function-")))
        out.append({"path": path or "<root>", "message": e["msg"]})
    return out


def parse(model, data):
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_errors(exc)) from None


def load_config(path, model=GenConfig):
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([{"path": "<root>", "message": f"invalid JSON: {exc}"}]) from None
    return parse(model, data)
