"""Run configuration: schema, defaults, loading and hashing."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .association import AssocMode
from .geometry import CameraIntrinsics
from .optimizer import OptimizerConfig, ScalePrior
from .pipeline import MapperSettings
from .simulator import CategorySpec, NoiseSpec, OrbitSpec, ScenarioSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CategoryModel(_Strict):
    class_id: int = Field(ge=0)
    name: str
    mu0: tuple[float, float, float]
    sigma0: tuple[tuple[float, float, float], tuple[float, float, float], tuple[float, float, float]]
    eps1_range: tuple[float, float] = (0.1, 1.9)
    eps2_range: tuple[float, float] = (0.1, 1.9)

    @model_validator(mode="after")
    def _check(self):
        CategorySpec(**self.model_dump())  # SPD, positivity and range checks
        return self

    def spec(self) -> CategorySpec:
        return CategorySpec(**self.model_dump())

    def prior(self) -> ScalePrior:
        return ScalePrior(self.class_id, np.array(self.mu0), np.array(self.sigma0))


def _diag(*sd):
    return tuple(tuple(s * s if i == j else 0.0 for j in range(3)) for i, s in enumerate(sd))


DEFAULT_CATEGORIES = (
    CategoryModel(class_id=0, name="cabinet", mu0=(0.55, 0.35, 0.50), sigma0=_diag(0.05, 0.04, 0.05),
                  eps1_range=(0.1, 0.3), eps2_range=(0.1, 0.3)),
    CategoryModel(class_id=1, name="bin", mu0=(0.45, 0.35, 0.45), sigma0=_diag(0.04, 0.03, 0.04),
                  eps1_range=(0.1, 0.3), eps2_range=(0.9, 1.1)),
    CategoryModel(class_id=2, name="pouf", mu0=(0.50, 0.40, 0.35), sigma0=_diag(0.04, 0.04, 0.03),
                  eps1_range=(0.8, 1.2), eps2_range=(0.8, 1.2)),
)


class IntrinsicsModel(_Strict):
    fx: float = Field(500.0, gt=0)
    fy: float = Field(500.0, gt=0)
    cx: float = 320.0
    cy: float = 240.0
    width: int = Field(640, gt=0)
    height: int = Field(480, gt=0)

    def spec(self) -> CameraIntrinsics:
        return CameraIntrinsics(**self.model_dump())


class OrbitModel(_Strict):
    center: tuple[float, float, float] = (0.0, 0.0, 0.4)
    radius: float = Field(5.0, gt=0)
    height: float = 1.8
    frames: int = Field(30, ge=2)
    height_amplitude: float = 0.4
    height_cycles: int = 3


class NoiseModel(_Strict):
    corner_sigma: float = Field(float(np.sqrt(20.0)), ge=0)
    dropout: float = Field(0.0, ge=0, le=1)
    sv3d_center_sigma: float = Field(0.15, ge=0)
    sv3d_rotation_sigma_deg: float = Field(10.0, ge=0)
    sv3d_scale_sigma: float = Field(0.15, ge=0)
    score_range: tuple[float, float] = (0.6, 1.0)
    sv3d_object_scale_sigma: float = Field(0.0, ge=0)

    @field_validator("score_range")
    @classmethod
    def _range(cls, v):
        if not 0.0 <= v[0] <= v[1] <= 1.0:
            raise ValueError("score_range must satisfy 0 <= lo <= hi <= 1")
        return v


class ScenarioModel(_Strict):
    objects: dict[str, int] = Field(default_factory=lambda: {"cabinet": 1, "bin": 1, "pouf": 1})
    room: tuple[float, float, float, float] = (-2.0, 2.0, -2.0, 2.0)
    min_gap: float = Field(0.1, ge=0)
    orbit: OrbitModel = OrbitModel()
    intrinsics: IntrinsicsModel = IntrinsicsModel()
    noise: NoiseModel = NoiseModel()


class OptimizerModel(_Strict):
    sigma2: float = Field(20.0, gt=0)
    sample_count: int = Field(1000, ge=26)
    iters_per_round: int = Field(20, gt=0)
    obs_per_round: int = Field(50, gt=0)
    final_iters: int = Field(200, gt=0)
    lr_translation: float = Field(0.01, gt=0)
    lr_rotation: float = Field(0.005, gt=0)
    lr_alpha: float = Field(0.01, gt=0)
    lr_eps: float = Field(0.05, gt=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_epsilon: float = Field(1e-8, gt=0)
    prior_enabled: bool = True
    shape_mode: Literal["superquadric", "ellipsoid", "cuboid", "no_optimization"] = "superquadric"
    upright_only: bool = False

    def spec(self) -> OptimizerConfig:
        return OptimizerConfig(**self.model_dump())


class AssociationModel(_Strict):
    mode: AssocMode = "3d"
    gate_3d: float = Field(0.2, ge=0, le=1)
    gate_2d: float = Field(0.3, ge=0, le=1)
    spawn_threshold: float = Field(0.5, ge=0, le=1)
    k_min: int = Field(5, ge=1)

    @property
    def gate(self) -> float:
        return self.gate_3d if self.mode == "3d" else self.gate_2d


class EvaluationModel(_Strict):
    thresholds: tuple[float, float] = (0.25, 0.5)


class RunConfig(_Strict):
    seed: int = Field(ge=0, lt=2**64)
    categories: tuple[CategoryModel, ...] = DEFAULT_CATEGORIES
    scenario: ScenarioModel = ScenarioModel()
    optimizer: OptimizerModel = OptimizerModel()
    association: AssociationModel = AssociationModel()
    evaluation: EvaluationModel = EvaluationModel()

    @model_validator(mode="after")
    def _check_vocabulary(self):
        ids = [c.class_id for c in self.categories]
        names = [c.name for c in self.categories]
        if len(set(ids)) != len(ids) or len(set(names)) != len(names):
            raise ValueError("category ids and names must be unique")
        for name in self.scenario.objects:
            if name not in names:
                raise ValueError(f"scenario.objects references unknown category {name!r}")
        return self

    def class_names(self) -> dict[int, str]:
        return {c.class_id: c.name for c in self.categories}

    def priors(self) -> dict[int, ScalePrior]:
        return {c.class_id: c.prior() for c in self.categories}

    def scenario_spec(self) -> ScenarioSpec:
        sc = self.scenario
        by_name = {c.name: c.class_id for c in self.categories}
        n = sc.noise
        return ScenarioSpec(
            seed=self.seed,
            objects_per_category={by_name[k]: v for k, v in sc.objects.items()},
            room=sc.room, min_gap=sc.min_gap,
            orbit=OrbitSpec(**sc.orbit.model_dump()),
            intrinsics=sc.intrinsics.spec(),
            noise=NoiseSpec(**n.model_dump()),
            sample_count=self.optimizer.sample_count,
        )

    def config_hash(self) -> str:
        return config_hash(self)

    def mapper_settings(self) -> MapperSettings:
        a = self.association
        return MapperSettings(a.mode, a.gate, a.spawn_threshold, a.k_min)

    def with_overrides(self, **sections) -> RunConfig:
        """Copy with selected nested fields replaced, e.g. ``optimizer={"prior_enabled": False}``."""
        data = self.model_dump(mode="json")
        for key, value in sections.items():
            if isinstance(value, dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return RunConfig.model_validate(data)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class ConfigError(ValueError):
    """Schema violation with human-readable diagnostics."""

    def __init__(self, messages: list[str]):
        super().__init__("\n".join(messages))
        self.messages = messages


def _key_lines(text: str) -> dict[tuple, int]:
    """Map key paths of a YAML/JSON mapping document to 1-based line numbers."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    lines: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                lines[path + (i,)] = v.start_mark.line + 1
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return lines


def parse_config(text: str, source: str = "<config>", overrides: dict | None = None) -> RunConfig:
    """Validate a YAML/JSON config document; ``overrides`` replace top-level keys."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{source}: not valid YAML/JSON: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError([f"{source}: top level must be a mapping"])
    data.update(overrides or {})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = _key_lines(text)
        msgs = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            field = ".".join(str(p) for p in loc) or "<root>"
            line = None
            for k in range(len(loc), 0, -1):
                if loc[:k] in lines:
                    line = lines[loc[:k]]
                    break
            where = f"{source}:{line}" if line else source
            msgs.append(f"{where}: field '{field}': {err['msg']}")
        raise ConfigError(msgs) from exc


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    """Load a config file (YAML or JSON); ``None`` gives the defaults.

    ``seed`` overrides the file's seed; without a file it defaults to 0.
    """
    if path is None:
        return RunConfig(seed=0 if seed is None else seed)
    text = Path(path).read_text()
    return parse_config(text, str(path), {"seed": seed} if seed is not None else None)
