"""
Layered tool configuration.

Settings resolve in order: built-in defaults, the named scenario file under
scenarios/, the user's --config file (TOML, or JSON by suffix), then DISPML_*
environment variables (after an optional .env is loaded).
"""

import copy
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple, Union

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - same API, backport for older interpreters
    import tomli as tomllib

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from blocksys import InvalidVariantParams, Variant, assemble
from certify import EXCLUSION_RADIUS, TOL_GAMMA, Component
from matlaw import DispersionParams, PmlStretch, StretchKind
from nlsolve import (
    Kernel,
    Kernel2,
    NonlinearKind,
    NonlinearPolarization,
    box_kernel2,
    delta_kernel,
    exponential_kernel,
    load_kernel2_csv,
    load_kernel_csv,
    separable_kernel2,
)
from tdsim import DIAGNOSTICS, Grid1D, PmlProfile, SimConfig, SourceSpec
from utils import DispmlError, Expectation

LOGGER = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"

ENV_MAPPINGS = {
    "DISPML_OUT_DIR": ("output.out_dir", str),
    "DISPML_LOG_LEVEL": ("output.log_level", str),
    "DISPML_SEED": ("assemble.seed", int),
    "DISPML_TOL_GAMMA": ("certify.tol_gamma", float),
}

VALIDATED_SECTIONS = ("assemble", "simulate", "fixedpoint", "stretch")


class ConfigError(DispmlError):
    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = errors or []


class CertifySection(BaseModel):
    """Half-plane certificate settings; component None picks electric without a stretch, both with one."""
    model_config = ConfigDict(extra="forbid")

    component: Optional[Component] = None
    tol_gamma: float = Field(default=TOL_GAMMA, gt=0)
    exclusion_radius: float = Field(default=EXCLUSION_RADIUS, ge=0)
    nu_edge: Optional[float] = None
    t_count: int = Field(default=4097, ge=64)
    t_max: Optional[float] = Field(default=None, gt=0)
    block_variant: Optional[Variant] = None
    clause_checks: bool = False
    search_correction_radius: bool = False


class AssembleSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: Variant = Variant.DISPERSION
    seed: Optional[int] = 0
    sample_count: int = Field(default=100, ge=1)
    paper_literal_s3: bool = False


class SimulateSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: Variant = Variant.DISPERSION
    n_cells: int = Field(default=512, ge=2)
    dx: float = Field(default=1.0, gt=0)
    pml: PmlProfile = PmlProfile()
    dt: Optional[float] = Field(default=None, gt=0)
    n_steps: int = Field(default=1000, ge=0)
    source: SourceSpec = SourceSpec()
    record: Tuple[str, ...] = ("energy", "energy_phys", "state_energy")
    record_stride: int = Field(default=1, ge=1)
    probes: Tuple[float, ...] = ()
    cfl_safety: float = Field(default=0.9, gt=0, le=1)
    uniform_stretch: Optional[PmlStretch] = None
    decay_window: Optional[Tuple[float, float]] = None
    reflection: bool = False
    reference_factor: int = Field(default=4, ge=4)
    snapshot: bool = False

    @field_validator("record")
    @classmethod
    def _known_diagnostics(cls, value):
        unknown = set(value) - set(DIAGNOSTICS)
        if unknown:
            raise ValueError(f"unknown diagnostics {sorted(unknown)}")
        return value

    def to_sim_config(self, params: DispersionParams) -> SimConfig:
        grid = Grid1D(n_cells=self.n_cells, dx=self.dx, pml=self.pml)
        return SimConfig(variant=self.variant, params=params, grid=grid, dt=self.dt, n_steps=self.n_steps,
                         source=self.source, record=self.record, record_stride=self.record_stride,
                         probes=self.probes, cfl_safety=self.cfl_safety, uniform_stretch=self.uniform_stretch)


class KernelSpec(BaseModel):
    """Closed-form kernel or CSV samples; closed forms are sampled at the simulation dt."""
    model_config = ConfigDict(extra="forbid")

    shape: Literal["exponential", "delta", "box", "separable", "csv"] = "exponential"
    amplitude: float = 1.0
    theta: float = Field(default=1.0, gt=0)
    t_max: float = Field(default=5.0, gt=0)
    start: float = Field(default=0.0, ge=0)
    rate1: float = 1.0
    rate2: float = 1.0
    vanish_on_axes: bool = True
    path: Optional[str] = None

    @model_validator(mode="after")
    def _csv_needs_path(self):
        if self.shape == "csv" and not self.path:
            raise ValueError("csv kernels need a path")
        return self

    def build(self, dt: float) -> Kernel:
        if self.shape == "exponential":
            return exponential_kernel(dt, self.theta, self.t_max, self.amplitude)
        if self.shape == "delta":
            return Kernel(dt, self.amplitude * delta_kernel(dt).values)
        if self.shape == "csv":
            return load_kernel_csv(self.path)
        raise ValueError(f"kernel shape {self.shape} is two-argument only")

    def build2(self, dt: float) -> Kernel2:
        if self.shape == "box":
            return box_kernel2(dt, self.t_max, self.amplitude, start=max(self.start, dt))
        if self.shape == "separable":
            return separable_kernel2(dt, self.t_max, self.rate1, self.rate2, self.amplitude, self.vanish_on_axes)
        if self.shape == "csv":
            return load_kernel2_csv(self.path)
        raise ValueError(f"kernel shape {self.shape} has one argument only")


class FixedPointSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str = NonlinearKind.SATURABLE.value
    k: int = Field(default=3, ge=2)
    tau: float = Field(default=1.0, gt=0)
    c_q: float = 1.0
    cutoff_T: Optional[float] = Field(default=None, ge=0)
    kernel: KernelSpec = KernelSpec()
    nu: float = Field(default=1.0, gt=0)
    nu_compare: Optional[float] = Field(default=None, gt=0)
    max_iter: int = Field(default=50, ge=1)
    tol: float = Field(default=1e-8, gt=0)

    @field_validator("kind")
    @classmethod
    def _delayed_only(cls, value):
        if value == "instantaneous":
            raise ValueError("instantaneous (zero-delay) nonlinearities are not supported: the fixed-point "
                             "theory needs kernels supported away from zero delay")
        return NonlinearKind(value).value

    @model_validator(mode="after")
    def _quadratic_kernel_off_axes(self):
        if self.kind != NonlinearKind.QUADRATIC.value:
            return self
        if self.kernel.shape in ("exponential", "delta"):
            raise ValueError("quadratic polarization needs a two-argument kernel (box, separable or csv)")
        if self.kernel.shape == "separable" and not self.kernel.vanish_on_axes:
            raise ValueError("quadratic kernels must vanish on both axes (instantaneous response)")
        return self

    def build(self, dt: float) -> NonlinearPolarization:
        kind = NonlinearKind(self.kind)
        if kind == NonlinearKind.NONE:
            return NonlinearPolarization(kind)
        if kind == NonlinearKind.SATURABLE:
            return NonlinearPolarization(kind, k=self.k, tau=self.tau, kernel=self.kernel.build(dt))
        return NonlinearPolarization(kind, kernel2=self.kernel.build2(dt), cutoff_T=self.cutoff_T, c_q=self.c_q)


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_dir: str = "runs"
    log_level: str = "INFO"


class ToolConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: str = "custom"
    description: str = ""
    expect: Optional[Expectation] = None
    material: DispersionParams = DispersionParams()
    stretch: PmlStretch = PmlStretch()
    certify: CertifySection = CertifySection()
    assemble: AssembleSection = AssembleSection()
    simulate: SimulateSection = SimulateSection()
    fixedpoint: FixedPointSection = FixedPointSection()
    output: OutputSection = OutputSection()

    def certify_component(self) -> Component:
        if self.certify.component is not None:
            return self.certify.component
        return Component.BOTH if self.stretch.kind != StretchKind.NONE else Component.ELECTRIC


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            return json.loads(path.read_text(encoding="utf-8"))
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def list_scenarios(scenario_dir: Path = SCENARIO_DIR) -> List[str]:
    return sorted(p.stem for p in scenario_dir.glob("*.toml"))


class ConfigManager:
    """Resolves a ToolConfig from defaults, scenario, user file and environment."""

    def __init__(self, scenario_dir: Union[str, Path] = SCENARIO_DIR, dotenv_path: Optional[str] = None):
        self.scenario_dir = Path(scenario_dir)
        self.dotenv_path = dotenv_path
        self._config: Optional[ToolConfig] = None
        self._sources: List[str] = []

    def load_config(self, scenario: Optional[str] = None, config_path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> ToolConfig:
        load_dotenv(self.dotenv_path, override=False)
        config_dict: Dict[str, Any] = {}
        self._sources = ["defaults"]

        if scenario:
            scenario_file = self.scenario_dir / f"{scenario}.toml"
            if not scenario_file.exists():
                raise ConfigError(f"unknown scenario '{scenario}'; available: {', '.join(list_scenarios(self.scenario_dir))}")
            config_dict = self._deep_merge(config_dict, read_config_file(scenario_file))
            config_dict.setdefault("scenario", scenario)
            self._sources.append(str(scenario_file))

        if config_path:
            config_dict = self._deep_merge(config_dict, read_config_file(config_path))
            self._sources.append(str(config_path))

        config_dict = self._apply_env_overrides(config_dict)
        if overrides:
            for setting_path, value in overrides.items():
                self._set_nested_dict(config_dict, setting_path.split("."), value)

        try:
            self._config = ToolConfig.model_validate(config_dict)
        except ValidationError as exc:
            errors = [f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in exc.errors()]
            raise ConfigError(f"invalid configuration ({len(errors)} problems)", errors) from exc

        LOGGER.debug("Configuration resolved from %s", " -> ".join(self._sources))
        return self._config

    def get_config(self) -> ToolConfig:
        if self._config is None:
            return self.load_config()
        return self._config

    @property
    def sources(self) -> List[str]:
        return list(self._sources)

    def get_setting(self, setting_path: str, default: Any = None) -> Any:
        """Read a setting by dot path, e.g. 'certify.tol_gamma'."""
        current: Any = self.get_config().model_dump(mode="json")
        try:
            for part in setting_path.split("."):
                current = current[part]
            return current
        except (KeyError, TypeError):
            return default

    def update_setting(self, setting_path: str, value: Any) -> ToolConfig:
        config_dict = self.get_config().model_dump(mode="json")
        self._set_nested_dict(config_dict, setting_path.split("."), value)
        try:
            self._config = ToolConfig.model_validate(config_dict)
        except ValidationError as exc:
            raise ConfigError(f"invalid value for {setting_path}", [err["msg"] for err in exc.errors()]) from exc
        return self._config

    def validate_config(self, config: Optional[ToolConfig] = None,
                        sections: Iterable[str] = VALIDATED_SECTIONS) -> List[str]:
        """Cross-section checks the section models cannot see; empty when valid."""
        config = config or self.get_config()
        sections = set(sections)
        errors = []

        if "assemble" in sections:
            try:
                assemble(config.assemble.variant, config.material, self._assemble_stretch(config))
            except InvalidVariantParams as exc:
                errors.append(f"assemble: {exc}")

        sim_cfg = None
        if "simulate" in sections:
            try:
                sim_cfg = config.simulate.to_sim_config(config.material)
            except (ValidationError, ValueError) as exc:
                errors.append(f"simulate: {exc}")
        if sim_cfg is not None and config.simulate.dt is not None and config.simulate.dt > sim_cfg.cfl_limit:
            errors.append(f"simulate: dt {config.simulate.dt:g} exceeds the CFL limit {sim_cfg.cfl_limit:g}")

        kernel = config.fixedpoint.kernel
        if "fixedpoint" in sections and kernel.shape == "csv" and not Path(kernel.path).exists():
            errors.append(f"fixedpoint: kernel file not found: {kernel.path}")

        stretch = config.stretch
        if "stretch" in sections and stretch.kind == StretchKind.CFS and stretch.alpha == 0 and stretch.sigma > 0:
            errors.append("stretch: CFS with alpha = 0 puts a stretch pole at z = 0")
        return errors

    def export_config(self) -> str:
        return json.dumps(self.get_config().model_dump(mode="json"), indent=2, sort_keys=True)

    @staticmethod
    def _assemble_stretch(config: ToolConfig) -> PmlStretch:
        if config.assemble.variant == Variant.DISPERSION:
            return PmlStretch()
        return config.stretch

    def _deep_merge(self, base: Dict, override: Dict) -> Dict:
        result = copy.deepcopy(base)
        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._deep_merge(result[key], value)
            else:
                result[key] = copy.deepcopy(value)
        return result

    def _apply_env_overrides(self, config_dict: Dict) -> Dict:
        for env_var, (config_path, cast) in ENV_MAPPINGS.items():
            value = os.getenv(env_var)
            if value is None:
                continue
            try:
                value = cast(value)
            except ValueError as exc:
                raise ConfigError(f"{env_var}={value!r} is not a valid {cast.__name__}") from exc
            self._set_nested_dict(config_dict, config_path.split("."), value)
            self._sources.append(env_var)
        return config_dict

    @staticmethod
    def _set_nested_dict(dictionary: Dict, keys: List[str], value: Any):
        current = dictionary
        for key in keys[:-1]:
            if not isinstance(current.get(key), dict):
                current[key] = {}
            current = current[key]
        current[keys[-1]] = value
