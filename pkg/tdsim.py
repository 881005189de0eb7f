"""
1D staggered time-domain solver for the assembled block systems.

Fields are E_z on integer nodes x_i = i dx (i = 0..N, E = 0 at both walls)
and H_y on half nodes (i + 1/2) dx. In 1D the curl pair reduces to

    E row:  eps_inf dt E + ... - dx H = f
    H row:  mu dt H + ... - dx E = 0

Each half step solves the per-node block ODE of its group (E-aligned or
H-aligned rows of M0, M1) with the trapezoidal rule, driven by the discrete
derivative of the other group's field:

    (M0/dt + M1/2) x_new = (M0/dt - M1/2) x_old + e_drive * (derivative + source)

E-group blocks advance n -> n+1 with H at n+1/2; H-group blocks advance
n+1/2 -> n+3/2 with E at n+1. With M1 = 0 this is the Yee scheme.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg, stats

from blocksys import Alignment, BlockSystem, SpatialTag, Variant, assemble
from matlaw import DispersionParams, PmlStretch, StretchKind, vacuum
from utils import DispmlError

LOGGER = logging.getLogger(__name__)

PROBE_OFFSET_CELLS = 10
SOURCE_CUTOFF_WIDTHS = 6.0


class CflViolation(DispmlError):
    """Time step exceeds the stability limit of the staggered scheme"""


class NonFiniteField(DispmlError):
    def __init__(self, step: int):
        super().__init__(f"non-finite field values after step {step}")
        self.step = step


class NonPositiveValues(DispmlError):
    """Decay fit needs strictly positive samples"""


class WindowTooLong(DispmlError):
    """Wall returns in the reference run reach the probe inside the window"""


class AlphaGrading(str, Enum):
    CONSTANT = "constant"
    LINEAR = "linear"


class SourceKind(str, Enum):
    NONE = "none"
    PULSE = "pulse"
    CW = "cw"
    SAMPLES = "samples"


def sigma_max_for_reflection(reflection_db: float, thickness: int, dx: float, m: int = 3,
                             eps_inf: float = 1.0, mu: float = 1.0) -> float:
    """sigma_max whose normal-incidence round trip through the graded layer is reflection_db."""
    if thickness <= 0:
        return 0.0
    reflection = 10.0 ** (reflection_db / 20.0)
    depth = thickness * dx
    return -math.log(reflection) * (m + 1) / (2.0 * depth * math.sqrt(eps_inf * mu))


class PmlProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: StretchKind = StretchKind.NONE
    thickness: int = Field(default=0, ge=0)
    sigma_max: Optional[float] = Field(default=None, ge=0)
    alpha_max: float = Field(default=0.0, ge=0)
    grading_exponent: int = Field(default=3, ge=1)
    alpha_grading: AlphaGrading = AlphaGrading.LINEAR
    target_reflection_db: float = Field(default=-80.0, lt=0)

    def resolved_sigma_max(self, dx: float, eps_inf: float, mu: float) -> float:
        if self.kind == StretchKind.NONE or self.thickness == 0:
            return 0.0
        if self.sigma_max is not None:
            return self.sigma_max
        return sigma_max_for_reflection(self.target_reflection_db, self.thickness, dx,
                                        self.grading_exponent, eps_inf, mu)

    def values(self, depth: np.ndarray, sigma_max: float) -> Tuple[np.ndarray, np.ndarray]:
        """(sigma, alpha) at depths measured in cells from the interface."""
        if self.kind == StretchKind.NONE or self.thickness == 0:
            return np.zeros_like(depth), np.zeros_like(depth)
        rel = np.clip(depth / self.thickness, 0.0, 1.0)
        sigma = sigma_max * rel ** self.grading_exponent
        if self.alpha_grading == AlphaGrading.LINEAR:
            alpha = self.alpha_max * (1.0 - rel)
        else:
            alpha = np.full_like(rel, self.alpha_max)
        alpha = np.where(depth > 0, alpha, 0.0)
        return sigma, alpha


class Grid1D(BaseModel):
    """Staggered grid; the physical region is [phys_origin, phys_origin + phys_cells] in nodes."""
    model_config = ConfigDict(frozen=True)

    n_cells: int = Field(ge=2)
    dx: float = Field(gt=0)
    pml: PmlProfile = PmlProfile()
    phys_origin: Optional[int] = Field(default=None, ge=0)
    phys_cells: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _physical_region_clear_of_layers(self):
        start, stop = self.phys_range
        if stop - start < 1:
            raise ValueError("physical region is empty")
        if start < self.pml.thickness or stop > self.n_cells - self.pml.thickness:
            raise ValueError("physical region overlaps the PML layers")
        return self

    @property
    def phys_range(self) -> Tuple[int, int]:
        start = self.pml.thickness if self.phys_origin is None else self.phys_origin
        cells = self.phys_cells if self.phys_cells is not None else self.n_cells - 2 * self.pml.thickness
        return start, start + cells

    @property
    def n_phys(self) -> int:
        start, stop = self.phys_range
        return stop - start

    def e_positions(self) -> np.ndarray:
        """Physical coordinates of the E nodes."""
        return (np.arange(self.n_cells + 1) - self.phys_range[0]) * self.dx

    def h_positions(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5 - self.phys_range[0]) * self.dx

    def node_of(self, x: float) -> int:
        index = self.phys_range[0] + int(round(x / self.dx))
        if not 0 < index < self.n_cells:
            raise ValueError(f"position {x} falls outside the interior nodes")
        return index

    def layer_depth(self, node_positions: np.ndarray) -> np.ndarray:
        """Depth in cells into the PML for nodes at fractional indices."""
        left = self.pml.thickness - node_positions
        right = node_positions - (self.n_cells - self.pml.thickness)
        return np.maximum(np.maximum(left, right), 0.0)


class SourceSpec(BaseModel):
    """Additive current on the E row.

    pulse: amplitude * exp(-((t - t0)/tau)^2) * sin(2 pi f0 (t - t0)), a plain
    Gaussian when f0 = 0. cw: amplitude * sin(2 pi f0 t) with a raised-cosine
    ramp. samples: one value per step. A point source carries 1/dx at its node.
    """
    model_config = ConfigDict(frozen=True)

    kind: SourceKind = SourceKind.NONE
    amplitude: float = 1.0
    position: float = 0.0
    t0: float = Field(default=0.0, ge=0)
    tau: float = Field(default=1.0, gt=0)
    f0: float = Field(default=0.0, ge=0)
    ramp: float = Field(default=0.0, ge=0)
    samples: Tuple[float, ...] = ()
    spatial_width: Optional[float] = Field(default=None, gt=0)

    def time_profile(self, t: float) -> float:
        if t <= 0.0 or self.kind in (SourceKind.NONE, SourceKind.SAMPLES):
            return 0.0
        if self.kind == SourceKind.PULSE:
            shift = t - self.t0
            envelope = math.exp(-(shift / self.tau) ** 2)
            carrier = math.sin(2.0 * math.pi * self.f0 * shift) if self.f0 > 0 else 1.0
            return self.amplitude * envelope * carrier
        ramp = 1.0
        if self.ramp > 0 and t < self.ramp:
            ramp = 0.5 * (1.0 - math.cos(math.pi * t / self.ramp))
        return self.amplitude * ramp * math.sin(2.0 * math.pi * self.f0 * t)

    def footprint(self, grid: Grid1D) -> np.ndarray:
        shape = np.zeros(grid.n_cells + 1)
        if self.kind == SourceKind.NONE:
            return shape
        if self.spatial_width is None:
            shape[grid.node_of(self.position)] = 1.0 / grid.dx
            return shape
        offset = (grid.e_positions() - self.position) / self.spatial_width
        shape = np.where(np.abs(offset) <= SOURCE_CUTOFF_WIDTHS, np.exp(-offset ** 2), 0.0)
        shape[0] = shape[-1] = 0.0
        return shape


DIAGNOSTICS = ("energy", "energy_phys", "state_energy", "field_norm_sq", "probes")


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: Variant = Variant.DISPERSION
    params: DispersionParams = vacuum()
    grid: Grid1D
    dt: Optional[float] = Field(default=None, gt=0)
    n_steps: int = Field(default=0, ge=0)
    source: SourceSpec = SourceSpec()
    record: Tuple[str, ...] = ("energy",)
    record_stride: int = Field(default=1, ge=1)
    probes: Tuple[float, ...] = ()
    cfl_safety: float = Field(default=0.9, gt=0, le=1)
    uniform_stretch: Optional[PmlStretch] = None

    @model_validator(mode="after")
    def _stretch_fits_variant(self):
        unknown = set(self.record) - set(DIAGNOSTICS)
        if unknown:
            raise ValueError(f"unknown diagnostics {sorted(unknown)}")
        kinds = {self.grid.pml.kind}
        if self.uniform_stretch is not None:
            kinds.add(self.uniform_stretch.kind)
        kinds.discard(StretchKind.NONE)
        allowed = {
            Variant.DISPERSION: set(),
            Variant.CFS_VACUUM: {StretchKind.CFS},
            Variant.DISPERSION_CFS: {StretchKind.CFS},
            Variant.DISPERSION_UPML: {StretchKind.UNIAXIAL},
        }[self.variant]
        if not kinds <= allowed:
            raise ValueError(f"stretch kinds {sorted(k.value for k in kinds)} do not fit variant {self.variant.value}")
        if self.source.kind == SourceKind.SAMPLES and not self.source.samples:
            raise ValueError("samples source needs at least one sample")
        return self

    @property
    def cfl_limit(self) -> float:
        return self.grid.dx * math.sqrt(min(self.params.eps_inf, self.params.mu, 1.0))

    def resolved_dt(self) -> float:
        return self.dt if self.dt is not None else self.cfl_safety * self.cfl_limit

    @property
    def stretch_kind(self) -> StretchKind:
        return {
            Variant.DISPERSION: StretchKind.NONE,
            Variant.CFS_VACUUM: StretchKind.CFS,
            Variant.DISPERSION_CFS: StretchKind.CFS,
            Variant.DISPERSION_UPML: StretchKind.UNIAXIAL,
        }[self.variant]


@dataclass
class FieldState:
    """E-group blocks on E nodes, H-group blocks on H nodes; h_prev is one half step older."""
    e_group: np.ndarray
    h_group: np.ndarray
    h_prev: np.ndarray
    step: int = 0
    time: float = 0.0
    labels_e: Tuple[str, ...] = ()
    labels_h: Tuple[str, ...] = ()

    @property
    def E(self) -> np.ndarray:
        return self.e_group[:, 0]

    @property
    def H(self) -> np.ndarray:
        return self.h_group[:, 0]

    @property
    def fields(self) -> Dict[str, np.ndarray]:
        out = {label: self.e_group[:, k] for k, label in enumerate(self.labels_e)}
        out.update({label: self.h_group[:, k] for k, label in enumerate(self.labels_h)})
        return out

    def copy(self) -> "FieldState":
        return FieldState(self.e_group.copy(), self.h_group.copy(), self.h_prev.copy(),
                          self.step, self.time, self.labels_e, self.labels_h)


@dataclass
class TimeSeries:
    times: np.ndarray
    columns: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def names(self) -> List[str]:
        return list(self.columns)

    def window(self, t_start: float, t_end: float) -> "TimeSeries":
        mask = (self.times >= t_start) & (self.times <= t_end)
        return TimeSeries(self.times[mask], {k: v[mask] for k, v in self.columns.items()})

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"time": self.times})
        for name, values in self.columns.items():
            frame[name] = values
        return frame


@dataclass
class RunResult:
    state: FieldState
    series: TimeSeries
    history: Dict[str, np.ndarray] = field(default_factory=dict)
    dt: float = 0.0


def _group_matrices(system: BlockSystem, rows: List[int], dt: float, drive_row: int):
    M0 = system.M0[np.ix_(rows, rows)]
    M1 = system.M1[np.ix_(rows, rows)]
    lhs = M0 / dt + 0.5 * M1
    update = linalg.solve(lhs, M0 / dt - 0.5 * M1)
    drive = linalg.solve(lhs, np.eye(len(rows))[:, drive_row])
    return update, drive


class Simulator:
    """Precomputed per-node update operators for one SimConfig."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.grid = cfg.grid
        self.dt = cfg.resolved_dt()
        if self.dt > cfg.cfl_safety * cfg.cfl_limit * (1.0 + 1e-12):
            raise CflViolation(f"dt = {self.dt:g} exceeds {cfg.cfl_safety:g} x CFL limit {cfg.cfl_limit:g}")

        kind = cfg.stretch_kind
        self.template = assemble(cfg.variant, cfg.params, PmlStretch(kind=kind), SpatialTag.DX_1D)
        layout = self.template.layout
        self.e_rows = layout.rows_with(Alignment.ELECTRIC)
        self.h_rows = layout.rows_with(Alignment.MAGNETIC)
        labels = layout.labels()
        self.labels_e = tuple(labels[i] for i in self.e_rows)
        self.labels_h = tuple(labels[i] for i in self.h_rows)
        self.m0_e = np.diag(self.template.M0)[self.e_rows]
        self.m0_h = np.diag(self.template.M0)[self.h_rows]

        n = self.grid.n_cells
        sigma_max = self.grid.pml.resolved_sigma_max(self.grid.dx, cfg.params.eps_inf, cfg.params.mu)
        self.sigma_e, self.alpha_e = self._profile(np.arange(n + 1, dtype=float), sigma_max)
        self.sigma_h, self.alpha_h = self._profile(np.arange(n, dtype=float) + 0.5, sigma_max)

        cache: Dict[Tuple[float, float], Tuple] = {}
        self.e_update, self.e_drive = self._operators(self.sigma_e, self.alpha_e, self.e_rows, cache, "E")
        self.h_update, self.h_drive = self._operators(self.sigma_h, self.alpha_h, self.h_rows, cache, "H")
        self.source_shape = cfg.source.footprint(self.grid)
        self.probe_nodes = [self.grid.node_of(x) for x in cfg.probes]

        LOGGER.info("Simulator %s: %d cells, dx = %g, dt = %g (CFL %.3f), sigma_max = %g, %d steps",
                    cfg.variant.value, n, self.grid.dx, self.dt, self.dt / cfg.cfl_limit, sigma_max, cfg.n_steps)
        if cfg.source.kind != SourceKind.NONE:
            LOGGER.info("Source %s at x = %g (amplitude %g)", cfg.source.kind.value,
                        cfg.source.position, cfg.source.amplitude)

    def _profile(self, node_positions: np.ndarray, sigma_max: float) -> Tuple[np.ndarray, np.ndarray]:
        sigma, alpha = self.grid.pml.values(self.grid.layer_depth(node_positions), sigma_max)
        uniform = self.cfg.uniform_stretch
        if uniform is not None:
            sigma = sigma + uniform.sigma
            alpha = alpha + uniform.effective_alpha
        return sigma, alpha

    def _operators(self, sigmas, alphas, rows, cache, name):
        k = len(rows)
        updates = np.empty((len(sigmas), k, k))
        drives = np.empty((len(sigmas), k))
        drive_row = rows.index(self.template.layout.index(name))
        for i, (sigma, alpha) in enumerate(zip(sigmas, alphas)):
            key = (float(sigma), float(alpha), name)
            if key not in cache:
                stretch = PmlStretch(kind=self.cfg.stretch_kind, sigma=sigma, alpha=alpha)
                system = assemble(self.cfg.variant, self.cfg.params, stretch, SpatialTag.DX_1D)
                cross = system.M1[np.ix_(self.e_rows, self.h_rows)]
                if np.any(cross != 0):
                    raise DispmlError("E-aligned and H-aligned blocks must not couple through M1")
                cache[key] = _group_matrices(system, rows, self.dt, drive_row)
            updates[i], drives[i] = cache[key]
        return updates, drives

    def initial_state(self) -> FieldState:
        n = self.grid.n_cells
        h = np.zeros((n, len(self.h_rows)))
        return FieldState(np.zeros((n + 1, len(self.e_rows))), h, h.copy(), 0, 0.0,
                          self.labels_e, self.labels_h)

    def source_value(self, step: int) -> float:
        spec = self.cfg.source
        if spec.kind == SourceKind.SAMPLES:
            return spec.amplitude * spec.samples[step] if step < len(spec.samples) else 0.0
        return spec.time_profile((step + 0.5) * self.dt)

    def step(self, state: FieldState, forcing_row: Optional[np.ndarray] = None) -> FieldState:
        dx = self.grid.dx
        H = state.h_group[:, 0]
        drive = np.zeros(self.grid.n_cells + 1)
        drive[1:-1] = (H[1:] - H[:-1]) / dx
        drive += self.source_shape * self.source_value(state.step)
        if forcing_row is not None:
            drive += forcing_row
        drive[0] = drive[-1] = 0.0

        e_new = np.einsum("nij,nj->ni", self.e_update, state.e_group) + self.e_drive * drive[:, None]
        e_new[0, 0] = e_new[-1, 0] = 0.0
        curl_e = (e_new[1:, 0] - e_new[:-1, 0]) / dx
        h_new = np.einsum("nij,nj->ni", self.h_update, state.h_group) + self.h_drive * curl_e[:, None]

        if not (np.all(np.isfinite(e_new)) and np.all(np.isfinite(h_new))):
            raise NonFiniteField(state.step + 1)
        return FieldState(e_new, h_new, state.h_group, state.step + 1, (state.step + 1) * self.dt,
                          self.labels_e, self.labels_h)

    def energy(self, state: FieldState, region: str = "all") -> Tuple[float, float]:
        """Observable field energy and full state energy, both in leapfrog product form."""
        start, stop = (0, self.grid.n_cells) if region == "all" else self.grid.phys_range
        dx = self.grid.dx
        e = state.e_group[start:stop + 1]
        h, h_prev = state.h_group[start:stop], state.h_prev[start:stop]
        observable = 0.5 * dx * (self.cfg.params.eps_inf * np.sum(e[:, 0] ** 2)
                                 + self.cfg.params.mu * np.sum(h[:, 0] * h_prev[:, 0]))
        full = 0.5 * dx * (np.sum(self.m0_e * e ** 2) + np.sum(self.m0_h * h * h_prev))
        return float(observable), float(full)

    def _diagnostics(self, state: FieldState) -> Dict[str, float]:
        out = {}
        record = self.cfg.record
        if "energy" in record or "state_energy" in record:
            observable, full = self.energy(state)
            if "energy" in record:
                out["energy"] = observable
            if "state_energy" in record:
                out["state_energy"] = full
        if "energy_phys" in record:
            out["energy_phys"] = self.energy(state, region="physical")[0]
        if "field_norm_sq" in record:
            out["field_norm_sq"] = float(self.grid.dx * (np.sum(state.E ** 2) + np.sum(state.H ** 2)))
        for x, node in zip(self.cfg.probes, self.probe_nodes):
            out[f"E@{x:g}"] = float(state.E[node])
        return out

    def run(self, forcing: Optional[np.ndarray] = None, keep_history: bool = False,
            state: Optional[FieldState] = None) -> RunResult:
        cfg = self.cfg
        if forcing is not None:
            forcing = np.asarray(forcing, dtype=float)
            if forcing.shape != (cfg.n_steps, self.grid.n_cells + 1):
                raise ValueError(f"forcing must be shaped ({cfg.n_steps}, {self.grid.n_cells + 1})")
        state = state or self.initial_state()
        times, rows = [state.time], [self._diagnostics(state)]
        e_hist, h_hist = [], []
        if keep_history:
            e_hist.append(state.E.copy())
            h_hist.append(state.H.copy())

        for n in range(cfg.n_steps):
            state = self.step(state, None if forcing is None else forcing[n])
            if keep_history:
                e_hist.append(state.E.copy())
                h_hist.append(state.H.copy())
            if state.step % cfg.record_stride == 0:
                times.append(state.time)
                rows.append(self._diagnostics(state))

        columns = {name: np.array([row[name] for row in rows]) for name in rows[0]}
        history = {"E": np.array(e_hist), "H": np.array(h_hist)} if keep_history else {}
        return RunResult(state, TimeSeries(np.array(times), columns), history, self.dt)


def step(state: FieldState, cfg: SimConfig) -> FieldState:
    """One step; builds the update operators, so loops should hold a Simulator."""
    return Simulator(cfg).step(state)


def run(cfg: SimConfig, forcing: Optional[np.ndarray] = None, keep_history: bool = False) -> RunResult:
    return Simulator(cfg).run(forcing=forcing, keep_history=keep_history)


def energy(state: FieldState, cfg: SimConfig, region: str = "all") -> Tuple[float, float]:
    return Simulator(cfg).energy(state, region)


def field_snapshot(state: FieldState, grid: Grid1D) -> pd.DataFrame:
    """Long-format table of every block: block, node, x, value."""
    frames = []
    for k, label in enumerate(state.labels_e):
        frames.append(pd.DataFrame({"block": label, "node": np.arange(grid.n_cells + 1),
                                    "x": grid.e_positions(), "value": state.e_group[:, k]}))
    for k, label in enumerate(state.labels_h):
        frames.append(pd.DataFrame({"block": label, "node": np.arange(grid.n_cells),
                                    "x": grid.h_positions(), "value": state.h_group[:, k]}))
    return pd.concat(frames, ignore_index=True)


def fit_decay_rate(series: TimeSeries, name: str = "energy", window: Optional[Tuple[float, float]] = None,
                   quantity: str = "energy") -> Tuple[float, float]:
    """Least-squares slope of log(values); energy rates are halved to the field convention."""
    if window is not None:
        series = series.window(*window)
    values = series[name]
    if values.size < 2:
        raise NonPositiveValues("decay fit needs at least two samples")
    if np.any(values <= 0):
        raise NonPositiveValues(f"{name} has non-positive samples in the fit window")
    fit = stats.linregress(series.times, np.log(values))
    rate = -fit.slope / 2.0 if quantity == "energy" else -fit.slope
    return float(rate), float(fit.rvalue ** 2)


# Reflection measurement

@dataclass
class ReflectionResult:
    reflection_db: float
    times: np.ndarray
    small_trace: np.ndarray
    reference_trace: np.ndarray
    probe_position: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time": self.times, "E_small": self.small_trace,
                             "E_reference": self.reference_trace})


def reference_config(cfg: SimConfig, factor: int = 4) -> SimConfig:
    """Same physical region centred in a hard-walled domain factor times larger."""
    if factor < 4:
        raise ValueError("reference domain must be at least 4x larger")
    n_phys = cfg.grid.n_phys
    n_ref = factor * cfg.grid.n_cells
    grid = Grid1D(n_cells=n_ref, dx=cfg.grid.dx, pml=PmlProfile(),
                  phys_origin=(n_ref - n_phys) // 2, phys_cells=n_phys)
    return cfg.model_copy(update={"variant": Variant.DISPERSION, "grid": grid, "uniform_stretch": None})


def _contamination_step(cfg: SimConfig, probe_node: int) -> int:
    """First step at which a wall return can reach the probe (one cell per step at most)."""
    shape = cfg.source.footprint(cfg.grid)
    support = np.nonzero(shape)[0]
    if support.size == 0:
        return np.iinfo(np.int64).max
    n = cfg.grid.n_cells
    return int(min(support[0] + probe_node, (n - support[-1]) + (n - probe_node)))


def run_reference_pair(cfg_small: SimConfig, cfg_reference: Optional[SimConfig] = None,
                       probe_offset: int = PROBE_OFFSET_CELLS) -> ReflectionResult:
    cfg_reference = cfg_reference or reference_config(cfg_small)
    x_probe = probe_offset * cfg_small.grid.dx
    small = cfg_small.model_copy(update={"probes": (x_probe,), "record": (), "record_stride": 1})
    ref = cfg_reference.model_copy(update={"probes": (x_probe,), "record": (), "record_stride": 1,
                                           "n_steps": cfg_small.n_steps, "dt": Simulator(small).dt})
    ref_sim = Simulator(ref)
    limit = _contamination_step(ref, ref_sim.probe_nodes[0])
    if ref.n_steps >= limit:
        raise WindowTooLong(f"reference walls reach the probe at step {limit}, window is {ref.n_steps} steps")

    name = f"E@{x_probe:g}"
    small_series = run(small).series
    ref_series = ref_sim.run().series
    e_small, e_ref = small_series[name], ref_series[name]
    peak = float(np.max(np.abs(e_ref)))
    if peak == 0.0:
        raise DispmlError("reference probe saw no signal")
    gap = float(np.max(np.abs(e_small - e_ref)))
    r_db = 20.0 * math.log10(max(gap, 1e-300) / peak)
    LOGGER.debug("Reflection window %d steps, peak %.3e, max gap %.3e", small.n_steps, peak, gap)
    LOGGER.info("Reflection coefficient %.2f dB at x = %g", r_db, x_probe)
    return ReflectionResult(r_db, small_series.times, e_small, e_ref, x_probe)


def reflection_coefficient(cfg_small: SimConfig, cfg_reference: Optional[SimConfig] = None,
                           probe_offset: int = PROBE_OFFSET_CELLS) -> float:
    return run_reference_pair(cfg_small, cfg_reference, probe_offset).reflection_db


def weighted_state_norm(result: RunResult, nu: float) -> float:
    """sqrt(sum dt exp(-2 nu t) field_norm_sq) over the recorded samples."""
    series = result.series
    spacing = series.times[1] - series.times[0] if series.times.size > 1 else result.dt
    weights = np.exp(-2.0 * nu * series.times) * spacing
    return float(math.sqrt(np.sum(weights * series["field_norm_sq"])))


def weighted_source_norm(forcing: np.ndarray, dx: float, dt: float, nu: float) -> float:
    times = (np.arange(forcing.shape[0]) + 0.5) * dt
    return float(math.sqrt(np.sum(np.exp(-2.0 * nu * times) * dt * dx * np.sum(forcing ** 2, axis=1))))


def decay_summary(result: RunResult, window: Tuple[float, float], name: str = "energy") -> Dict[str, float]:
    rate, r2 = fit_decay_rate(result.series, name, window)
    return {"decay_rate": rate, "r_squared": r2, "window_start": window[0], "window_end": window[1]}
