"""
Fixed-point solver for (dt M(dt) + A) u = f(u) + g with causal nonlocal
nonlinear polarizations.

The nonlinear term is moved to the right-hand side as a current,
f(u) = -dt P_nl(E), and every Picard step is one linear time-domain run:

    u^{m+1} = LinearSolve(g + f(u^m))

Two polarization classes are supported:

    saturable   P(t) = int K(s) q(E(t - s)) ds,  q(u) = |u|^(k-1) u / (1 + tau |u|^(k-1))
    quadratic   P(t) = C_q int int K(s1, s2) E(t - s1) E(t - s2) ds1 ds2,  t <= T

Kernels are sampled at multiples of the signal time step and integrated with
trapezoid weights. Zero-delay (instantaneous) responses are rejected.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy import integrate

from certify import Component, MaterialLaw, slope_bound
from tdsim import SimConfig, Simulator
from utils import DispmlError
from wspace import WeightedSignal, weighted_norm

LOGGER = logging.getLogger(__name__)

NO_CONTRACTION_STREAK = 5


class KernelResolutionMismatch(DispmlError):
    """Kernel and signal are sampled at different time steps"""


class InstantaneousNonlinearityError(DispmlError):
    """Zero-delay nonlinear responses are outside the fixed-point theory"""


class NoContraction(DispmlError):
    """Picard differences stopped shrinking"""


class MaxIter(DispmlError):
    """Picard iteration hit the iteration cap before reaching the tolerance"""


class NonlinearKind(str, Enum):
    NONE = "none"
    SATURABLE = "saturable"
    QUADRATIC = "quadratic"


def _trapezoid_weights(n: int) -> np.ndarray:
    weights = np.ones(n)
    if n > 1:
        weights[0] = weights[-1] = 0.5
    return weights


@dataclass(frozen=True, eq=False)
class Kernel:
    """Causal kernel sampled at t_j = j dt, j = 0..J-1."""
    dt: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("kernel samples must be a non-empty 1D array")
        object.__setattr__(self, "values", values)

    @property
    def weighted(self) -> np.ndarray:
        return _trapezoid_weights(self.values.size) * self.values


@dataclass(frozen=True, eq=False)
class Kernel2:
    """Two-argument kernel sampled on (i dt, j dt)."""
    dt: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("two-argument kernel must be a square 2D array")
        object.__setattr__(self, "values", values)

    @property
    def weighted(self) -> np.ndarray:
        w = _trapezoid_weights(self.values.shape[0])
        return np.outer(w, w) * self.values

    def touches_axes(self) -> bool:
        return bool(np.any(self.values[0, :] != 0) or np.any(self.values[:, 0] != 0))


@dataclass(eq=False)
class NonlinearPolarization:
    kind: NonlinearKind = NonlinearKind.NONE
    k: int = 3
    tau: float = 1.0
    kernel: Optional[Kernel] = None
    kernel2: Optional[Kernel2] = None
    cutoff_T: Optional[float] = None
    c_q: float = 1.0

    def __post_init__(self):
        self.kind = NonlinearKind(self.kind)
        if self.k < 2:
            raise ValueError("saturable power k must be at least 2")
        if self.tau <= 0:
            raise ValueError("saturation tau must be positive")
        if self.kind == NonlinearKind.SATURABLE and self.kernel is None:
            raise ValueError("saturable polarization needs a kernel")
        if self.kind == NonlinearKind.QUADRATIC:
            if self.kernel2 is None:
                raise ValueError("quadratic polarization needs a two-argument kernel")
            if self.kernel2.touches_axes():
                raise InstantaneousNonlinearityError(
                    "two-argument kernel must vanish on both axes (support inside (0, inf)^2)")
            if self.cutoff_T is not None and self.cutoff_T < 0:
                raise ValueError("cutoff_T must be non-negative")

    @property
    def dt(self) -> Optional[float]:
        source = self.kernel if self.kind == NonlinearKind.SATURABLE else self.kernel2
        return None if source is None else source.dt


@dataclass
class KernelConstants:
    L_K: float
    ell_K: float
    nu_K: float

    def to_dict(self) -> Dict[str, float]:
        return {"L_K": self.L_K, "ell_K": self.ell_K, "nu_K": self.nu_K}


# Kernels

def exponential_kernel(dt: float, theta: float, t_max: float, amplitude: float = 1.0) -> Kernel:
    """amplitude * exp(-t/theta) / theta; realizes p' = (amplitude q - p) / theta."""
    t = dt * np.arange(int(round(t_max / dt)) + 1)
    return Kernel(dt, amplitude * np.exp(-t / theta) / theta)


def delta_kernel(dt: float) -> Kernel:
    """Two-sample box of height 1/dt; integrates to one under trapezoid weights."""
    return Kernel(dt, np.array([1.0 / dt, 1.0 / dt]))


def box_kernel2(dt: float, t_max: float, value: float = 1.0, start: float = 0.0) -> Kernel2:
    n = int(round(t_max / dt)) + 1
    t = dt * np.arange(n)
    inside = t >= start - 1e-12 * dt
    return Kernel2(dt, value * np.outer(inside, inside).astype(float))


def separable_kernel2(dt: float, t_max: float, rate1: float = 1.0, rate2: float = 1.0,
                      amplitude: float = 1.0, vanish_on_axes: bool = False) -> Kernel2:
    t = dt * np.arange(int(round(t_max / dt)) + 1)
    values = amplitude * np.outer(np.exp(-rate1 * t), np.exp(-rate2 * t))
    if vanish_on_axes:
        values[0, :] = 0.0
        values[:, 0] = 0.0
    return Kernel2(dt, values)


def _uniform_spacing(taus: np.ndarray, path) -> float:
    steps = np.diff(taus)
    if steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError(f"{path}: kernel samples must be uniformly spaced")
    if abs(taus[0]) > 1e-12 * abs(steps[0]):
        raise ValueError(f"{path}: kernel samples must start at tau = 0")
    return float(steps[0])


def load_kernel_csv(path: Union[str, Path]) -> Kernel:
    """CSV with columns tau, value."""
    frame = pd.read_csv(path).sort_values("tau")
    return Kernel(_uniform_spacing(frame["tau"].to_numpy(), path), frame["value"].to_numpy())


def load_kernel2_csv(path: Union[str, Path]) -> Kernel2:
    """CSV with columns tau1, tau2, value on a full square grid."""
    frame = pd.read_csv(path)
    grid = frame.pivot(index="tau1", columns="tau2", values="value").sort_index().sort_index(axis=1)
    if grid.isna().to_numpy().any():
        raise ValueError(f"{path}: kernel grid has missing (tau1, tau2) pairs")
    dt = _uniform_spacing(grid.index.to_numpy(dtype=float), path)
    return Kernel2(dt, grid.to_numpy(dtype=float))


# Nonlinearities

def saturable_q(u, k: int = 3, tau: float = 1.0):
    u = np.asarray(u, dtype=float)
    power = np.abs(u) ** (k - 1)
    return power * u / (1.0 + tau * power)


def saturable_lipschitz(k: int = 3, tau: float = 1.0, samples: int = 200001) -> float:
    """sup of d/dx (x^k / (1 + tau x^(k-1))) over x >= 0, by dense sampling."""
    x_peak = (k / tau) ** (1.0 / (k - 1))
    x = np.concatenate([np.linspace(0.0, 4.0 * x_peak, samples), np.geomspace(4.0 * x_peak, 1e6 * x_peak, 2001)])
    power = x ** (k - 1)
    slope = power * (k + tau * power) / (1.0 + tau * power) ** 2
    return float(np.max(slope))


def _require_resolution(e: WeightedSignal, dt: float):
    if not math.isclose(e.dt, dt, rel_tol=1e-12):
        raise KernelResolutionMismatch(f"kernel dt {dt:g} differs from signal dt {e.dt:g}")


def _lagged(values: np.ndarray, depth: int) -> np.ndarray:
    """lagged[n, m, j] = values[n - j, m], zero before t = 0."""
    padded = np.concatenate([np.zeros((depth - 1, values.shape[1])), values], axis=0)
    windows = sliding_window_view(padded, depth, axis=0)
    return windows[..., ::-1]


def convolve_polarization(e: WeightedSignal, nl: NonlinearPolarization) -> WeightedSignal:
    """P_n = dt sum_j w_j K_j q(e_{n-j}) with trapezoid weights w over the kernel samples."""
    if nl.kind == NonlinearKind.NONE:
        return e.with_values(np.zeros_like(e.values))
    _require_resolution(e, nl.kernel.dt)
    q = saturable_q(e.values, nl.k, nl.tau)
    lagged = _lagged(q, nl.kernel.values.size)
    return e.with_values(e.dt * (lagged @ nl.kernel.weighted))


def quadratic_bilinear(e1: WeightedSignal, e2: WeightedSignal, nl: NonlinearPolarization,
                       cutoff_T: Optional[float] = None) -> WeightedSignal:
    """C_q dt^2 sum_ij w_i w_j K_ij e1(t - i dt) e2(t - j dt), kept for t <= cutoff_T."""
    _require_resolution(e1, nl.kernel2.dt)
    _require_resolution(e2, nl.kernel2.dt)
    depth = nl.kernel2.values.shape[0]
    first = _lagged(e1.values, depth)
    second = _lagged(e2.values, depth)
    values = nl.c_q * e1.dt ** 2 * np.sum((first @ nl.kernel2.weighted) * second, axis=-1)
    if cutoff_T is not None:
        values[e1.times > cutoff_T + 1e-12 * e1.dt] = 0.0
    return e1.with_values(values)


def quadratic_polarization(e: WeightedSignal, nl: NonlinearPolarization,
                           cutoff_T: Optional[float] = None) -> WeightedSignal:
    if cutoff_T is None:
        cutoff_T = nl.cutoff_T
    return quadratic_bilinear(e, e, nl, cutoff_T)


def polarization(e: WeightedSignal, nl: NonlinearPolarization) -> WeightedSignal:
    if nl.kind == NonlinearKind.QUADRATIC:
        return quadratic_polarization(e, nl)
    return convolve_polarization(e, nl)


def kernel_constants(source: Union[NonlinearPolarization, Kernel2], nu_K: float = 0.0) -> KernelConstants:
    """L_K (weighted integral of |K|) and ell_K (sup of weighted diagonal integrals)."""
    kernel = source.kernel2 if isinstance(source, NonlinearPolarization) else source
    if kernel is None:
        raise ValueError("kernel constants need a two-argument kernel")
    dt = kernel.dt
    n = kernel.values.shape[0]
    t = dt * np.arange(n)
    weighted = np.abs(kernel.values) * np.exp(-nu_K * (t[:, None] + t[None, :]))

    L_K = float(integrate.simpson(integrate.simpson(weighted, dx=dt, axis=1), dx=dt))
    ell_K = 0.0
    for offset in range(-(n - 1), n):
        diagonal = np.diagonal(weighted, offset=offset)
        if diagonal.size > 1:
            ell_K = max(ell_K, float(integrate.trapezoid(diagonal, dx=dt)))
    return KernelConstants(L_K, ell_K, nu_K)


def growth_bound(nl: NonlinearPolarization, constants: KernelConstants, nu: float, horizon: float) -> float:
    """sqrt(T) exp(nu T) C_q sqrt(L_K ell_K); multiplies (|u| + |v|) |u - v|."""
    return math.sqrt(horizon) * math.exp(nu * horizon) * abs(nl.c_q) * math.sqrt(constants.L_K * constants.ell_K)


def _difference_coefficients(weighted: np.ndarray) -> np.ndarray:
    """c_i = wK_i - wK_{i-1}, i = 0..J, from (P^{n+1} - P^n) / dt."""
    padded = np.concatenate([[0.0], weighted, [0.0]])
    return np.diff(padded)


def forcing_lipschitz(nl: NonlinearPolarization, dt: float, nu: float,
                      radius: Optional[float] = None, horizon: Optional[float] = None) -> float:
    """Lipschitz estimate of u -> -(P^{n+1} - P^n)/dt in the nu-weighted norm."""
    if nl.kind == NonlinearKind.NONE:
        return 0.0
    if nl.kind == NonlinearKind.SATURABLE:
        coefficients = _difference_coefficients(nl.kernel.weighted)
        delays = (np.arange(coefficients.size) - 1) * dt
        return saturable_lipschitz(nl.k, nl.tau) * float(np.sum(np.abs(coefficients) * np.exp(-nu * delays)))

    if radius is None or horizon is None:
        raise ValueError("quadratic forcing needs a working-ball radius and a horizon")
    weighted = nl.kernel2.weighted
    n = weighted.shape[0]
    extended = np.zeros((n + 1, n + 1))
    extended[:n, :n] = weighted
    shifted = np.zeros_like(extended)
    shifted[1:, 1:] = weighted
    derivative = Kernel2(nl.kernel2.dt, (extended - shifted) / dt)
    constants = kernel_constants(derivative, 0.0)
    horizon = min(horizon, nl.cutoff_T) if nl.cutoff_T is not None else horizon
    return 2.0 * radius * growth_bound(nl, constants, nu, horizon)


def forcing_from_polarization(p: WeightedSignal) -> np.ndarray:
    """Row n drives step n -> n+1: -(P^{n+1} - P^n) / dt."""
    return -np.diff(p.values, axis=0) / p.dt


# Picard iteration

@dataclass
class IterationRecord:
    iteration: int
    diff_norm: float
    ratio: Optional[float]
    norm: float
    inside_ball: bool


@dataclass
class FixedPointResult:
    solution: WeightedSignal
    log: List[IterationRecord] = field(default_factory=list)
    converged: bool = False
    residual: float = math.nan
    lipschitz: float = 0.0
    slope_d: float = math.nan
    predicted_ratio: float = math.nan
    ball_radius: float = 0.0
    linear_solution: Optional[WeightedSignal] = None

    @property
    def iterations(self) -> int:
        return len(self.log)

    @property
    def inside_ball(self) -> bool:
        return all(record.inside_ball for record in self.log)

    @property
    def max_ratio(self) -> Optional[float]:
        ratios = [r.ratio for r in self.log if r.ratio is not None and r.diff_norm > 0]
        return max(ratios) if ratios else None

    def log_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(record) for record in self.log],
                            columns=["iteration", "diff_norm", "ratio", "norm", "inside_ball"])

    def to_dict(self) -> Dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "lipschitz": self.lipschitz,
            "slope_d": self.slope_d,
            "predicted_ratio": self.predicted_ratio,
            "max_observed_ratio": self.max_ratio,
            "ball_radius": self.ball_radius,
            "inside_ball": self.inside_ball,
            "nu": self.solution.nu,
        }


def linear_slope(cfg: SimConfig) -> float:
    law = MaterialLaw(cfg.params, component=Component.BOTH)
    d = slope_bound(law)
    return math.inf if d is None else d


def picard_solve(cfg: SimConfig, nl: NonlinearPolarization, nu: float, max_iter: int = 50, tol: float = 1e-8,
                 g: Optional[np.ndarray] = None, slope_d: Optional[float] = None,
                 callback: Optional[Callable[[IterationRecord], None]] = None) -> FixedPointResult:
    """Iterate u <- LinearSolve(g + f(u)) until the nu-weighted difference is below tol.

    u is the E history on every step; g adds to the configured source.
    """
    if nu <= 0:
        raise ValueError("the weight nu must be positive")
    sim = Simulator(cfg)
    dx, n_nodes = cfg.grid.dx, cfg.grid.n_cells + 1
    base = np.zeros((cfg.n_steps, n_nodes)) if g is None else np.asarray(g, dtype=float)

    def linear_solve(forcing: np.ndarray) -> WeightedSignal:
        history = sim.run(forcing=forcing, keep_history=True).history["E"]
        return WeightedSignal(sim.dt, history, nu, dx)

    def forcing_of(u: WeightedSignal) -> np.ndarray:
        return base + forcing_from_polarization(polarization(u, nl))

    u = linear_solve(base)
    radius = 2.0 * weighted_norm(u)
    d = linear_slope(cfg) if slope_d is None else slope_d
    lipschitz = forcing_lipschitz(nl, sim.dt, nu, radius=radius, horizon=u.t_end)
    predicted = d * lipschitz / nu
    if predicted >= 1.0:
        LOGGER.warning("Predicted contraction ratio d*L/nu = %.3g >= 1 (d = %.3g, L = %.3g, nu = %g)",
                       predicted, d, lipschitz, nu)
    result = FixedPointResult(u, lipschitz=lipschitz, slope_d=d, predicted_ratio=predicted,
                              ball_radius=radius, linear_solution=u)

    previous_diff, streak = None, 0
    for iteration in range(1, max_iter + 1):
        u_next = linear_solve(forcing_of(u))
        diff = weighted_norm(u_next - u)
        ratio = diff / previous_diff if previous_diff else None
        norm = weighted_norm(u_next)
        record = IterationRecord(iteration, diff, ratio, norm, norm <= radius or radius == 0.0)
        result.log.append(record)
        if callback is not None:
            callback(record)
        LOGGER.debug("Picard %d: diff %.3e ratio %s", iteration, diff, "-" if ratio is None else f"{ratio:.3g}")
        u = u_next

        if diff <= tol:
            result.solution = u
            result.converged = True
            result.residual = weighted_norm(linear_solve(forcing_of(u)) - u)
            LOGGER.info("Picard converged in %d iterations (residual %.2e, predicted ratio %.3g)",
                        iteration, result.residual, predicted)
            return result

        streak = streak + 1 if ratio is not None and ratio >= 1.0 else 0
        if streak >= NO_CONTRACTION_STREAK:
            result.solution = u
            raise NoContraction(f"difference ratio >= 1 for {streak} consecutive iterations (last {ratio:.3g})")
        previous_diff = diff

    result.solution = u
    raise MaxIter(f"no convergence to {tol:g} within {max_iter} iterations (last difference {diff:.3e})")
