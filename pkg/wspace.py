"""
Exponentially weighted signal spaces on a uniform time grid.

Signals live on t_n = n dt, n = 0..N-1, and are zero before t = 0. The
discrete norm is

    ||u||_nu^2 = sum_n dx * |u_n|^2 * exp(-2 nu t_n) * dt

which is the finite-horizon surrogate of L2_nu(R; H) for causal data.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WeightedSignal:
    dt: float
    values: np.ndarray
    nu: float = 0.0
    dx: float = 1.0

    def __post_init__(self):
        if self.dt <= 0 or self.dx <= 0:
            raise ValueError("dt and dx must be positive")
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValueError("values must be shaped (n_t,) or (n_t, n_space)")
        object.__setattr__(self, "values", values)

    @property
    def n_t(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_t)

    @property
    def t_end(self) -> float:
        return self.dt * (self.n_t - 1)

    def weights(self) -> np.ndarray:
        return np.exp(-2.0 * self.nu * self.times) * self.dt

    def norm(self) -> float:
        return weighted_norm(self)

    def with_values(self, values: np.ndarray) -> "WeightedSignal":
        return replace(self, values=values)

    def with_nu(self, nu: float) -> "WeightedSignal":
        return replace(self, nu=nu)

    def truncated(self, a: float) -> "WeightedSignal":
        """Multiply by the indicator of t <= a."""
        mask = (self.times <= a + 1e-12 * self.dt)[:, None]
        return self.with_values(np.where(mask, self.values, 0.0))

    def __sub__(self, other: "WeightedSignal") -> "WeightedSignal":
        _require_compatible(self, other)
        return self.with_values(self.values - other.values)

    def __add__(self, other: "WeightedSignal") -> "WeightedSignal":
        _require_compatible(self, other)
        return self.with_values(self.values + other.values)


def _require_compatible(u: WeightedSignal, v: WeightedSignal):
    if u.values.shape != v.values.shape or not np.isclose(u.dt, v.dt):
        raise ValueError(f"incompatible signals {u.values.shape}@{u.dt} and {v.values.shape}@{v.dt}")


def zeros_like(u: WeightedSignal) -> WeightedSignal:
    return u.with_values(np.zeros_like(u.values))


def weighted_inner(u: WeightedSignal, v: WeightedSignal) -> float:
    _require_compatible(u, v)
    spatial = u.dx * np.einsum("ij,ij->i", u.values, v.values)
    return float(np.dot(spatial, u.weights()))


def weighted_norm(u: WeightedSignal) -> float:
    return float(np.sqrt(max(weighted_inner(u, u), 0.0)))


def causal_antiderivative(u: WeightedSignal) -> WeightedSignal:
    """Running trapezoid integral from t = 0; bounded by 1/nu in the weighted norm."""
    integral = integrate.cumulative_trapezoid(u.values, dx=u.dt, axis=0, initial=0.0)
    return u.with_values(integral)


def fourier_laplace(u: WeightedSignal, z_values) -> np.ndarray:
    """Discrete transform  sum_n exp(-z t_n) u_n dt, one row per z."""
    z = np.atleast_1d(np.asarray(z_values, dtype=complex))
    phases = np.exp(-np.outer(z, u.times)) * u.dt
    return phases @ u.values


def plancherel_ratio(u: WeightedSignal, t_count: Optional[int] = None) -> float:
    """(1/2pi) int |u_hat(nu + it)|^2 dt over one period, divided by ||u||_nu^2.

    The transform is 2pi/dt periodic in t; with t_count >= n_t equispaced
    samples the quadrature is exact and the ratio is 1 up to rounding.
    """
    t_count = t_count or u.n_t
    t = (np.arange(t_count) - t_count // 2) * (2.0 * np.pi / (u.dt * t_count))
    u_hat = fourier_laplace(u, u.nu + 1j * t)
    spectral = u.dx * np.sum(np.abs(u_hat) ** 2) * (2.0 * np.pi / (u.dt * t_count)) / (2.0 * np.pi)
    temporal = weighted_inner(u, u)
    if temporal == 0.0:
        return 1.0 if spectral == 0.0 else np.inf
    return float(spectral / temporal)


def is_causal_pair(signal_map: Callable[[WeightedSignal], WeightedSignal],
                   u: WeightedSignal, v: WeightedSignal, a: float, atol: float = 0.0) -> bool:
    """Check that inputs equal on t <= a map to outputs equal on t <= a."""
    if not np.allclose(u.truncated(a).values, v.truncated(a).values, rtol=0.0, atol=atol):
        raise ValueError(f"inputs differ before t = {a}")
    out_u = signal_map(u).truncated(a).values
    out_v = signal_map(v).truncated(a).values
    causal = bool(np.allclose(out_u, out_v, rtol=0.0, atol=atol))
    if not causal:
        LOGGER.warning("Causality violated before t = %s (max gap %.3e)", a, np.max(np.abs(out_u - out_v)))
    return causal
