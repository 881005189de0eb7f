"""
Material laws as rational functions of the Laplace variable z = nu + i t.

Covers the generalized dispersion model (Debye and Lorentz branches, optional
conductivity and the localized Lorentz correction), the PML stretching
functions, and the products z*s(z)*eps(z), z*s(z)*mu that enter every
accretivity check. Units are normalized (eps0 = mu0 = 1).

All evaluators accept a Python scalar, a ComplexFreq or a numpy array of
complex points and return the same shape back.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils import POLE_TOL, DispmlError, as_complex_array, unwrap

LOGGER = logging.getLogger(__name__)


class PoleError(DispmlError):
    """Evaluation on or next to a pole of a rational term"""


class ZeroFrequencyError(DispmlError):
    """z = 0 requested for a conductive law"""


class StretchKind(str, Enum):
    NONE = "none"
    UNIAXIAL = "uniaxial"
    CFS = "cfs"


class FormulaModel(str, Enum):
    DEBYE_PLAIN = "DebyePlain"
    LORENTZ_CFS = "LorentzCFS"
    DEBYE_CFS = "DebyeCFS"
    LORENTZ_UPML = "LorentzUPML"
    DEBYE_UPML = "DebyeUPML"


@dataclass(frozen=True)
class ComplexFreq:
    """A point z = nu + i t; t is Im z, not time."""
    nu: float
    t: float

    def __post_init__(self):
        if not (math.isfinite(self.nu) and math.isfinite(self.t)):
            raise ValueError(f"ComplexFreq components must be finite, got ({self.nu}, {self.t})")

    @property
    def z(self) -> complex:
        return complex(self.nu, self.t)

    def __complex__(self) -> complex:
        return self.z

    @classmethod
    def from_complex(cls, z: complex) -> "ComplexFreq":
        z = complex(z)
        return cls(z.real, z.imag)


class DebyeTerm(BaseModel):
    """Relaxation branch a / (b + z)."""
    model_config = ConfigDict(frozen=True)

    a: float
    b: float = Field(gt=0)


class LorentzTerm(BaseModel):
    """Resonant branch (c + z d) / (e + f z + z^2)."""
    model_config = ConfigDict(frozen=True)

    c: float
    d: float = 0.0
    e: float = Field(gt=0)
    f: float = Field(default=0.0, ge=0)


def _coerce_terms(value, names):
    if value is None:
        return ()
    coerced = []
    for item in value:
        if isinstance(item, (list, tuple)):
            coerced.append(dict(zip(names, item)))
        else:
            coerced.append(item)
    return tuple(coerced)


class DispersionParams(BaseModel):
    """Constants of eps(z) = eps_inf + sigma_bar/z + sum Debye + sum Lorentz."""
    model_config = ConfigDict(frozen=True)

    eps_inf: float = Field(default=1.0, ge=0)
    sigma_bar: float = Field(default=0.0, ge=0)
    mu: float = Field(default=1.0, gt=0)
    debye: Tuple[DebyeTerm, ...] = ()
    lorentz: Tuple[LorentzTerm, ...] = ()
    correction_r: Optional[float] = Field(default=None, gt=0)
    correction_z0: Optional[Tuple[float, float]] = None

    @field_validator("debye", mode="before")
    @classmethod
    def _debye_pairs(cls, value):
        return _coerce_terms(value, ("a", "b"))

    @field_validator("lorentz", mode="before")
    @classmethod
    def _lorentz_quadruples(cls, value):
        return _coerce_terms(value, ("c", "d", "e", "f"))

    @field_validator("correction_z0", mode="before")
    @classmethod
    def _z0_pair(cls, value):
        if isinstance(value, complex):
            return (value.real, value.imag)
        if isinstance(value, ComplexFreq):
            return (value.nu, value.t)
        if isinstance(value, dict):
            return (value.get("nu", 0.0), value.get("t", 0.0))
        return value

    @model_validator(mode="after")
    def _correction_needs_radius(self):
        if self.correction_z0 is not None and self.correction_r is None:
            raise ValueError("correction_z0 given without correction_r")
        return self

    @property
    def z0(self) -> complex:
        if self.correction_z0 is None:
            return 0j
        return complex(*self.correction_z0)

    @property
    def rho(self) -> float:
        """Sum of Lorentz d_l plus Debye a_l."""
        return sum(term.d for term in self.lorentz) + sum(term.a for term in self.debye)

    @property
    def is_dispersive(self) -> bool:
        return bool(self.debye or self.lorentz)

    @property
    def is_modified(self) -> bool:
        return self.correction_r is not None

    def with_correction(self, r: float, z0: complex = 0j) -> "DispersionParams":
        return self.model_copy(update={"correction_r": float(r), "correction_z0": (z0.real, z0.imag)})


class PmlStretch(BaseModel):
    """Stretching function s(z): CFS 1 + sigma/(alpha+z), uniaxial 1 + sigma/z, or 1."""
    model_config = ConfigDict(frozen=True)

    kind: StretchKind = StretchKind.NONE
    sigma: float = Field(default=0.0, ge=0)
    alpha: float = Field(default=0.0, ge=0)

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.kind == StretchKind.CFS else 0.0

    @property
    def is_active(self) -> bool:
        return self.kind != StretchKind.NONE and self.sigma > 0


def vacuum(eps_inf: float = 1.0, mu: float = 1.0) -> DispersionParams:
    return DispersionParams(eps_inf=eps_inf, mu=mu)


NO_STRETCH = PmlStretch()


class _Denominators:
    """Collects near-pole masks while terms are summed."""

    def __init__(self, shape):
        self.bad = np.zeros(shape, dtype=bool)

    def divide(self, num, den):
        near = np.abs(den) < POLE_TOL
        self.bad |= near
        return num / np.where(near, 1.0, den)


def _chi_array(p: DispersionParams, z: np.ndarray, dens: _Denominators) -> np.ndarray:
    chi = np.zeros(z.shape, dtype=complex)
    for term in p.debye:
        chi += dens.divide(term.a, term.b + z)
    if p.lorentz:
        correction = 1.0
        if p.is_modified:
            correction = 1.0 + (z - p.z0) / p.correction_r
        for term in p.lorentz:
            chi += dens.divide(term.c + z * term.d, term.e + term.f * z + z * z) * correction
    return chi


def _z_stretch_array(s: PmlStretch, z: np.ndarray, dens: _Denominators) -> np.ndarray:
    if s.kind == StretchKind.NONE or s.sigma == 0:
        return z.copy()
    if s.kind == StretchKind.UNIAXIAL:
        return z + s.sigma
    return z + dens.divide(s.sigma * z, s.alpha + z)


def _zm_arrays(p: DispersionParams, s: PmlStretch, z: np.ndarray):
    """Electric and magnetic symbols plus a mask of points too close to a pole."""
    dens = _Denominators(z.shape)
    chi = _chi_array(p, z, dens)
    zs = _z_stretch_array(s, z, dens)
    magnetic = zs * p.mu

    uniaxial = s.kind == StretchKind.UNIAXIAL and s.sigma > 0
    if uniaxial:
        electric = zs * (p.eps_inf + chi) + p.sigma_bar
        if p.sigma_bar > 0:
            electric = electric + dens.divide(s.sigma * p.sigma_bar, z)
    else:
        z_eps = p.eps_inf * z + p.sigma_bar + z * chi
        if s.kind == StretchKind.CFS and s.sigma > 0:
            electric = z_eps + dens.divide(s.sigma * z_eps, s.alpha + z)
        else:
            electric = z_eps
    return electric, magnetic, dens.bad


def zm_components(p: DispersionParams, s: PmlStretch, z) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (electric, magnetic, near_pole) without raising; used by scans."""
    arr, _ = as_complex_array(z)
    return _zm_arrays(p, s, np.atleast_1d(arr))


def eval_chi(p: DispersionParams, z):
    arr, scalar = as_complex_array(z)
    dens = _Denominators(arr.shape)
    chi = _chi_array(p, arr, dens)
    if dens.bad.any():
        raise PoleError(f"chi evaluated within {POLE_TOL:g} of a pole")
    return unwrap(chi, scalar)


def eval_epsilon(p: DispersionParams, z):
    arr, scalar = as_complex_array(z)
    if p.sigma_bar > 0 and np.any(arr == 0):
        raise ZeroFrequencyError("eps(z) has a pole at z = 0 when sigma_bar > 0")
    dens = _Denominators(arr.shape)
    eps = p.eps_inf + _chi_array(p, arr, dens)
    if p.sigma_bar > 0:
        eps = eps + dens.divide(p.sigma_bar, arr)
    if dens.bad.any():
        raise PoleError(f"eps evaluated within {POLE_TOL:g} of a pole")
    return unwrap(eps, scalar)


def eval_stretch(s: PmlStretch, z):
    arr, scalar = as_complex_array(z)
    if not s.is_active:
        return unwrap(np.ones(arr.shape, dtype=complex), scalar)
    shift = s.alpha if s.kind == StretchKind.CFS else 0.0
    dens = _Denominators(arr.shape)
    value = 1.0 + dens.divide(s.sigma, shift + arr)
    if dens.bad.any():
        raise PoleError(f"{s.kind.value} stretch evaluated at its pole z = {-shift:g}")
    return unwrap(value, scalar)


def eval_zM(p: DispersionParams, s: PmlStretch, z):
    """(z s(z) eps(z), z s(z) mu) at z."""
    arr, scalar = as_complex_array(z)
    uniaxial_conductive = s.kind == StretchKind.UNIAXIAL and s.sigma > 0 and p.sigma_bar > 0
    if uniaxial_conductive and np.any(arr == 0):
        raise ZeroFrequencyError("UPML with sigma_bar > 0 has a pole at z = 0")
    electric, magnetic, bad = _zm_arrays(p, s, arr)
    if bad.any():
        raise PoleError("zM evaluated next to a pole")
    return unwrap(electric, scalar), unwrap(magnetic, scalar)


def _term_parts(p: DispersionParams, nu, t):
    """Re/Im of chi by real arithmetic, one branch at a time."""
    re_chi = np.zeros(np.shape(nu), dtype=float)
    im_chi = np.zeros(np.shape(nu), dtype=float)
    for term in p.debye:
        den = (term.b + nu) ** 2 + t ** 2
        if np.any(den < POLE_TOL ** 2):
            raise PoleError("Debye pole hit")
        re_chi = re_chi + term.a * (term.b + nu) / den
        im_chi = im_chi - term.a * t / den

    if p.lorentz:
        if p.is_modified:
            z0 = p.z0
            corr_re = 1.0 + (nu - z0.real) / p.correction_r
            corr_im = (t - z0.imag) / p.correction_r
        else:
            corr_re, corr_im = 1.0, 0.0
        for term in p.lorentz:
            num_re = term.c + term.d * nu
            num_im = term.d * t
            q_re = term.e + term.f * nu + nu ** 2 - t ** 2
            q_im = term.f * t + 2.0 * nu * t
            q_abs2 = q_re ** 2 + q_im ** 2
            if np.any(q_abs2 < POLE_TOL ** 2):
                raise PoleError("Lorentz resonance hit")
            frac_re = (num_re * q_re + num_im * q_im) / q_abs2
            frac_im = (num_im * q_re - num_re * q_im) / q_abs2
            re_chi = re_chi + frac_re * corr_re - frac_im * corr_im
            im_chi = im_chi + frac_re * corr_im + frac_im * corr_re
    return re_chi, im_chi


def _check_formula_inputs(model: FormulaModel, p: DispersionParams, s: PmlStretch):
    if model in (FormulaModel.DEBYE_PLAIN, FormulaModel.DEBYE_CFS, FormulaModel.DEBYE_UPML) and p.lorentz:
        raise ValueError(f"{model.value} takes Debye branches only")
    if model in (FormulaModel.LORENTZ_CFS, FormulaModel.LORENTZ_UPML) and p.debye:
        raise ValueError(f"{model.value} takes Lorentz branches only")
    if model in (FormulaModel.DEBYE_CFS, FormulaModel.LORENTZ_CFS) and s.kind == StretchKind.UNIAXIAL:
        raise ValueError(f"{model.value} needs a CFS stretch")
    if model in (FormulaModel.DEBYE_UPML, FormulaModel.LORENTZ_UPML) and s.kind == StretchKind.CFS:
        raise ValueError(f"{model.value} needs a uniaxial stretch")


def real_part_zM_formula(model, p: DispersionParams, s: PmlStretch, nu, t):
    """Re of the electric symbol through the decomposed closed forms.

    Shares no code path with eval_zM, so the two can check each other.
    """
    model = FormulaModel(model)
    _check_formula_inputs(model, p, s)
    nu = np.asarray(nu, dtype=float)
    t = np.asarray(t, dtype=float)
    scalar = nu.ndim == 0 and t.ndim == 0
    nu, t = np.broadcast_arrays(nu, t)
    abs_z2 = nu ** 2 + t ** 2
    if p.sigma_bar > 0 and np.any(abs_z2 == 0):
        raise ZeroFrequencyError("conductive law at z = 0")

    if model == FormulaModel.DEBYE_PLAIN:
        value = p.eps_inf * nu + p.sigma_bar
        for term in p.debye:
            den = t ** 2 + (nu + term.b) ** 2
            if np.any(den < POLE_TOL ** 2):
                raise PoleError("Debye pole hit")
            value = value + (nu ** 2 * term.a + term.a * t ** 2) / den + term.b * nu * term.a / den
        return float(value) if scalar else value

    re_chi, im_chi = _term_parts(p, nu, t)
    if p.sigma_bar > 0:
        re_eps = p.eps_inf + re_chi + p.sigma_bar * nu / abs_z2
        im_eps = im_chi - p.sigma_bar * t / abs_z2
    else:
        re_eps = p.eps_inf + re_chi
        im_eps = im_chi

    sigma = s.sigma if s.kind != StretchKind.NONE else 0.0
    if model in (FormulaModel.DEBYE_CFS, FormulaModel.LORENTZ_CFS):
        alpha = s.alpha
        shifted = t ** 2 + (nu + alpha) ** 2
        if sigma > 0 and np.any(shifted < POLE_TOL ** 2):
            raise PoleError("CFS pole hit")
        shifted = np.where(shifted == 0, 1.0, shifted)
        term_a = (sigma * t ** 2 + sigma * nu ** 2) / shifted + sigma * alpha * nu / shifted + nu
        term_c = -(1.0 + alpha * sigma / shifted) * t * im_eps
        value = term_a * re_eps + term_c
    else:
        value = (nu + sigma) * re_eps - t * im_eps
    return float(value) if scalar else value


def pole_locations(p: DispersionParams, s: Optional[PmlStretch] = None) -> np.ndarray:
    """Poles of z s(z) eps(z) (the removable ones at z = 0 are left out)."""
    poles = [complex(-term.b) for term in p.debye]
    for term in p.lorentz:
        poles.extend(complex(root) for root in np.roots([1.0, term.f, term.e]))
    if s is not None and s.is_active:
        if s.kind == StretchKind.CFS:
            poles.append(complex(-s.alpha))
        elif p.sigma_bar > 0:
            poles.append(0j)
    return np.asarray(poles, dtype=complex)


def pole_radius(p: DispersionParams, s: Optional[PmlStretch] = None) -> float:
    poles = pole_locations(p, s)
    return float(np.max(np.abs(poles))) if poles.size else 0.0


def high_frequency_constant(p: DispersionParams) -> float:
    """C with |eps(z) - eps_inf| <= C/|z| on Re z >= 1 (coarse but explicit).

    The corrected Lorentz law tends to eps_inf + sum d/r instead, so it has no
    such constant and gets inf.
    """
    if p.is_modified and p.lorentz:
        return math.inf
    bound = p.sigma_bar + sum(abs(term.a) for term in p.debye)
    for term in p.lorentz:
        radius = max(abs(root) for root in np.roots([1.0, term.f, term.e]))
        far = 4.0 * (abs(term.c) + abs(term.d))
        near = 2.0 * radius * (abs(term.c) + 2.0 * radius * abs(term.d))
        bound += max(far, near)
    return bound
