"""
Numeric accretivity certificates on complex half-planes.

A certificate samples Re(z M(z)) on a finite grid of the half-plane
Re z >= nu_edge, folds in the closed-form limits along t -> +-inf and reports
the infimum as gamma. This is a numeric certificate on a finite grid plus
asymptotes, not a proof.

Stability checks (edges <= 0) use the (M2) form: the ball |z| < delta is
left out of every region, so regions stay nested and gamma stays monotone
in the edge.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from matlaw import (
    NO_STRETCH,
    ComplexFreq,
    DispersionParams,
    PmlStretch,
    StretchKind,
    eval_chi,
    pole_locations,
    pole_radius,
    zm_components,
)
from utils import DispmlError

LOGGER = logging.getLogger(__name__)

TOL_GAMMA = 1e-8
BISECTION_TOL = 1e-6
EXCLUSION_RADIUS = 0.1
POLE_MARGIN = 1e-12
FAR_T_MAX = 1e8
TAIL_TOL = 1e-3

NUMERIC_NOTE = "numeric certificate on a finite grid plus t->inf asymptotes; not a proof"


class PoleInRegion(DispmlError):
    """A pole of the law lies inside the scanned half-plane"""

    def __init__(self, pole: complex, nu_edge: float):
        super().__init__(f"pole at {pole:.6g} lies in Re z > {nu_edge:g}")
        self.pole = pole
        self.nu_edge = nu_edge


class M0NotSPD(DispmlError):
    """Block system M0 is not symmetric positive definite"""


class Verdict(str, Enum):
    ACCRETIVE = "Accretive"
    NOT_ACCRETIVE = "NotAccretive"


class Component(str, Enum):
    ELECTRIC = "electric"
    MAGNETIC = "magnetic"
    BOTH = "both"


@dataclass(frozen=True)
class MaterialLaw:
    params: DispersionParams
    stretch: PmlStretch = NO_STRETCH
    component: Component = Component.BOTH
    exclusion_radius: float = EXCLUSION_RADIUS

    @property
    def pole_distance(self) -> float:
        """Distance from the imaginary axis to the right-most pole (inf if none)."""
        poles = pole_locations(self.params, self.stretch)
        if poles.size == 0:
            return math.inf
        return float(-np.max(poles.real))


@dataclass
class HalfPlaneGrid:
    """Sample plan for a half-plane; nu_values are offsets above the edge."""
    nu_values: List[float]
    t_max: float
    t_count: int = 4097
    log_spaced: bool = True

    def __post_init__(self):
        if not self.nu_values:
            raise ValueError("grid needs at least one nu value")
        if self.t_count < 64:
            raise ValueError("t_count must be at least 64")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")

    def base_t(self) -> np.ndarray:
        half = (self.t_count - 1) // 2
        if self.log_spaced:
            positive = np.logspace(-4, math.log10(self.t_max), half)
        else:
            positive = np.linspace(self.t_max / half, self.t_max, half)
        return np.concatenate([-positive[::-1], [0.0], positive])

    def to_dict(self) -> Dict:
        return {"nu_values": list(map(float, self.nu_values)), "t_max": float(self.t_max),
                "t_count": int(self.t_count), "log_spaced": bool(self.log_spaced)}


def default_grid(law: MaterialLaw) -> HalfPlaneGrid:
    nu_values = [0.0] + list(np.logspace(-3, 2, 32))
    t_max = max(1e3, 10.0 * pole_radius(law.params, law.stretch))
    return HalfPlaneGrid(nu_values=nu_values, t_max=t_max, t_count=4097, log_spaced=True)


@dataclass
class Counterexample:
    nu: float
    t: float
    value: float

    @property
    def point(self) -> ComplexFreq:
        return ComplexFreq(self.nu, self.t)


@dataclass
class Certificate:
    verdict: Verdict
    nu0: float
    gamma: float
    slope_d: Optional[float] = None
    counterexample: Optional[Counterexample] = None
    asymptote_checked: bool = False
    grid: Optional[HalfPlaneGrid] = None
    component: str = Component.BOTH.value
    exclusion_radius: float = 0.0
    skipped_poles: int = 0
    notes: List[str] = field(default_factory=list)

    @property
    def accretive(self) -> bool:
        return self.verdict == Verdict.ACCRETIVE

    def to_dict(self) -> Dict:
        return {
            "verdict": self.verdict.value,
            "nu0": float(self.nu0),
            "gamma": float(self.gamma),
            "slope_d": None if self.slope_d is None else float(self.slope_d),
            "counterexample": None if self.counterexample is None else asdict(self.counterexample),
            "grid": None if self.grid is None else self.grid.to_dict(),
            "asymptote_checked": bool(self.asymptote_checked),
            "component": self.component,
            "exclusion_radius": float(self.exclusion_radius),
            "skipped_poles": int(self.skipped_poles),
            "notes": list(self.notes) + [NUMERIC_NOTE],
        }


@dataclass
class ScanResult:
    inf: float
    argmin: ComplexFreq
    grid_inf: float
    asymptote_inf: float
    asymptote_nu: float
    skipped: int
    asymptote_checked: bool

    @property
    def from_asymptote(self) -> bool:
        return self.asymptote_inf < self.grid_inf


def _law_values(law: MaterialLaw, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    electric, magnetic, bad = zm_components(law.params, law.stretch, z)
    if law.component == Component.ELECTRIC:
        values = electric.real
    elif law.component == Component.MAGNETIC:
        values = magnetic.real
    else:
        values = np.minimum(electric.real, magnetic.real)
    return values, bad


def _effective_sigma(stretch: PmlStretch) -> float:
    return stretch.sigma if stretch.kind != StretchKind.NONE else 0.0


def asymptote_limits(law: MaterialLaw, nu) -> np.ndarray:
    """lim Re(zM(nu + i t)) for |t| -> inf, per component selector.

    chi(z) ~ kappa0 + kappa1/z; the electric limit is
    (nu + sigma)(eps_inf + kappa0) + sigma_bar + Re kappa1.
    """
    p = law.params
    nu = np.asarray(nu, dtype=float)
    kappa0 = 0.0
    kappa1 = 0j
    for term in p.debye:
        kappa1 += term.a
    for term in p.lorentz:
        if p.is_modified:
            r = p.correction_r
            kappa0 += term.d / r
            kappa1 += term.d * (1.0 - p.z0 / r) + (term.c - term.d * term.f) / r
        else:
            kappa1 += term.d
    sigma = _effective_sigma(law.stretch)
    electric = (nu + sigma) * (p.eps_inf + kappa0) + p.sigma_bar + kappa1.real
    magnetic = (nu + sigma) * p.mu
    if law.component == Component.ELECTRIC:
        return electric
    if law.component == Component.MAGNETIC:
        return magnetic
    return np.minimum(electric, magnetic)


def _row_t_samples(law: MaterialLaw, grid: HalfPlaneGrid, nu: float, base_t: np.ndarray) -> np.ndarray:
    extra = []
    for pole in pole_locations(law.params, law.stretch):
        for scale in (1.0, 1.0 - 1e-3, 1.0 + 1e-3):
            extra.extend([pole.imag * scale, -pole.imag * scale])
    delta = law.exclusion_radius
    if delta > 0 and abs(nu) < delta:
        edge_t = math.sqrt(delta ** 2 - nu ** 2) * (1.0 + 1e-9)
        extra.extend([edge_t, -edge_t])
    t = np.concatenate([base_t, np.asarray(extra, dtype=float)])
    return np.unique(t[np.abs(t) <= grid.t_max])


def _check_poles(law: MaterialLaw, nu_edge: float):
    for pole in pole_locations(law.params, law.stretch):
        if pole.real > nu_edge + POLE_MARGIN:
            raise PoleInRegion(complex(pole), nu_edge)


def scan_halfplane(law: MaterialLaw, nu_edge: float, grid: Optional[HalfPlaneGrid] = None) -> ScanResult:
    """Infimum of Re(zM) over Re z >= nu_edge (minus the exclusion ball)."""
    grid = grid or default_grid(law)
    _check_poles(law, nu_edge)

    base_t = grid.base_t()
    best = math.inf
    best_point = ComplexFreq(nu_edge, 0.0)
    skipped = 0
    tails, descending = [], []
    nu_rows = nu_edge + np.asarray(sorted(set(float(v) for v in grid.nu_values)), dtype=float)

    # Rows are independent; the reduction is a plain min.
    for nu in nu_rows:
        t = _row_t_samples(law, grid, nu, base_t)
        z = nu + 1j * t
        values, bad = _law_values(law, z)
        keep = ~bad
        if law.exclusion_radius > 0:
            keep &= np.abs(z) >= law.exclusion_radius
        skipped += int(bad.sum())
        if not keep.any():
            tails.append(math.nan)
            descending.append(False)
            continue
        row = np.where(keep, values, np.inf)
        far = keep & (np.abs(t) >= np.max(np.abs(t[keep])))
        tails.append(float(np.min(values[far])))
        idx = int(np.argmin(row))
        inner = keep & ~far
        descending.append(bool(inner.any() and np.min(values[far]) < np.min(values[inner])))
        if row[idx] < best:
            best = float(row[idx])
            best_point = ComplexFreq(float(nu), float(t[idx]))

    if skipped:
        LOGGER.warning("Skipped %d samples within pole tolerance while scanning Re z >= %g", skipped, nu_edge)

    limits = asymptote_limits(law, nu_rows)
    limit_idx = int(np.argmin(limits))
    asymptote_inf = float(limits[limit_idx])
    inf = min(best, asymptote_inf)
    # a limit may undercut the grid only on rows still falling towards it at t_max
    tails = np.asarray(tails, dtype=float)
    settled = np.abs(tails - limits) <= TAIL_TOL * np.maximum(1.0, np.abs(limits))
    settled |= np.asarray(descending, dtype=bool)
    checked = bool(np.all((limits >= best - 1e-12) | settled))
    if not checked:
        LOGGER.info("Asymptote %.6g at nu = %g lies below the sampled minimum %.6g",
                    asymptote_inf, nu_rows[limit_idx], best)
    LOGGER.debug("Scan at edge %g: grid inf %.6g, asymptote inf %.6g", nu_edge, best, asymptote_inf)
    return ScanResult(
        inf=inf,
        argmin=best_point,
        grid_inf=best,
        asymptote_inf=asymptote_inf,
        asymptote_nu=float(nu_rows[limit_idx]),
        skipped=skipped,
        asymptote_checked=checked,
    )


def law_value(law: MaterialLaw, point: ComplexFreq) -> float:
    values, bad = _law_values(law, np.asarray([point.z]))
    if bad[0]:
        return math.nan
    return float(values[0])


def _far_counterexample(law: MaterialLaw, nu: float, t_from: float, bound: float) -> Optional[Counterexample]:
    """Finite witness below bound when the infimum is only approached as |t| grows."""
    t = np.logspace(math.log10(max(t_from, 1.0)), math.log10(FAR_T_MAX), 400)
    for sign in (1.0, -1.0):
        z = nu + 1j * sign * t
        values, bad = _law_values(law, z)
        values = np.where(bad, np.inf, values)
        hits = np.nonzero(values < bound)[0]
        if hits.size:
            idx = int(hits[0])
            return Counterexample(float(nu), float(sign * t[idx]), float(values[idx]))
    return None


def _pole_counterexample(law: MaterialLaw, pole: complex, nu_edge: float) -> Counterexample:
    radius = 1e-6 * (1.0 + abs(pole))
    angles = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    z = pole + radius * np.exp(1j * angles)
    z = z[z.real >= nu_edge]
    values, bad = _law_values(law, z)
    values = np.where(bad, np.inf, values)
    idx = int(np.argmin(values))
    return Counterexample(float(z[idx].real), float(z[idx].imag), float(values[idx]))


def find_gamma(law: MaterialLaw, nu_edge: float, grid: Optional[HalfPlaneGrid] = None,
               tol_gamma: float = TOL_GAMMA) -> Certificate:
    grid = grid or default_grid(law)
    base = dict(grid=grid, component=law.component.value, exclusion_radius=law.exclusion_radius)
    try:
        scan = scan_halfplane(law, nu_edge, grid)
    except PoleInRegion as exc:
        witness = _pole_counterexample(law, exc.pole, nu_edge)
        LOGGER.info("NotAccretive at edge %g: %s", nu_edge, exc)
        return Certificate(Verdict.NOT_ACCRETIVE, nu0=-nu_edge, gamma=0.0, counterexample=witness,
                           notes=[str(exc)], **base)

    gamma = max(0.0, scan.inf)
    if gamma > tol_gamma and scan.asymptote_checked:
        return Certificate(Verdict.ACCRETIVE, nu0=-nu_edge, gamma=gamma,
                           asymptote_checked=True, skipped_poles=scan.skipped, **base)

    if scan.grid_inf < tol_gamma:
        point = scan.argmin
        witness = Counterexample(point.nu, point.t, scan.grid_inf)
    else:
        witness = _far_counterexample(law, scan.asymptote_nu, grid.t_max, tol_gamma)
    notes = []
    if witness is None:
        notes.append("infimum approached only in the limit |t| -> inf; no finite witness below the bound")
    return Certificate(Verdict.NOT_ACCRETIVE, nu0=-nu_edge, gamma=gamma, counterexample=witness,
                       asymptote_checked=scan.asymptote_checked, skipped_poles=scan.skipped,
                       notes=notes, **base)


def slope_bound(law: MaterialLaw, grid: Optional[HalfPlaneGrid] = None) -> Optional[float]:
    """d with Re zM(z) >= Re z / d on the sampled open right half-plane."""
    grid = grid or default_grid(law)
    base_t = grid.base_t()
    ratio_min = math.inf
    positive_law = MaterialLaw(law.params, law.stretch, law.component, exclusion_radius=0.0)
    for nu in sorted(v for v in grid.nu_values if v > 0):
        z = nu + 1j * base_t
        values, bad = _law_values(positive_law, z)
        values = np.where(bad, np.inf, values)
        ratio_min = min(ratio_min, float(np.min(values)) / nu)
    if not math.isfinite(ratio_min) or ratio_min <= 0:
        return None
    return 1.0 / ratio_min


def find_nu0_stability(law: MaterialLaw, grid: Optional[HalfPlaneGrid] = None,
                       nu_search: Optional[Tuple[float, float]] = None,
                       tol_gamma: float = TOL_GAMMA, bisection_tol: float = BISECTION_TOL) -> Certificate:
    """Largest nu0 with the law accretive on Re z > -nu0 (outside the ball)."""
    grid = grid or default_grid(law)
    if nu_search is None:
        nu_search = (0.0, min(law.pole_distance, 10.0))
    lo, hi = nu_search

    good = find_gamma(law, -lo, grid, tol_gamma)
    if not good.accretive:
        LOGGER.info("Not accretive at the stability edge %g", -lo)
        return good

    top = find_gamma(law, -hi, grid, tol_gamma)
    if top.accretive:
        good, lo = top, hi
    else:
        while hi - lo > bisection_tol:
            mid = 0.5 * (lo + hi)
            cert = find_gamma(law, -mid, grid, tol_gamma)
            LOGGER.debug("nu0 bisection [%g, %g] mid %g -> %s", lo, hi, mid, cert.verdict.value)
            if cert.accretive:
                lo, good = mid, cert
            else:
                hi = mid

    good.nu0 = lo
    good.slope_d = slope_bound(law, grid)
    LOGGER.info("Stable with nu0 = %.6g, gamma = %.3g", lo, good.gamma)
    return good


def search_modified_r(p: DispersionParams, grid: Optional[HalfPlaneGrid] = None,
                      r_start: Optional[float] = None, r_max: float = 1e8,
                      rel_tol: float = 1e-2) -> Tuple[float, Certificate]:
    """Smallest correction radius r that makes the corrected Lorentz law stable.

    Stands in for the closed-form threshold on r, whose symbols do not map onto
    the (c, d, e, f) parameterization.
    """
    if not p.lorentz:
        raise ValueError("search_modified_r needs at least one Lorentz branch")
    if r_start is None:
        r_start = 1e-2 * min(term.e / max(term.f, 1e-12) for term in p.lorentz)
    z0 = p.z0

    def certify_r(r):
        law = MaterialLaw(p.with_correction(r, z0), component=Component.ELECTRIC)
        return find_nu0_stability(law, grid)

    r_lo, r_hi = None, r_start
    cert = certify_r(r_hi)
    while not (cert.accretive and cert.nu0 > 0):
        r_lo, r_hi = r_hi, 2.0 * r_hi
        if r_hi > r_max:
            raise DispmlError(f"no stabilizing correction radius below {r_max:g}")
        cert = certify_r(r_hi)

    if r_lo is not None:
        while r_hi / r_lo > 1.0 + rel_tol:
            r_mid = math.sqrt(r_lo * r_hi)
            mid_cert = certify_r(r_mid)
            if mid_cert.accretive and mid_cert.nu0 > 0:
                r_hi, cert = r_mid, mid_cert
            else:
                r_lo = r_mid
    LOGGER.info("Smallest stabilizing correction radius r = %.4g", r_hi)
    return r_hi, cert


# Block systems

def _require_spd(M0: np.ndarray):
    if not np.allclose(M0, M0.T, atol=1e-14):
        raise M0NotSPD("M0 is not symmetric")
    try:
        np.linalg.cholesky(M0)
    except np.linalg.LinAlgError as exc:
        raise M0NotSPD("M0 is not positive definite") from exc


def block_gamma(system, nu: float) -> float:
    """lambda_min(nu M0 + sym M1); may be negative."""
    sym = 0.5 * (system.M1 + system.M1.T)
    return float(linalg.eigvalsh(nu * system.M0 + sym)[0])


def certify_block(system, nu_edge: float, tol_gamma: float = TOL_GAMMA) -> Certificate:
    """Coercivity of nu M0 + Re M1 at the edge; monotone in nu since M0 > 0."""
    _require_spd(system.M0)
    raw = block_gamma(system, nu_edge)
    if raw > tol_gamma:
        return Certificate(Verdict.ACCRETIVE, nu0=-nu_edge, gamma=raw, asymptote_checked=True)
    witness = Counterexample(float(nu_edge), 0.0, raw)
    return Certificate(Verdict.NOT_ACCRETIVE, nu0=-nu_edge, gamma=max(0.0, raw),
                       counterexample=witness, asymptote_checked=True,
                       notes=["witness is the lambda_min eigenvector at z = nu_edge"])


def find_nu0_block(system, lo: float = -10.0, hi: float = 10.0,
                   tol_gamma: float = TOL_GAMMA, bisection_tol: float = BISECTION_TOL) -> Tuple[float, Certificate]:
    """Smallest edge nu with certify_block accretive, by bisection."""
    _require_spd(system.M0)
    while block_gamma(system, hi) <= tol_gamma:
        hi *= 2.0
        if hi > 1e8:
            raise DispmlError("block system not accretive for any edge below 1e8")
    if block_gamma(system, lo) > tol_gamma:
        return lo, certify_block(system, lo, tol_gamma)
    while hi - lo > bisection_tol:
        mid = 0.5 * (lo + hi)
        if block_gamma(system, mid) > tol_gamma:
            hi = mid
        else:
            lo = mid
    LOGGER.debug("Block edge by bisection %.8g", hi)
    return hi, certify_block(system, hi, tol_gamma)


# (M2)/(M3) clause checks

@dataclass
class ClauseResult:
    name: str
    passed: bool
    value: float
    witness: Optional[Counterexample] = None
    applicable: bool = True
    detail: str = ""


@dataclass
class M2M3Report:
    clauses: List[ClauseResult]

    @property
    def passed(self) -> bool:
        return all(clause.passed for clause in self.clauses if clause.applicable)

    def clause(self, name: str) -> ClauseResult:
        for clause in self.clauses:
            if clause.name == name:
                return clause
        raise KeyError(name)

    def to_dict(self) -> Dict:
        return {"passed": self.passed, "clauses": [
            {**asdict(c), "witness": None if c.witness is None else asdict(c.witness)} for c in self.clauses
        ]}


def _min_over(values: np.ndarray, z: np.ndarray) -> Tuple[float, Counterexample]:
    idx = int(np.nanargmin(values))
    return float(values[idx]), Counterexample(float(z[idx].real), float(z[idx].imag), float(values[idx]))


def check_m2m3(p: DispersionParams, grid: Optional[HalfPlaneGrid] = None,
               tol: float = TOL_GAMMA, bound_limit: float = 1e6) -> M2M3Report:
    law = MaterialLaw(p, component=Component.ELECTRIC)
    grid = grid or default_grid(law)
    base_t = grid.base_t()
    clauses = []

    # Right half-plane samples Re z > 0 (offsets above 0 only).
    nu_pos = np.asarray(sorted(v for v in grid.nu_values if v > 0))
    z_pos = (nu_pos[:, None] + 1j * base_t[None, :]).ravel()
    electric, _, bad = zm_components(p, NO_STRETCH, z_pos)
    re_zeps = np.where(bad, np.nan, electric.real)
    value, witness = _min_over(re_zeps, z_pos)
    clauses.append(ClauseResult("M2'", value >= -tol, value, witness,
                                detail="Re z eps(z) >= 0 on Re z > 0"))

    stability = find_nu0_stability(law, grid)
    clauses.append(ClauseResult("M2", stability.accretive and stability.nu0 > 0, stability.nu0,
                                stability.counterexample,
                                detail="Re z eps(z) >= c outside |z| < delta on some Re z > -nu0"))

    nu1 = 0.5 * min(law.pole_distance, 1.0)
    nu_strip = np.concatenate([[-nu1], nu_pos])
    z_strip = (nu_strip[:, None] + 1j * base_t[None, :]).ravel()
    _, _, bad_strip = zm_components(p, NO_STRETCH, z_strip)
    z_ok = z_strip[~bad_strip]
    chi = eval_chi(p, z_ok)
    peak = float(max(np.max(np.abs(chi)), np.max(np.abs(z_ok * chi))))
    clauses.append(ClauseResult("M3_bounded", bool(np.isfinite(peak) and peak < bound_limit), peak,
                                detail=f"sup |chi|, |z chi| on Re z > -{nu1:g}"))

    radii = np.array([1e-2, 1e-4, 1e-6])
    angles = np.linspace(-np.pi / 2, np.pi / 2, 65)
    small = []
    for radius in radii:
        z_ball = radius * np.exp(1j * angles)
        small.append(float(np.max(np.abs(z_ball * eval_chi(p, z_ball)))))
    clauses.append(ClauseResult("M3_limit", small[-1] <= 1e-4 and small[-1] <= small[0] + 1e-15, small[-1],
                                detail="z chi(z) -> 0 as z -> 0 on Re z >= 0"))

    z_m3 = np.concatenate([z_ok, z_pos[~bad]])
    re_part = p.eps_inf + np.real(eval_chi(p, z_m3))
    c1, c1_witness = _min_over(re_part, z_m3)
    clauses.append(ClauseResult("M3'", c1 > 0, c1, c1_witness,
                                detail=f"eps_inf + Re chi(z) >= c1 > 0 on Re z > -{nu1:g}"))

    if p.sigma_bar > 0:
        non_conductive = p.model_copy(update={"sigma_bar": 0.0})
        near_axis = np.concatenate([[0.0], nu_pos[nu_pos <= 1.0]])
        z_axis = (near_axis[:, None] + 1j * base_t[None, :]).ravel()
        z_axis = z_axis[z_axis != 0]
        electric_nc, _, bad_nc = zm_components(non_conductive, NO_STRETCH, z_axis)
        strict = np.where(bad_nc, np.nan, electric_nc.real + p.sigma_bar)
        c, c_witness = _min_over(strict, z_axis)
        clauses.append(ClauseResult("accr_perm_strict", c > tol, c, c_witness,
                                    detail="Re z eps(z) + sigma_bar >= c near Re z = 0"))
    else:
        clauses.append(ClauseResult("accr_perm_strict", True, math.nan, applicable=False,
                                    detail="only meaningful for sigma_bar > 0"))
    return M2M3Report(clauses)
