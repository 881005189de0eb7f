import numpy as np
import pytest
from pydantic import ValidationError

from matlaw import (
    NO_STRETCH,
    ComplexFreq,
    DispersionParams,
    FormulaModel,
    PmlStretch,
    PoleError,
    StretchKind,
    ZeroFrequencyError,
    eval_chi,
    eval_epsilon,
    eval_stretch,
    eval_zM,
    pole_locations,
    real_part_zM_formula,
    vacuum,
)


def _random_points(rng, count=200, nu_range=(0.1, 3.0), t_range=(-5.0, 5.0)):
    nu = rng.uniform(*nu_range, count)
    t = rng.uniform(*t_range, count)
    return nu, t


def test_terms_coerce_from_plain_lists():
    p = DispersionParams(debye=[[1.0, 2.0]], lorentz=[[3.0, 0.5, 4.0, 0.7]])
    assert p.debye[0].a == 1.0 and p.debye[0].b == 2.0
    assert p.lorentz[0].e == 4.0
    assert p.rho == pytest.approx(1.0 + 0.5)


def test_invalid_terms_rejected():
    with pytest.raises(ValidationError):
        DispersionParams(debye=[[1.0, -1.0]])
    with pytest.raises(ValidationError):
        DispersionParams(correction_z0=(0.0, 0.0))


def test_complex_freq_must_be_finite():
    with pytest.raises(ValueError):
        ComplexFreq(float("nan"), 1.0)
    assert complex(ComplexFreq(1.0, -2.0)) == 1 - 2j


@pytest.mark.parametrize("stretch", [
    NO_STRETCH,
    PmlStretch(kind=StretchKind.CFS, sigma=1.0, alpha=0.5),
    PmlStretch(kind=StretchKind.UNIAXIAL, sigma=2.0),
])
def test_conjugate_symmetry(mixed, stretch, rng):
    nu, t = _random_points(rng)
    z = nu + 1j * t
    electric, magnetic = eval_zM(mixed, stretch, z)
    electric_c, magnetic_c = eval_zM(mixed, stretch, np.conj(z))
    np.testing.assert_allclose(electric_c, np.conj(electric), rtol=1e-13)
    np.testing.assert_allclose(magnetic_c, np.conj(magnetic), rtol=1e-13)


@pytest.mark.parametrize("kind", [StretchKind.CFS, StretchKind.UNIAXIAL])
def test_zero_sigma_stretch_is_identity(mixed, kind, rng):
    nu, t = _random_points(rng)
    z = nu + 1j * t
    plain = eval_zM(mixed, NO_STRETCH, z)
    stretched = eval_zM(mixed, PmlStretch(kind=kind, sigma=0.0, alpha=0.3), z)
    np.testing.assert_allclose(stretched[0], plain[0], rtol=1e-14)
    np.testing.assert_allclose(stretched[1], plain[1], rtol=1e-14)
    assert eval_stretch(PmlStretch(kind=kind), 1 + 1j) == 1.0
    zero = PmlStretch(kind=kind, sigma=0.0, alpha=0.3)
    assert eval_stretch(zero, -zero.effective_alpha + 0j) == 1.0
    assert eval_stretch(zero, 0j) == 1.0
    np.testing.assert_array_equal(pole_locations(mixed, zero), pole_locations(mixed, NO_STRETCH))


def test_zero_sigma_bar_matches_debye_only(debye):
    z = 0.4 + 2j
    with_zero = debye.model_copy(update={"sigma_bar": 0.0})
    assert eval_epsilon(with_zero, z) == pytest.approx(eval_epsilon(debye, z))
    assert eval_epsilon(debye, z) == pytest.approx(1.0 + 1.0 / (1.0 + z))


@pytest.mark.parametrize("model,params,stretch", [
    (FormulaModel.DEBYE_PLAIN, DispersionParams(eps_inf=1.5, sigma_bar=0.3, debye=[(1.0, 1.0), (2.0, 0.5)]), NO_STRETCH),
    (FormulaModel.DEBYE_CFS, DispersionParams(eps_inf=1.0, debye=[(1.0, 1.0)]),
     PmlStretch(kind=StretchKind.CFS, sigma=1.0, alpha=1.0)),
    (FormulaModel.LORENTZ_CFS, DispersionParams(eps_inf=1.0, lorentz=[(1.0, 0.2, 1.0, 1.0)]),
     PmlStretch(kind=StretchKind.CFS, sigma=2.0, alpha=0.5)),
    (FormulaModel.DEBYE_UPML, DispersionParams(eps_inf=1.0, debye=[(1.0, 1.0)]),
     PmlStretch(kind=StretchKind.UNIAXIAL, sigma=1.0)),
    (FormulaModel.LORENTZ_UPML, DispersionParams(eps_inf=2.0, lorentz=[(1.0, 0.0, 1.0, 0.1)]),
     PmlStretch(kind=StretchKind.UNIAXIAL, sigma=1.5)),
])
def test_closed_forms_agree_with_direct_evaluation(model, params, stretch, rng):
    nu, t = _random_points(rng)
    direct = eval_zM(params, stretch, nu + 1j * t)[0].real
    formula = real_part_zM_formula(model, params, stretch, nu, t)
    np.testing.assert_allclose(formula, direct, rtol=1e-12, atol=1e-12)


def test_formula_rejects_mismatched_branches(debye, cfs):
    with pytest.raises(ValueError):
        real_part_zM_formula(FormulaModel.LORENTZ_CFS, debye, cfs, 1.0, 1.0)
    with pytest.raises(ValueError):
        real_part_zM_formula(FormulaModel.DEBYE_UPML, debye, cfs, 1.0, 1.0)


def test_evaluators_keep_input_shape(mixed):
    z = np.full((3, 4), 1.0 + 1.0j)
    electric, magnetic = eval_zM(mixed, NO_STRETCH, z)
    assert electric.shape == (3, 4) and magnetic.shape == (3, 4)
    assert isinstance(eval_zM(mixed, NO_STRETCH, 1 + 1j)[0], complex)
    assert eval_zM(mixed, NO_STRETCH, ComplexFreq(1.0, 1.0))[0] == pytest.approx(eval_zM(mixed, NO_STRETCH, 1 + 1j)[0])


def test_pole_errors(debye):
    with pytest.raises(PoleError):
        eval_chi(debye, -1.0 + 0j)
    conductive = vacuum().model_copy(update={"sigma_bar": 1.0})
    with pytest.raises(ZeroFrequencyError):
        eval_epsilon(conductive, 0j)
    with pytest.raises(ZeroFrequencyError):
        eval_zM(conductive, PmlStretch(kind=StretchKind.UNIAXIAL, sigma=1.0), 0j)
    with pytest.raises(PoleError):
        eval_stretch(PmlStretch(kind=StretchKind.CFS, sigma=1.0, alpha=0.5), -0.5 + 0j)


def test_pole_locations(mixed, cfs):
    poles = pole_locations(mixed, cfs)
    expected = [-2.0, -0.25, *np.roots([1.0, 0.7, 4.0]), -1.0]
    np.testing.assert_allclose(np.sort_complex(poles), np.sort_complex(np.asarray(expected, dtype=complex)))
    assert pole_locations(vacuum()).size == 0


def test_modified_lorentz_tends_to_corrected_limit():
    p = DispersionParams(lorentz=[(1.0, 0.0, 1.0, 0.1)], correction_r=1000.0)
    z = 1e-3 + 1e6j
    # z chi -> c / r along the axis
    assert eval_zM(p, NO_STRETCH, z)[0].real == pytest.approx(1e-3 + 1e-3, rel=1e-3)
