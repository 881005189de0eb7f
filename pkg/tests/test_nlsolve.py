import math

import numpy as np
import pandas as pd
import pytest

from matlaw import vacuum
from nlsolve import (
    InstantaneousNonlinearityError,
    KernelResolutionMismatch,
    MaxIter,
    NonlinearKind,
    NonlinearPolarization,
    box_kernel2,
    convolve_polarization,
    delta_kernel,
    exponential_kernel,
    forcing_lipschitz,
    growth_bound,
    kernel_constants,
    load_kernel2_csv,
    load_kernel_csv,
    picard_solve,
    quadratic_polarization,
    saturable_lipschitz,
    saturable_q,
    separable_kernel2,
)
from tdsim import Grid1D, SimConfig, SourceSpec
from wspace import WeightedSignal, is_causal_pair, weighted_norm


@pytest.fixture
def small_pulse():
    source = SourceSpec(kind="pulse", amplitude=0.1, position=3.2, t0=1.0, tau=0.3, spatial_width=0.3)
    return SimConfig(params=vacuum(), grid=Grid1D(n_cells=64, dx=0.1), n_steps=100, record=(), source=source)


@pytest.fixture
def saturable(small_pulse):
    kernel = exponential_kernel(small_pulse.resolved_dt(), theta=0.5, t_max=3.0, amplitude=0.2)
    return NonlinearPolarization(kind="saturable", k=3, tau=1.0, kernel=kernel)


def test_saturable_lipschitz_constant():
    assert saturable_lipschitz(3, 1.0) == pytest.approx(9.0 / 8.0, rel=1e-6)
    assert saturable_q(2.0, 3, 1.0) == pytest.approx(8.0 / 5.0)
    assert saturable_q(-2.0, 3, 1.0) == pytest.approx(-8.0 / 5.0)


def test_linear_problem_needs_one_iteration(small_pulse):
    result = picard_solve(small_pulse, NonlinearPolarization(), nu=1.0)
    assert result.converged and result.iterations == 1
    assert result.lipschitz == 0.0
    assert weighted_norm(result.solution) > 0


def test_saturable_fixed_point(small_pulse, saturable):
    result = picard_solve(small_pulse, saturable, nu=2.0, tol=1e-10)
    assert result.converged
    assert result.residual <= 1e-8
    assert result.predicted_ratio < 1.0
    assert result.inside_ball
    assert result.max_ratio is None or result.max_ratio <= result.predicted_ratio
    assert list(result.log_frame().columns) == ["iteration", "diff_norm", "ratio", "norm", "inside_ball"]

    other = picard_solve(small_pulse, saturable, nu=3.0, tol=1e-10)
    gap = weighted_norm(result.solution - other.solution.with_nu(2.0))
    assert gap / weighted_norm(result.solution) <= 1e-6


def test_iteration_cap(small_pulse, saturable):
    with pytest.raises(MaxIter):
        picard_solve(small_pulse, saturable, nu=2.0, max_iter=1, tol=1e-300)
    with pytest.raises(ValueError):
        picard_solve(small_pulse, saturable, nu=0.0)


def test_kernel2_touching_axes_is_instantaneous():
    with pytest.raises(InstantaneousNonlinearityError):
        NonlinearPolarization(kind="quadratic", kernel2=box_kernel2(0.1, 1.0))
    nl = NonlinearPolarization(kind="quadratic", kernel2=box_kernel2(0.1, 1.0, start=0.1))
    assert nl.kind == NonlinearKind.QUADRATIC
    assert nl.dt == 0.1


@pytest.mark.parametrize("nu_K", [0.0, 0.5])
def test_kernel_constants_closed_forms(nu_K):
    t_max, dt = 6.0, 0.005
    constants = kernel_constants(separable_kernel2(dt, t_max), nu_K=nu_K)
    rate = 1.0 + nu_K
    assert constants.L_K == pytest.approx(((1.0 - math.exp(-rate * t_max)) / rate) ** 2, rel=1e-6)
    # the main diagonal carries the largest mass
    assert constants.ell_K == pytest.approx((1.0 - math.exp(-2 * rate * t_max)) / (2 * rate), rel=1e-4)
    assert constants.to_dict()["nu_K"] == nu_K


def test_quadratic_growth_bound(rng):
    dt, nu = 0.05, 0.1
    nl = NonlinearPolarization(kind="quadratic", c_q=1.0,
                               kernel2=separable_kernel2(dt, 1.0, vanish_on_axes=True))
    constants = kernel_constants(nl)
    for _ in range(10):
        u = WeightedSignal(dt, rng.standard_normal(100), nu)
        v = WeightedSignal(dt, rng.standard_normal(100), nu)
        gap = weighted_norm(quadratic_polarization(u, nl) - quadratic_polarization(v, nl))
        bound = growth_bound(nl, constants, nu, u.t_end) * (u.norm() + v.norm()) * (u - v).norm()
        assert gap <= bound


def test_quadratic_cutoff_zeroes_late_times(rng):
    nl = NonlinearPolarization(kind="quadratic", kernel2=box_kernel2(0.1, 0.5, start=0.1), cutoff_T=2.0)
    u = WeightedSignal(0.1, rng.standard_normal(50))
    p = quadratic_polarization(u, nl)
    assert np.all(p.values[p.times > 2.0 + 1e-9] == 0.0)
    assert np.any(p.values[p.times <= 2.0] != 0.0)


def test_forcing_lipschitz_needs_ball_for_quadratic():
    nl = NonlinearPolarization(kind="quadratic", kernel2=box_kernel2(0.1, 0.5, start=0.1))
    with pytest.raises(ValueError):
        forcing_lipschitz(nl, 0.1, 1.0)
    assert forcing_lipschitz(nl, 0.1, 1.0, radius=1.0, horizon=2.0) > 0
    assert forcing_lipschitz(NonlinearPolarization(), 0.1, 1.0) == 0.0


def test_delta_kernel_averages_neighbouring_samples(rng):
    dt = 0.1
    nl = NonlinearPolarization(kind="saturable", kernel=delta_kernel(dt))
    u = WeightedSignal(dt, rng.standard_normal(20))
    q = saturable_q(u.values, 3, 1.0)
    p = convolve_polarization(u, nl).values
    np.testing.assert_allclose(p[1:], 0.5 * (q[1:] + q[:-1]), rtol=1e-12)
    np.testing.assert_allclose(p[0], 0.5 * q[0], rtol=1e-12)


def test_polarizations_are_causal(rng):
    dt = 0.1
    saturable = NonlinearPolarization(kind="saturable", kernel=exponential_kernel(dt, 0.5, 2.0))
    quadratic = NonlinearPolarization(kind="quadratic", kernel2=separable_kernel2(dt, 1.0, vanish_on_axes=True))
    u = WeightedSignal(dt, rng.standard_normal((80, 2)), 0.5)
    tail = np.zeros_like(u.values)
    tail[40:] = 1.0
    v = u.with_values(u.values + tail)

    def saturable_map(w):
        return convolve_polarization(w, saturable)

    def quadratic_map(w):
        return quadratic_polarization(w, quadratic)

    assert is_causal_pair(saturable_map, u, v, a=u.times[39])
    assert is_causal_pair(quadratic_map, u, v, a=u.times[39])


def test_kernel_resolution_must_match(rng):
    nl = NonlinearPolarization(kind="saturable", kernel=exponential_kernel(0.1, 0.5, 1.0))
    with pytest.raises(KernelResolutionMismatch):
        convolve_polarization(WeightedSignal(0.05, rng.standard_normal(10)), nl)


def test_kernel_csv_loading(tmp_path):
    path = tmp_path / "kernel.csv"
    pd.DataFrame({"tau": [0.2, 0.0, 0.1], "value": [3.0, 1.0, 2.0]}).to_csv(path, index=False)
    kernel = load_kernel_csv(path)
    assert kernel.dt == pytest.approx(0.1)
    np.testing.assert_array_equal(kernel.values, [1.0, 2.0, 3.0])

    uneven = tmp_path / "uneven.csv"
    pd.DataFrame({"tau": [0.0, 0.1, 0.3], "value": [1.0, 1.0, 1.0]}).to_csv(uneven, index=False)
    with pytest.raises(ValueError):
        load_kernel_csv(uneven)


def test_kernel2_csv_loading(tmp_path):
    taus = [0.0, 0.5]
    rows = [{"tau1": a, "tau2": b, "value": a * b} for a in taus for b in taus]
    full = tmp_path / "kernel2.csv"
    pd.DataFrame(rows).to_csv(full, index=False)
    kernel = load_kernel2_csv(full)
    assert kernel.dt == pytest.approx(0.5)
    assert kernel.values[1, 1] == pytest.approx(0.25)
    assert not kernel.touches_axes()

    partial = tmp_path / "partial.csv"
    pd.DataFrame(rows[:-1]).to_csv(partial, index=False)
    with pytest.raises(ValueError):
        load_kernel2_csv(partial)
