import numpy as np
import pytest

from wspace import (
    WeightedSignal,
    causal_antiderivative,
    fourier_laplace,
    is_causal_pair,
    plancherel_ratio,
    weighted_inner,
    weighted_norm,
    zeros_like,
)


def _signal(rng, n_t=256, n_space=3, dt=0.05, nu=0.5):
    return WeightedSignal(dt, rng.standard_normal((n_t, n_space)), nu)


def test_norm_matches_definition(rng):
    u = _signal(rng)
    expected = np.sqrt(np.sum(np.exp(-2 * u.nu * u.times)[:, None] * u.values ** 2) * u.dt)
    assert weighted_norm(u) == pytest.approx(expected)
    assert weighted_norm(zeros_like(u)) == 0.0


def test_inner_product_is_symmetric_and_bilinear(rng):
    u, v = _signal(rng), _signal(rng)
    assert weighted_inner(u, v) == pytest.approx(weighted_inner(v, u))
    assert weighted_inner(u + v, u) == pytest.approx(weighted_inner(u, u) + weighted_inner(v, u))


def test_one_dimensional_values_are_promoted():
    u = WeightedSignal(0.1, np.ones(10))
    assert u.values.shape == (10, 1)
    assert u.t_end == pytest.approx(0.9)


def test_incompatible_signals_rejected(rng):
    with pytest.raises(ValueError):
        _signal(rng, n_t=10) - _signal(rng, n_t=11)
    with pytest.raises(ValueError):
        WeightedSignal(0.0, np.ones(3))


def test_antiderivative_bounded_by_one_over_nu(rng):
    for nu in (0.5, 1.0, 2.0):
        u = _signal(rng, n_t=2000, n_space=1, dt=0.01, nu=nu)
        assert causal_antiderivative(u).norm() <= u.norm() / nu * (1.0 + 5 * u.dt)


def test_antiderivative_of_constant_is_linear():
    u = WeightedSignal(0.1, np.ones(11))
    np.testing.assert_allclose(causal_antiderivative(u).values[:, 0], u.times)


def test_plancherel_identity(rng):
    u = _signal(rng, n_t=128, dt=0.1, nu=0.3)
    assert plancherel_ratio(u) == pytest.approx(1.0, rel=1e-10)


def test_transform_of_decaying_exponential():
    dt, rate = 1e-3, 2.0
    times = dt * np.arange(20000)
    u = WeightedSignal(dt, np.exp(-rate * times))
    z = 1.0 + 3.0j
    value = fourier_laplace(u, z)[0, 0]
    # Riemann sum of exp(-(z + rate) t): left-endpoint error is about dt / 2
    assert value == pytest.approx(1.0 / (z + rate), abs=dt)


def test_antiderivative_is_causal(rng):
    u = _signal(rng)
    tail = np.zeros_like(u.values)
    tail[150:] = rng.standard_normal((u.n_t - 150, u.values.shape[1]))
    v = u.with_values(u.values + tail)
    assert is_causal_pair(causal_antiderivative, u, v, a=u.times[149])


def test_anticausal_map_is_detected(rng):
    u = _signal(rng)
    tail = np.zeros_like(u.values)
    tail[150:] = 1.0
    v = u.with_values(u.values + tail)
    def reverse(w):
        return w.with_values(w.values[::-1].copy())

    assert not is_causal_pair(reverse, u, v, a=u.times[149])
    with pytest.raises(ValueError):
        is_causal_pair(reverse, u, v, a=u.times[-1])
