import numpy as np
import pytest

from matlaw import DispersionParams, PmlStretch, StretchKind, vacuum
from tdsim import Grid1D, PmlProfile, SimConfig, SourceSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def debye():
    return DispersionParams(eps_inf=1.0, debye=[(1.0, 1.0)])


@pytest.fixture
def lorentz():
    return DispersionParams(eps_inf=1.0, lorentz=[(1.0, 0.0, 1.0, 0.1)])


@pytest.fixture
def mixed():
    """Two Debye branches, one Lorentz branch, some conductivity."""
    return DispersionParams(eps_inf=2.0, sigma_bar=0.5, debye=[(1.0, 2.0), (0.5, 0.25)],
                            lorentz=[(3.0, 0.5, 4.0, 0.7)])


@pytest.fixture
def cfs():
    return PmlStretch(kind=StretchKind.CFS, sigma=1.0, alpha=1.0)


@pytest.fixture
def vacuum_box():
    """Hard-walled vacuum run with a smooth source in the middle."""
    def build(n_cells=100, dx=0.1, n_steps=200, **updates):
        source = SourceSpec(kind="pulse", position=n_cells * dx / 2, t0=1.0, tau=0.25, spatial_width=0.2)
        cfg = SimConfig(params=vacuum(), grid=Grid1D(n_cells=n_cells, dx=dx), n_steps=n_steps,
                        source=source, record=("energy", "state_energy", "field_norm_sq"))
        return cfg.model_copy(update=updates) if updates else cfg
    return build


@pytest.fixture
def cfs_layer():
    return PmlProfile(kind=StretchKind.CFS, thickness=16, grading_exponent=3, alpha_max=0.05)
