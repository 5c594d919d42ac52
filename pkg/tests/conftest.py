import pytest
from click.testing import CliRunner

from oscfb.data.schemas import CovMatrix, MeanPair, SimConfig
from oscfb.physics.core import build_params, scenario_params
from oscfb.utils.config import settings


@pytest.fixture(autouse=True)
def quiet_progress(monkeypatch):
    """Keep tqdm bars out of test output."""
    monkeypatch.setattr(settings, "SHOW_PROGRESS", False)


@pytest.fixture
def matched_params():
    """Identical system and filter at the default weak measurement."""
    return build_params({"alpha": 0.1, "eta": 0.16})


@pytest.fixture
def strong_matched_params():
    """Identical system and filter at alpha = eta = 1."""
    return build_params({"alpha": 1.0, "eta": 1.0})


@pytest.fixture
def separated_params():
    """The cavity-cooled BEC with an imperfect filter."""
    return scenario_params()


@pytest.fixture
def mismatched_params():
    """A point where every filter parameter differs from the system's."""
    return build_params({
        "alpha_s": 0.8,
        "eta_s": 0.6,
        "alpha_f": 0.5,
        "eta_f": 0.4,
        "d_omega_f": 0.2,
        "nu": 2.0,
        "tau": 0.05,
    })


@pytest.fixture
def fast_sim():
    """A small ensemble on a short horizon."""
    return SimConfig(dt=0.01, t_final=5.0, n_paths=64, seed=7, record_stride=10, block_size=16, n_workers=1)


@pytest.fixture
def initial_covariance():
    """Initial covariance shared by system and filter."""
    return CovMatrix(v_xx=2.0, v_xp=0.25, v_pp=1.0)


@pytest.fixture
def equal_means():
    """Filter and system start at the same displaced point."""
    return MeanPair(x_pi=2.0, p_pi=1.0, x_rho=2.0, p_rho=1.0)


@pytest.fixture
def runner():
    """Click test runner."""
    return CliRunner()
