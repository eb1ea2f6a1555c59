"""
Shared fixtures for the QPM test suite
"""
import pytest

from qpm.crystal import NPP_CELL, build_stack
from qpm.orbit import CALIBRATED_NPP
from qpm.transport import BeamSpec, SimulationConfig, simulate_geometry


@pytest.fixture(autouse=True)
def fresh_geometry_cache():
    """Each test starts from an empty geometry cache"""
    simulate_geometry.cache_clear()
    yield
    simulate_geometry.cache_clear()


@pytest.fixture
def npp_stack():
    """3 um NPP crystal along b"""
    return build_stack(NPP_CELL, 3.0)


@pytest.fixture
def thin_stack():
    """0.3 um crystal, 402 layers, for fast runs"""
    return build_stack(NPP_CELL, 0.3)


@pytest.fixture
def make_config(thin_stack):
    """Factory for SimulationConfig with NPP defaults"""
    def _make(**overrides):
        values = dict(
            trials=64,
            seed=1234,
            beam=BeamSpec(wavelength=1064.0),
            stack=thin_stack,
            shape=CALIBRATED_NPP,
            transparency_window=NPP_CELL.transparency_window,
        )
        values.update(overrides)
        return SimulationConfig(**values)
    return _make
