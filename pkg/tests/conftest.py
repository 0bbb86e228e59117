import pytest

from gftnn import build_basis, preset_config


@pytest.fixture(scope="session")
def basis_75x9():
    """Eigenbases for the 25 fps grid (75 time steps, 9 vehicles)."""
    return build_basis(preset_config("gftnn", 25))


@pytest.fixture(scope="session")
def basis_30x9():
    """Eigenbases for the 10 fps grid (30 time steps, 9 vehicles)."""
    return build_basis(preset_config("gftnn", 10))
