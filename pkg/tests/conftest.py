import pytest

from hamlearn import _backend


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    """Run the test once per kernel backend."""
    old = _backend._mode
    _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(old)
