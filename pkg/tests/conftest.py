import pytest

from asaprune import _kernels


@pytest.fixture(params=_kernels.available_backends())
def backend(request):
    """Run a test once per available kernel backend."""
    return request.param
