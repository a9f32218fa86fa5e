import pytest

from aerotrack import kernels


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    """Run the test once per importable kernel backend."""
    prev = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)


def pytest_terminal_summary(terminalreporter):
    """Print one line per acceptance criterion that ran."""
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
