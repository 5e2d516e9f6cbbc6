import pytest

from graphfield import _kernels_py, kernels

NAMES = ("etree", "colcounts", "chol_numeric", "lsolve", "ltsolve", "takahashi")

try:
    from graphfield import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ["python"] + (["cython"] if _compiled is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel implementation."""
    impl = _kernels_py if request.param == "python" else _compiled
    for name in NAMES:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
