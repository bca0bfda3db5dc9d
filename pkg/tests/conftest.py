import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from docrefine import _pykernels  # noqa: E402
from docrefine.model import documentation_from_dict  # noqa: E402

import scenarios  # noqa: E402

try:
    from docrefine import _ckernels
except ImportError:  # extension not built
    _ckernels = None

KERNEL_MODULES = [_pykernels] + ([_ckernels] if _ckernels is not None else [])


@pytest.fixture(params=KERNEL_MODULES, ids=lambda m: m.BACKEND)
def kernel_impl(request, monkeypatch):
    """Run a test once per available kernel backend."""
    from docrefine import kernels

    for name in ("clipped_matches", "dot_norms", "cosine", "bm25_scores"):
        monkeypatch.setattr(kernels, name, getattr(request.param, name))
    return request.param


@pytest.fixture
def tv_doc():
    return documentation_from_dict(scenarios.TV_CREDITS)


@pytest.fixture
def tv_fixture_dir(tmp_path):
    d = tmp_path / "fixtures"
    scenarios.write_json(d / "tv.json", scenarios.tv_credits_fixtures())
    return d


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
