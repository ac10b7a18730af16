import re
import functools

import pytest

import fusegrey  # noqa: F401  (raises the recursion limit)
from fusegrey.packet import get_template, mark_session
from fusegrey.pil import load_program
from fusegrey.targets import NAMES, get_target


@functools.lru_cache(maxsize=None)
def target(name):
    return get_target(name)


def session_for(name, marks=None, seeds=None):
    t = target(name)
    tpl = get_template(t.template)
    fields = list(tpl.field_names) if marks is None else list(marks)
    return mark_session(list(seeds if seeds is not None else t.seeds), tpl, fields)


def prog(text):
    return load_program(text)


@pytest.fixture(params=NAMES)
def bundled(request):
    return target(request.param)


# -- acceptance summary ---------------------------------------------------------

_CRITERION = re.compile(r"test_c(\d+)_")
_criteria = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid.split("::")[-1])
    if not m or "test_acceptance" not in report.nodeid:
        return
    n = int(m.group(1))
    ok = _criteria.setdefault(n, True)
    if report.failed or (report.when == "call" and report.skipped):
        _criteria[n] = False
    else:
        _criteria[n] = ok


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    from test_acceptance import CRITERIA
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status = "PASS" if _criteria[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {CRITERIA[n]}")
