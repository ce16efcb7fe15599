import numpy as np
import pytest

from stsrobust.linearizer import linearize
from stsrobust.model import table_one_box, table_one_nominal
from stsrobust.planner import STS1, STS2, AllocationSpec, build_reference
from stsrobust.robust import build_parameter_filter

MANEUVERS = {"STS1": STS1, "STS2": STS2}


@pytest.fixture(scope="session")
def p_nom():
    return table_one_nominal().to_array()


@pytest.fixture(scope="session")
def box():
    return table_one_box()


@pytest.fixture(scope="session")
def param_filter(box):
    return build_parameter_filter(box)


@pytest.fixture(scope="session")
def references(p_nom):
    return {name: build_reference(spec, AllocationSpec(), p_nom) for name, spec in MANEUVERS.items()}


@pytest.fixture(scope="session")
def ltvs(references, p_nom):
    return {name: linearize(ref, p_nom) for name, ref in references.items()}


def random_params(rng, box, n):
    from stsrobust.simulator import sample_parameters

    return sample_parameters(box, n, int(rng.integers(2**32)))


# --- acceptance reporting ----------------------------------------------------
# Tests marked ``criterion(n, title)`` are aggregated into one PASS/FAIL line
# per criterion in the terminal summary. ``criterion_detail`` attaches a short
# measured-value note to the line.

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = marker.args
        entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "notes": []})
        entry["ok"] &= rep.passed
        entry["notes"].extend(v for k, v in item.user_properties if k == "detail")


@pytest.fixture
def criterion_detail(request):
    def record(text):
        request.node.user_properties.append(("detail", text))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] else "FAIL"
        notes = "; ".join(entry["notes"])
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {entry['title']}"
                                    + (f" ({notes})" if notes else ""))
