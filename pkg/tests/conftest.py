import pytest

from nerdlab.envsim import CohortConfig, generate_cohort
from nerdlab.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(1234, ("tests",))


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(7, CohortConfig(n_subjects=4, V=6, n_trials=12))


@pytest.fixture(scope="session")
def small_subject(small_cohort):
    return small_cohort.subjects[0]


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", None) != "call" and outcome != "error":
                continue
            props = dict(getattr(rep, "user_properties", []))
            if "test_acceptance.py::test_c" not in rep.nodeid:
                continue
            num = int(rep.nodeid.split("::test_c")[1][:2])
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append((num, f"criterion {num:2d}: {status}  {props.get('acceptance', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, text in sorted(lines):
            terminalreporter.write_line(text)
