import numpy as np
import pytest

from mortsel.cohort import CohortDataset

# acceptance criterion number -> (title, passed, detail)
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def make_cohort(n, d, first_age=80, **labels):
    n = np.asarray(n)
    return CohortDataset(np.arange(first_age, first_age + len(n)), n, np.asarray(d), **labels)


@pytest.fixture
def small_cohort():
    return make_cohort([1000, 900, 780, 640, 500, 360], [100, 120, 140, 140, 140, 130],
                       country="TST", sex="female", cohort_year=1900)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, status, detail = ACCEPTANCE[num]
        line = f"criterion {num:>2} {status:<4} {title}"
        if detail:
            line += f" :: {detail}"
        terminalreporter.write_line(line)
