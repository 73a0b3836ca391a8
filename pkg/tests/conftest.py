import pytest

# (number, title, passed, detail) for every acceptance criterion that ran
ACCEPTANCE_RESULTS = []


@pytest.fixture
def record_criterion():
    def record(number, title, passed, detail):
        ACCEPTANCE_RESULTS.append((number, title, passed, detail))
        print(format_criterion(number, title, passed, detail))
    return record


def format_criterion(number, title, passed, detail):
    return f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title} :: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for row in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(format_criterion(*row))
    n_pass = sum(r[2] for r in ACCEPTANCE_RESULTS)
    terminalreporter.write_line(f"{n_pass}/{len(ACCEPTANCE_RESULTS)} criteria pass")
