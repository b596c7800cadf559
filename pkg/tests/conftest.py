import pytest

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """record(n, title, ok, detail, elapsed, limit): one line per criterion."""

    def record(n, title, ok, detail, elapsed, limit):
        in_time = elapsed <= limit
        status = "PASS" if ok and in_time else "FAIL"
        ACCEPTANCE[n] = f"[{status}] criterion {n:2d} {title}: {detail} ({elapsed:.1f}s / limit {limit:.0f}s)"
        return ok and in_time

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
