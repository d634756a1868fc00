import time

import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: criterion(n, ok, detail, limit_s)."""
    lines = request.config.stash.setdefault(_LINES, [])
    start = time.perf_counter()

    def record(n: int, ok: bool, detail: str, limit_s: float | None = None) -> bool:
        elapsed = time.perf_counter() - start
        in_time = limit_s is None or elapsed <= limit_s
        verdict = "PASS" if ok and in_time else "FAIL"
        budget = f" (limit {limit_s:g} s)" if limit_s is not None else ""
        lines.append(f"criterion {n:>2}: {verdict}  {detail}; {elapsed:.1f} s{budget}")
        return ok and in_time

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
