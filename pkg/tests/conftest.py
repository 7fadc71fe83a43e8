import time

import pytest

_RESULTS: dict[str, tuple[bool, str, float]] = {}


class Criterion:
    """Records one acceptance criterion's verdict for the terminal summary."""

    def __init__(self, name: str, budget: float):
        self.name = name
        self.budget = budget
        self.checks: list[tuple[str, bool]] = []
        self.start = time.perf_counter()
        self.extra = 0.0

    def add_time(self, seconds: float) -> None:
        """Charge shared fixture work to this criterion's budget."""
        self.extra += seconds

    def check(self, label: str, ok: bool) -> None:
        self.checks.append((label, bool(ok)))

    def finish(self) -> None:
        elapsed = time.perf_counter() - self.start + self.extra
        self.check(f"runtime {elapsed:.1f}s <= {self.budget:.0f}s", elapsed <= self.budget)
        ok = all(flag for _, flag in self.checks)
        detail = "; ".join(f"{label}{'' if flag else ' [FAILED]'}" for label, flag in self.checks)
        _RESULTS[self.name] = (ok, detail, elapsed)
        failed = [label for label, flag in self.checks if not flag]
        assert not failed, f"{self.name}: " + "; ".join(failed)


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    name, budget = marker.args
    return Criterion(name, budget)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name, budget): acceptance criterion and time budget")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS, key=lambda n: int(n.split()[0][1:])):
        ok, detail, _ = _RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
