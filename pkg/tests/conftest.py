import time

import pytest

ACCEPTANCE = pytest.StashKey[list]()


class Criterion:
    """Collects the checks of one acceptance criterion and reports a PASS/FAIL line."""

    def __init__(self, config, number, title, limit):
        self.config = config
        self.number = number
        self.title = title
        self.limit = limit
        self.checks = []
        self.elapsed = None

    def check(self, label, ok, detail=""):
        self.checks.append((label, bool(ok), detail))
        return bool(ok)

    @property
    def passed(self):
        return bool(self.checks) and all(ok for _, ok, _ in self.checks)

    def failures(self):
        return "; ".join(f"{label}: {detail}" for label, ok, detail in self.checks if not ok)

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.elapsed = time.perf_counter() - self.start
        if exc_type is not None:
            self.check("completed", False, f"{exc_type.__name__}: {exc}")
        self.check("runtime", self.elapsed < self.limit,
                   f"{self.elapsed:.1f}s against a {self.limit}s budget")
        status = "PASS" if self.passed else "FAIL"
        line = (f"{status} criterion {self.number:2d}: {self.title} "
                f"[{self.elapsed:.1f}s / {self.limit}s]")
        if not self.passed:
            line += f" -- {self.failures()}"
        self.config.stash[ACCEPTANCE].append((self.number, line))
        reporter = self.config.pluginmanager.get_plugin("terminalreporter")
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return False


@pytest.fixture
def criterion(request):
    return lambda number, title, limit: Criterion(request.config, number, title, limit)


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
