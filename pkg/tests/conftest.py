import pytest

ACCEPTANCE_LINES = []


class Criterion:
    def __init__(self, number, title):
        self.number, self.title = number, title
        self.line = None

    def check(self, ok, detail):
        status = "PASS" if ok else "FAIL"
        self.line = f"[{status}] criterion {self.number:2d}: {self.title} ({detail})"
        print(self.line)
        assert ok, self.line


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    c = Criterion(*marker.args)
    yield c
    if c.line is None:
        c.line = f"[FAIL] criterion {c.number:2d}: {c.title} (raised before reaching its check)"
    ACCEPTANCE_LINES.append(c.line)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
