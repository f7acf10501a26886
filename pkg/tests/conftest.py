import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# Lines recorded by the acceptance checks, printed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[1].rstrip("abc:")), s)):
        terminalreporter.write_line(line)
