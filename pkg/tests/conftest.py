import os

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
    path = os.path.join(os.path.dirname(__file__), "..", "acceptance_results.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":")))) + "\n")
