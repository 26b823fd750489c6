"""Shared pytest wiring: collects acceptance check lines for the run summary."""

ACCEPTANCE_LINES = []


def record(ok, number, detail):
    """Store (and echo) a single pass/fail line for one acceptance criterion."""
    line = "%s criterion %d: %s" % ("✅" if ok else "❌", number, detail)
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
