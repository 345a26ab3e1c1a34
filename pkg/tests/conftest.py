ACCEPTANCE_REPORT: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance report")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)
