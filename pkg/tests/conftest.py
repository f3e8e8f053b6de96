import sys


def pytest_terminal_summary(terminalreporter):
    # repeat acceptance verdicts, which fd capture hides for passing tests
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance") and getattr(mod, "LINES", None):
            terminalreporter.section("acceptance criteria")
            for line in mod.LINES:
                terminalreporter.write_line(line)
