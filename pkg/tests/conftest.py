import sys


def pytest_terminal_summary(terminalreporter):
    # Acceptance checks collect one human-readable verdict line each; echo
    # the block after the run so it is visible even when stdout capture is
    # on for passing tests.
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
