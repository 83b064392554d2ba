import sys


def pytest_terminal_summary(terminalreporter):
    results = {}
    for mod in list(sys.modules.values()):
        found = getattr(mod, "ACCEPTANCE_RESULTS", None)
        if isinstance(found, dict):
            results.update(found)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
