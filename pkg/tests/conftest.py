import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        verdict, title, detail = results[num]
        terminalreporter.write_line(f"criterion {num:2d} {verdict:5s} {title}: {detail}")
