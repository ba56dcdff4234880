import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    try:
        from test_acceptance import CRITERIA
    except ImportError:
        return
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if rep.when == "call" or status != "passed":
                outcomes[name] = "FAIL" if status != "passed" or outcomes.get(name) == "FAIL" else "PASS"
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number, (name, label) in enumerate(CRITERIA, start=1):
        terminalreporter.write_line(f"[{outcomes.get(name, 'NOT RUN'):7s}] criterion {number:2d}: {label}")
