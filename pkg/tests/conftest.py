"""Shared pytest hooks: per-criterion verdict lines for the acceptance suite."""

import re

_CRITERION = re.compile(r"test_criterion_(\d+)_([a-z0-9_]+)")


def pytest_terminal_summary(terminalreporter):
    """Print one PASS/FAIL line per acceptance criterion that ran."""
    results = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match is None:
                continue
            number, label = int(match.group(1)), match.group(2)
            verdict = "PASS" if status == "passed" else "FAIL"
            if results.get(number, ("", "PASS"))[1] == "FAIL":
                continue
            results[number] = (label, verdict)
    if not results:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for number in sorted(results):
        label, verdict = results[number]
        terminalreporter.write_line(f"[criterion {number}] {label}: {verdict}")
