import re


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, with the measured detail."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", getattr(rep, "nodeid", ""))
            if not m or (rep.when != "call" and outcome != "error"):
                continue
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            lines.append((int(m.group(1)), "PASS" if outcome == "passed" else "FAIL", detail))
    if lines:
        terminalreporter.section("acceptance criteria")
        for n, status, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
