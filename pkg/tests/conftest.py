def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of a run."""
    reports = []
    for key in ("passed", "failed", "error"):
        reports.extend(terminalreporter.stats.get(key, []))
    acceptance = [
        r for r in reports
        if "test_acceptance.py" in r.nodeid and r.when == "call"
    ]
    if not acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for report in sorted(acceptance, key=lambda r: r.nodeid):
        name = report.nodeid.split("::")[-1]
        verdict = "PASS" if report.passed else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
