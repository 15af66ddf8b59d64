def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" not in props or getattr(rep, "when", "call") != "call":
                continue
            verdict = "PASS" if outcome == "passed" else "FAIL"
            lines.append((props["criterion"], f"C{props['criterion']:<2} {verdict}  {props.get('detail', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
