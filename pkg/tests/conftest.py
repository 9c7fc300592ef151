"""Shared reporting for the acceptance suite.

The acceptance tests register one verdict line each; the terminal-summary
hook replays them in criterion order at the end of the run so the twelve
pass/fail lines are visible even when pytest captures stdout.
"""

VERDICTS: dict[int, str] = {}
TOTAL_CRITERIA = 12


def record_verdict(num: int, line: str) -> None:
    VERDICTS[num] = line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not VERDICTS:
        return
    terminalreporter.section(f"acceptance criteria ({len(VERDICTS)} of {TOTAL_CRITERIA} reported)")
    for num in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[num])
