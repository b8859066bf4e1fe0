"""Shared pytest plumbing.

The acceptance tests push one verdict line each through record(); the
summary hook replays them after the run so the outcome table is visible
without -s even though the tests themselves capture stdout.
"""

_LINES = []


def record(name: str, ok: bool, detail: str = "") -> None:
    _LINES.append((name, bool(ok), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _LINES:
        return
    terminalreporter.section("acceptance summary")
    width = max(len(name) for name, _, _ in _LINES)
    for name, ok, detail in _LINES:
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(
            f"{name:<{width}}  {verdict}  {detail}".rstrip()
        )
