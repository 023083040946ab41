"""Shared pytest hooks: a per-criterion PASS/FAIL summary for the acceptance suite."""

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record(number: int, title: str, passed: bool, details: str) -> None:
    ACCEPTANCE_RESULTS[number] = (passed, f"{title}: {details}")
    print(f"CRITERION {number} {'PASS' if passed else 'FAIL'} {title}: {details}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, text = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"CRITERION {number} {'PASS' if passed else 'FAIL'} {text}")
