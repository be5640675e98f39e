import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

SUITE_BUDGET_S = 300.0
_session_start = time.monotonic()


def session_elapsed() -> float:
    return time.monotonic() - _session_start


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: int, description: str, passed: bool) -> bool:
    """Collect one pass/fail line per acceptance criterion; the lines are
    echoed in the terminal summary."""
    line = f"[acceptance {criterion}] {description}: {'PASS' if passed else 'FAIL'}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pytest_sessionfinish(session, exitstatus):
    elapsed = session_elapsed()
    ok = elapsed < SUITE_BUDGET_S
    print(
        f"\n[acceptance 11] full suite runtime {elapsed:.1f} s "
        f"(budget {SUITE_BUDGET_S:.0f} s): {'PASS' if ok else 'FAIL'}"
    )
    if not ok and exitstatus == 0:
        session.exitstatus = 1
