import time

import pytest

from delayhomotopy import ContinuationOptions, continuation_solve, rendezvous_problem, solve_nondelayed

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def rendezvous():
    return rendezvous_problem()


@pytest.fixture(scope="session")
def rendezvous_tau0(rendezvous):
    """Cold start p0 = 0 at tau = 0, timed."""
    t = time.perf_counter()
    result = solve_nondelayed(rendezvous)
    return result, time.perf_counter() - t


@pytest.fixture(scope="session")
def rendezvous_sweep(rendezvous):
    """One 10-step continuation to tau = 4 landing on tau = 2, timed.

    Intermediate steps are not refined; the landing points are refined to
    self-consistency (final_refine_passes).
    """
    opts = ContinuationOptions(dtau_init=0.4, refine_passes=0)
    t = time.perf_counter()
    trace = continuation_solve(rendezvous, 4.0, None, opts, waypoints=[2.0])
    return trace, time.perf_counter() - t
