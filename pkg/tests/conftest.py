import numpy as np
import pytest

from auvsvr import svr_core
from auvsvr.auv_dynamics import ExcitationPlan, generate_dataset, paper_configs

# Every dual solve made anywhere in the suite is checked against the
# feasibility invariants; counts are reported at the end of the session.
SOLVE_LOG = {"solves": 0, "violations": 0}


def _check_solution(sol, hp):
    SOLVE_LOG["solves"] += 1
    try:
        sol.check_feasible(hp.cost)
    except AssertionError:
        SOLVE_LOG["violations"] += 1
        raise


@pytest.fixture(autouse=True, scope="session")
def feasibility_observer():
    svr_core.SOLVE_OBSERVERS.append(_check_solution)
    yield SOLVE_LOG
    svr_core.SOLVE_OBSERVERS.remove(_check_solution)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records and prints one acceptance verdict line."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(n, ok, detail):
        line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    for _, line in sorted(config.stash.get(ACCEPTANCE_KEY, []), key=lambda t: t[0]):
        terminalreporter.write_line(line)
    n, bad = SOLVE_LOG["solves"], SOLVE_LOG["violations"]
    if n == 0:
        return
    verdict = "PASS" if bad == 0 else "FAIL"
    terminalreporter.write_line(
        f"[criterion 2] {verdict}: dual feasibility held after {n} solves ({bad} violations)")


@pytest.fixture(scope="session")
def small_dataset():
    """Three 200 s configuration segments at 1 Hz."""
    plan = ExcitationPlan(rng_seed=3)
    return generate_dataset([(c, 200.0) for c in paper_configs()], plan, 1.0, 0.02, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
