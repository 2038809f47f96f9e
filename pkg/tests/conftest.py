import numpy as np
import pytest

from metaroute.taskgen import CVRP, TSP, Instance, TaskSpec, generate_dataset


@pytest.fixture
def square():
    return Instance(coords=np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]))


@pytest.fixture
def tsp10():
    return generate_dataset(TaskSpec(TSP, n_nodes=10, seed=3), 8)


@pytest.fixture
def cvrp6():
    return generate_dataset(TaskSpec(CVRP, n_nodes=6, capacity=10, seed=5), 6)


_VERDICTS: list[str] = []


@pytest.fixture
def criterion():
    """Record a one-line pass/fail verdict that is repeated in the terminal summary."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{name}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
