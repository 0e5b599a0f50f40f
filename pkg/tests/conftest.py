import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crackrestore.data import generate_synthetic_dataset  # noqa: E402


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 train / 2 val / 3 test synthetic images at 64 px."""
    root = tmp_path_factory.mktemp("tiny")
    generate_synthetic_dataset(root, n_train=8, n_test=3, seed=0, n_val=2, size=64)
    return root


ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
