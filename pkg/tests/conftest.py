import numpy as np
import pytest

from beacon.core import TARGET, Dataset


def make_dataset(rng, m, n, dim=3, out=1, n_domains=1):
    X = rng.normal(size=(m + n, dim))
    Y = rng.normal(size=(m + n, out))
    domain = np.concatenate([np.arange(m) % n_domains, np.full(n, TARGET)])
    return Dataset(X, Y, domain, np.zeros(m + n, dtype=bool), n_domains)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
