from __future__ import annotations

import numpy as np
import pytest

from dalock.corpus import empirical_distribution, synthesize_zipf
from dalock.oracle import oracle_exact

# Details recorded by acceptance tests, keyed by criterion number.
_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, title: str, detail: str) -> None:
        _CRITERIA[number] = (title, detail)
    return record


def pytest_terminal_summary(terminalreporter):
    outcomes: dict[int, str] = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            name = report.nodeid.rsplit("::", 1)[-1]
            if not name.startswith("test_criterion_") or report.when not in ("call", "setup"):
                continue
            number = int(name.split("_")[2])
            if status == "passed" and report.when == "call":
                outcomes.setdefault(number, "PASS")
            elif status != "passed":
                outcomes[number] = "FAIL"
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(outcomes):
        title, detail = _CRITERIA.get(number, ("", "no measurement recorded"))
        terminalreporter.write_line(f"{outcomes[number]}  criterion {number:>2}  {title}: {detail}")


@pytest.fixture(scope="session")
def desk_corpus():
    return synthesize_zipf(100_000, 1.0, 1_000_000)


@pytest.fixture(scope="session")
def desk_dist(desk_corpus):
    return empirical_distribution(desk_corpus)


@pytest.fixture(scope="session")
def desk_oracle(desk_dist):
    return oracle_exact(desk_dist)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
