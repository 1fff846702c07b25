import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ccdegree.cccore import build_problem  # noqa: E402
from ccdegree.models import hubbard_integrals, random_integrals  # noqa: E402

# lines appended by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES = []


def dimer(U=4.0, scheme="full", field="real"):
    return build_problem(hubbard_integrals(2, 1.0, U), 2, scheme, field)[0]


def chain(U=2.0, scheme="full", field="real", L=4):
    return build_problem(hubbard_integrals(L, 1.0, U), L, scheme, field)[0]


def random_problem(K=6, N=3, seed=2, scheme="ccsd", field="real"):
    return build_problem(random_integrals(K, seed), N, scheme, field)[0]


@pytest.fixture
def dimer_problem():
    return dimer()


@pytest.fixture(scope="session")
def chain_problem():
    return chain()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_key):
            terminalreporter.write_line(line)


def _criterion_key(line):
    head = line.split(":")[0].split()[-1]
    num = "".join(ch for ch in head if ch.isdigit())
    return (int(num) if num else 99, head)
