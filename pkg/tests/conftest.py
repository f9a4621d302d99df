import random

import pytest

from privpoly.codec import FieldParams
from privpoly.paillier import keygen


@pytest.fixture(scope="session")
def field():
    return FieldParams.generate(200, random.Random("tests/omega"))


@pytest.fixture(scope="session")
def keys512():
    return keygen(512, random.Random("tests/key512"))


@pytest.fixture
def rng():
    return random.Random(1234)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
