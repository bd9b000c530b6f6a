from pathlib import Path

import pytest

from mspmdp.oracle import read_fixtures

FIXTURES = Path(__file__).with_name("fixtures") / "oracle_fixtures.json"


@pytest.fixture(scope="session")
def oracle_fixtures():
    if not FIXTURES.exists():
        pytest.fail(f"{FIXTURES} missing; run python3 tests/make_fixtures.py")
    return read_fixtures(FIXTURES)
