from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def hl7_dir() -> Path:
    return FIXTURES / "hl7"
