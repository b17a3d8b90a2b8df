import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one verdict line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = []


@pytest.fixture
def verdict():
    def record(label: str, ok: bool, detail: str = "", info: bool = False) -> bool:
        tag = "INFO" if info else ("PASS" if ok else "FAIL")
        line = f"{tag} {label}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
