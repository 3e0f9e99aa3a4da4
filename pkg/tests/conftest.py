import numpy as np
import pytest

from deepslice.volgeom import Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_volume(rng, shape=(8, 8, 8)) -> Volume:
    return Volume(rng.random(shape).astype(np.float32))


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
