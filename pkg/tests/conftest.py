import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("pkg", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("pkg")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import helpers
    if not helpers.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(helpers.ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = helpers.ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {cid}: {detail}")
