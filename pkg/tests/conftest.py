import pytest
from hypothesis import settings

settings.register_profile("ci", deadline=None, derandomize=True)
settings.load_profile("ci")

# criterion id -> (status, detail), filled by the acceptance suite
ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    def record(cid, ok, detail=""):
        status = "N/A" if ok is None else ("PASS" if ok else "FAIL")
        ACCEPTANCE[cid] = (status, detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        status, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {status}: {detail}")
