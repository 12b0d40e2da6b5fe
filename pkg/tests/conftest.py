import pytest

import lgqp_sched.env as env_module

from .oracles import infeasibility
from .report import RESULTS, SLOT_AUDIT


@pytest.fixture(autouse=True, scope="session")
def _audit_every_slot():
    """Re-check the constraints of every allocation the environment builds."""
    original = env_module.validate_allocation

    def audited(alloc, cfg, *args, **kwargs):
        SLOT_AUDIT["slots"] += 1
        if infeasibility(alloc, cfg) is not None:
            SLOT_AUDIT["infeasible"] += 1
        return original(alloc, cfg, *args, **kwargs)

    env_module.validate_allocation = audited
    yield
    env_module.validate_allocation = original


def pytest_terminal_summary(terminalreporter):
    if not RESULTS and not SLOT_AUDIT["slots"]:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
    ok = SLOT_AUDIT["infeasible"] == 0
    terminalreporter.write_line(
        f"{'PASS' if ok else 'FAIL'} criterion 3 (whole suite): "
        f"{SLOT_AUDIT['slots']} slots audited, {SLOT_AUDIT['infeasible']} infeasible")
