import os
import sys

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE = {}


def record(number, ok, detail, part=None):
    """Store the verdict for (one part of) acceptance criterion ``number``.

    The terminal summary prints one line per criterion, PASS only when every
    recorded part passed.
    """
    ok = bool(ok)
    ACCEPTANCE.setdefault(number, {})[part] = (ok, detail)
    print(f"criterion {number}{'' if part is None else ' [' + part + ']'}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def summary_lines():
    out = []
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        ok = all(v[0] for v in parts.values())
        detail = "; ".join(v[1] if p is None else f"{p}: {v[1]}" for p, v in parts.items())
        out.append(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return out


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in summary_lines():
            terminalreporter.write_line(line)
