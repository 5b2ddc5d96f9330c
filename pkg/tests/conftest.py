import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from evinterp.events import EventStream

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_stream(rng, n=200, w=16, h=12, t_max=10_000):
    t = np.sort(rng.integers(0, t_max, n))
    return EventStream(w, h, t, rng.integers(0, w, n), rng.integers(0, h, n), rng.choice([-1, 1], n))


# Acceptance outcomes, one (number, title, passed, detail) tuple per criterion.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")
