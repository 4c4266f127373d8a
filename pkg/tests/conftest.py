import numpy as np
import pytest

from cephalo3d.volgrid import Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x, h=1e-4):
    """Finite-difference gradient of scalar f() w.r.t. array x (perturbed in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def max_rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def ramp_volume(dims=(9, 7, 11), spacing=(0.7, 1.3, 0.9), origin=(-3.0, 2.0, 5.0), coef=(1.0, 0.0, 0.0), c0=0.0):
    idx = np.indices(dims, dtype=np.float64)
    world = [origin[a] + idx[a] * spacing[a] for a in range(3)]
    data = c0 + sum(coef[a] * world[a] for a in range(3))
    return Volume(data, spacing=spacing, origin=origin)


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test outcome decides PASS/FAIL."""
    entry = {"name": request.node.name, "detail": ""}
    ACCEPTANCE.append(entry)

    def note(text):
        entry["detail"] = text

    yield note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        for entry in ACCEPTANCE:
            if entry["name"] == item.name:
                entry["passed"] = rep.passed


def pytest_terminal_summary(terminalreporter):
    done = [e for e in ACCEPTANCE if "passed" in e]
    if not done:
        return
    terminalreporter.section("acceptance criteria")
    for e in done:
        status = "PASS" if e["passed"] else "FAIL"
        terminalreporter.write_line(f"{status}  {e['name']}  {e['detail']}".rstrip())
