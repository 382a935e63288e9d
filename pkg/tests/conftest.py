import numpy as np
import pytest

from whittlemaint.index import w_index
from whittlemaint.model import MachineSpec, Mode, TopState, load_json

FIXTURE = "illustrative_fleet.json"


def _increasing(rng, n, lo, hi):
    return lo + np.cumsum(rng.uniform(0.0, (hi - lo) / n, n))


def random_spec(rng: np.random.Generator, n_states: int, mode: Mode = Mode.WITH_FAILURES,
                beta: float | None = None, kernel: str = "random") -> MachineSpec:
    """A valid machine with generic (non-parametric) transition and cost structure."""
    n = n_states
    beta = rng.uniform(0.85, 0.98) if beta is None else beta
    if mode is Mode.WITH_FAILURES:
        pf = np.concatenate([[0.0], np.sort(rng.uniform(0.0, 0.25, n - 1))])
    else:
        pf = np.zeros(n)
    pa = np.sort(rng.uniform(0.02, 0.5, n))
    pa = np.minimum(pa, 1.0 - pf)
    pa = np.maximum.accumulate(pa)
    pa = np.minimum(pa, 1.0 - pf)
    pa[-1] = 0.0
    P1 = np.zeros((n, n))
    for x in range(1, n):
        if kernel == "perfect":
            P1[x, 0] = 1.0
        else:
            w = np.sort(rng.uniform(0.05, 1.0, x))[::-1] * np.linspace(1.0, 0.5, x)
            P1[x, :x] = w / w.sum()
    K = _increasing(rng, n, rng.uniform(0, 30), rng.uniform(40, 200))
    C = _increasing(rng, n, rng.uniform(20, 150), rng.uniform(200, 500))
    B = 0.0 if mode is Mode.PURE_DETERIORATION else rng.uniform(0.0, 10.0) * C.mean()
    return MachineSpec(beta=beta, n_states=n, p_advance=pa, p_fail=pf, intervention_kernel=P1,
                       op_cost=K, maint_cost=C, fail_cost=B, mode=mode, top_state=TopState.ABSORB)


def random_indexable(rng, n_states, mode=Mode.WITH_FAILURES, **kw) -> MachineSpec:
    for _ in range(1000):
        s = random_spec(rng, n_states, mode, **kw)
        if w_index(s).indexable:
            return s
    raise RuntimeError("no indexable spec drawn")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def illustrative_fleet():
    from importlib import resources
    path = resources.files("whittlemaint").joinpath("data", FIXTURE)
    return load_json(str(path))


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
