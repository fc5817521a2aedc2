import os

# the desk-scale experiment budget is stated for one CPU core
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from hypflow import flows as F  # noqa: E402
from hypflow import lorentz as L  # noqa: E402

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def random_point(rng, n, radius=1.0, scale=1.0, count=None):
    shape = (n,) if count is None else (count, n)
    return L.lift_to_hyperboloid(scale * rng.standard_normal(shape), radius)


def random_tangent(rng, x, radius=1.0, scale=1.0):
    """Random tangent vector at x with Lorentz norm about ``scale``."""
    u = rng.standard_normal(np.shape(x))
    v = L.tangent_projection(x, u, radius)
    norm = np.sqrt(np.maximum(L.minkowski_inner(v, v, keepdims=True), 1e-300))
    return scale * v / norm


def randomize(stack, rng, scale=0.3):
    """Give every parameter of a stack random values (nets start at identity)."""
    stack.set_parameters([scale * rng.standard_normal(p.shape) for p in stack.parameters()])
    return stack


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_stack():
    def build(kind, n, n_layers, seed=0, hidden=(8,), radius=1.0, scale=0.3):
        stack = F.FlowStack.create(kind, n, n_layers, seed, hidden=hidden, radius=radius)
        return randomize(stack, np.random.default_rng(seed + 100), scale)
    return build


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
