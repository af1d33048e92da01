"""Shared fixtures and the finite-difference oracle used across the suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tcmatch import autodiff as ad
from tcmatch.text import build_vocab, generate_synthetic, sample_episode

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def numeric_grad(f, arrays, h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``f(*arrays)`` with respect to every entry of every array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            plus = float(f(*arrays))
            arr[idx] = orig - h
            minus = float(f(*arrays))
            arr[idx] = orig
            g[idx] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute deviation, relative to the largest gradient magnitude."""
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(build, arrays, tol: float = 1e-4, h: float = 1e-5) -> float:
    """Compare tape gradients of ``build(*tensors)`` (a scalar Tensor) against central differences.

    Returns the worst relative error over all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()

    def value(*arrs):
        with ad.no_grad():
            return build(*[ad.Tensor(a) for a in arrs]).item()

    numeric = numeric_grad(value, arrays, h)
    worst = max(rel_error(t.grad, n) for t, n in zip(tensors, numeric))
    assert worst < tol, f"relative gradient error {worst:.3e} exceeds {tol:.0e}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_task():
    """Noiseless 8-class synthetic task with two signal tokens per class."""
    return generate_synthetic(8, 20, 40, 2, 0, seed=3)


@pytest.fixture(scope="session")
def small_episode(small_task):
    return sample_episode(small_task.examples, 5, seed=1)


@pytest.fixture(scope="session")
def small_vocab(small_task):
    return build_vocab([ex.text for ex in small_task.examples] + list(small_task.label_set.texts))


# ---------------------------------------------------------------- acceptance summary
_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance_record(request):
    """Record one pass/fail line per acceptance criterion; they are printed at the end of the run."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def record(number: int, passed: bool, detail: str) -> bool:
        lines[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(lines[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
