import numpy as np
import pytest

from polycomp.cmp import PolicyParams, TabularCmp


def absorbing_chain(discount=0.9, n_actions=1):
    """s0 moves to s1 under every action, s1 is absorbing, start in s0."""
    P = np.zeros((2, n_actions, 2))
    P[:, :, 1] = 1.0
    return TabularCmp(P, np.array([1.0, 0.0]), discount)


def one_state(n_actions=2, discount=0.9):
    return TabularCmp(np.ones((1, n_actions, 1)), np.ones(1), discount)


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def chain():
    return absorbing_chain()


@pytest.fixture
def coin():
    return one_state(2)


def probs_params(*rows):
    return PolicyParams.from_probs(np.array(rows, dtype=float))


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
