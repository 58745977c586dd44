import numpy as np
import pytest

from totalhsic.kernel import ParameterBlock


def dense_gaussian(x, sigma):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2 * sigma**2))


def dense_augmented(blocks, subset):
    """K_A = prod_{i in A} (J + H K_i H), built with explicit n x n matrices."""
    n = blocks[0].n
    H = np.eye(n) - np.ones((n, n)) / n
    K = np.ones((n, n))
    for i in subset:
        G = dense_gaussian(blocks[i].samples, blocks[i].bandwidth)
        K = K * (np.ones((n, n)) + H @ G @ H)
    return K


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_blocks(rng, n, p, dim=1):
    return [ParameterBlock.from_samples(f"X{i + 1}", rng.normal(size=(n, dim))) for i in range(p)]


_CRITERIA = pytest.StashKey()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
