import numpy as np
import pytest

from zorro import tensor as T


def numeric_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn`` at every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        out[idx] = (fn(xp) - fn(xm)) / (2 * h)
    return out


def max_rel_err(a, b, floor: float = 1e-6) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_op_gradient(op, *shapes, seed=0, trials=20, positive=False, weights=True):
    """Backward of ``sum(w * op(*xs))`` against central differences, per argument."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        xs = [rng.normal(size=s) for s in shapes]
        if positive:
            xs = [np.abs(x) + 0.5 for x in xs]
        out_shape = np.shape(op(*[T.Tensor(x) for x in xs]).data)
        w = rng.normal(size=out_shape) if weights else np.ones(out_shape)
        leaves = [T.Tensor(x, requires_grad=True) for x in xs]
        got = T.grad(T.tsum(op(*leaves) * w), leaves)
        for i, x in enumerate(xs):
            def f(v, i=i):
                args = [T.Tensor(v if j == i else xs[j]) for j in range(len(xs))]
                return float(np.sum(op(*args).data * w))
            worst = max(worst, max_rel_err(got[i], numeric_grad(f, x)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
