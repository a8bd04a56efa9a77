import numpy as np
import pytest

from expsig.signature import TimeSeries


def iterated_integrals(values, level, refine=400):
    """Brute-force iterated integrals of the piecewise-linear path through ``values``.

    Trapezoid recursion ``S_n(t + h) = S_n(t) + (S_{n-1}(t) + S_{n-1}(t + h)) / 2 (x) dX``
    on a grid ``refine`` times finer than the input; independent of the Chen
    product and of tensor exponentials.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    d = values.shape[1]
    fine = [values[0]]
    for a, b in zip(values[:-1], values[1:]):
        for k in range(1, refine + 1):
            fine.append(a + (b - a) * k / refine)
    fine = np.array(fine)
    S = [np.ones(())] + [np.zeros((d,) * n) for n in range(1, level + 1)]
    for p0, p1 in zip(fine[:-1], fine[1:]):
        dx = p1 - p0
        new = [S[0]]
        for n in range(1, level + 1):
            # S_{n-1}(t+h) uses the already-updated lower level
            avg = 0.5 * (S[n - 1] + new[n - 1])
            new.append(S[n] + np.multiply.outer(avg, dx))
        S = new
    return S


@pytest.fixture
def rng():
    return np.random.default_rng(20231016)


def random_series(rng, N, d, scale=1.0):
    t = np.cumsum(rng.uniform(0.1, 1.0, N))
    return TimeSeries(t, scale * rng.normal(size=(N, d)))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
