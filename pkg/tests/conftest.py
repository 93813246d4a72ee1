import numpy as np
import pytest

from groundnmf import FactorModel, SupportSets, project_scaled_simplex


def random_model(rng, d, K, N, lam=1.0, support_density=0.6, interior=False):
    """Feasible random model; ``interior`` keeps every entry strictly positive."""
    A = np.column_stack([project_scaled_simplex(rng.gamma(1.0, size=d), lam) for _ in range(K)])
    if interior:
        A = rng.dirichlet(np.ones(d), size=K).T * lam
    mask = rng.random((K, N)) < support_density
    W = np.where(mask, rng.uniform(0.05, 0.95, size=(K, N)), 0.0)
    b = rng.uniform(0.1, 1.0, size=d)
    return FactorModel(A=A, W=W, b=b, lam=lam), SupportSets.from_mask(mask)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in results:
        terminalreporter.write_line(line)
