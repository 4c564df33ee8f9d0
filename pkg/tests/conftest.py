import numpy as np
import pytest

from pat_recon.forward import ModelMatrix
from pat_recon.wavelet import CsOperator, WaveletBasis


def dense_operator(a):
    """CsOperator around a dense matrix with the identity basis."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return CsOperator(ModelMatrix.from_matrix(a), WaveletBasis(a.shape[1], 1, levels=0))


def sparse_instance(seed, rows=40, cols=100, k=5):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((rows, cols))
    theta = np.zeros(cols)
    theta[rng.choice(cols, k, replace=False)] = rng.standard_normal(k)
    return a, theta


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])
