import numpy as np
import pytest

from photon_atom import AtomParams, EfficiencyChain

# reference experimental parameters used throughout the suite
TAU0 = 26.2
TAU_P = 13.3
OVERLAP = 0.033


@pytest.fixture
def atom():
    return AtomParams(tau0=TAU0, overlap=OVERLAP)


@pytest.fixture
def chain():
    return EfficiencyChain(eta_f=3.70e-3, eta_f_tilde=0.0155,
                           eta_b=0.0126, eta_q=0.56)


@pytest.fixture
def fine_grid():
    """0.01 ns step over [-8, +8] tau_p, with t = 0 an exact sample."""
    n = int(round(8 * TAU_P / 0.01))
    return 0.01 * np.arange(-n, n + 1)
