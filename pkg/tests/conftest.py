import numpy as np
import pytest

from swipt_dps.channel import RicianParams, gen_rician
from swipt_dps.model import NonlinearEhParams, SystemParams


def setup(n, seed, snr_db, **sys_kw):
    """Ensemble plus (eh, sys) with the reference parameter set."""
    ens = gen_rician(n, RicianParams(), seed=seed)
    hbar = ens.mean_gain
    p_avg = sys_kw.get("p_avg", 2.0)
    eh = NonlinearEhParams(6400.0, 0.003, hbar * p_avg)
    sys = SystemParams(sigma2=hbar * p_avg / 10 ** (snr_db / 10), **sys_kw)
    return ens, eh, sys


@pytest.fixture
def small():
    return setup(64, 7, 10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
