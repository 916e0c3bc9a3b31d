import numpy as np
import pytest

from nafd.model import SystemConfig, uniform_correlations


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small():
    """Small well-conditioned system with imperfect CSI everywhere."""
    cfg = SystemConfig.from_snr(0.0, 0.0, M=4, N_U=2, N_D=2, K_U=3, K_D=3,
                                tau2_ul=0.1, tau2_dl=0.1, tau2_I=0.1, alpha=0.5)
    return cfg, uniform_correlations(cfg)


def scalar_realization(g=2.0, ghat=None, u=None):
    """M = N_D = K_D = 1 realization with no uplink users."""
    from nafd.model import ChannelRealization
    g = np.array([[g]], dtype=complex)
    gh = g if ghat is None else np.array([[ghat]], dtype=complex)
    U = np.zeros((1, 0)) if u is None else np.array(u, dtype=complex)
    K_U = U.shape[1]
    z = np.zeros((1, K_U), dtype=complex)
    return ChannelRealization(z, g, np.zeros((1, 1)), U, z, gh, np.zeros((1, 1)))
