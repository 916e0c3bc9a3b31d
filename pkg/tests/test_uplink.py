import numpy as np
import pytest

from nafd.downlink import rzf_precoder
from nafd.model import (ChannelRealization, CorrelationSet, SystemConfig, sample_realization,
                        uniform_correlations)
from nafd.streams import trial_streams
from nafd.uplink import (ResidualCovariance, interference_error_diag, mc_ul_sum_rate,
                         mmse_combiner, residual_covariance, ul_sinr)


def _scalar_ul(g=1.0, ghat=1.0):
    z = np.zeros((1, 1), dtype=complex)
    return ChannelRealization(np.array([[g]], dtype=complex), z, z, z,
                              np.array([[ghat]], dtype=complex), z, z)


def test_interference_error_scalar():
    cfg = SystemConfig(M=1, N_U=1, N_D=1, K_U=1, K_D=1, tau2_I=0.1)
    a = interference_error_diag(uniform_correlations(cfg), cfg.tau2_I, 1, 1)
    assert a[0, 0] == pytest.approx(2 * (1 - np.sqrt(0.9)))
    assert a[0, 0] == pytest.approx(0.10263, abs=1e-5)


def test_interference_error_linear_in_T(small):
    cfg, cs = small
    cs4 = CorrelationSet(cs.T_ul, cs.T_dl, 4 * np.asarray(cs.T_I), cs.T_uu)
    a = interference_error_diag(cs, cfg.tau2_I, cfg.M, cfg.N_U)
    np.testing.assert_allclose(interference_error_diag(cs4, cfg.tau2_I, cfg.M, cfg.N_U), 4 * a)


def test_perfect_interference_csi_gives_noise_only(small, rng):
    cfg, cs = small
    cfg = cfg.replace(tau2_I=0.0)
    r = sample_realization(cfg, cs, rng)
    W = rzf_precoder(r.Ghat_dl, 1.0, cfg.P, cfg.M, cfg.N_D)
    S = residual_covariance(cs, cfg.tau2_I, W, cfg)
    np.testing.assert_array_equal(S.delta, cfg.sigma2_ul)


def test_sigma_diagonal_above_noise(small, rng):
    cfg, cs = small
    r = sample_realization(cfg, cs, rng)
    W = rzf_precoder(r.Ghat_dl, 1.0, cfg.P, cfg.M, cfg.N_D)
    S = residual_covariance(cs, cfg.tau2_I, W, cfg)
    assert S.matrix.shape == (cfg.M * cfg.N_U,) * 2
    assert np.all(S.delta >= cfg.sigma2_ul)
    assert np.count_nonzero(S.matrix - np.diag(np.diag(S.matrix))) == 0


def test_mmse_scalar():
    R = mmse_combiner(np.array([[1.0]]), ResidualCovariance(np.array([1.0])), np.array([1.0]))
    assert R[0, 0] == pytest.approx(0.5)


def test_mmse_limits():
    G = np.ones((3, 2))
    assert np.abs(mmse_combiner(G, np.full(3, 1e15), np.ones(2))).max() < 1e-14
    assert not np.any(mmse_combiner(np.zeros((3, 2)), np.ones(3), np.ones(2)))


def test_ul_sinr_scalar():
    s = ul_sinr(_scalar_ul(), ResidualCovariance(np.array([1.0])), np.array([1.0]))
    assert s.sinr[0] == pytest.approx(1.0)


def test_single_user_mrc(rng):
    g = rng.standard_normal((6, 1)) + 1j * rng.standard_normal((6, 1))
    z = np.zeros((1, 1))
    r = ChannelRealization(g, z, z, z, g, z, z)
    s = ul_sinr(r, np.full(6, 2.0), np.array([3.0])).sinr[0]
    assert s == pytest.approx(3.0 * np.linalg.norm(g) ** 2 / 2.0)


def test_more_residual_hurts_every_user(small, rng):
    cfg, cs = small
    r = sample_realization(cfg, cs, rng)
    d = np.linspace(1.0, 2.0, cfg.M * cfg.N_U)
    a = ul_sinr(r, d, cfg.p_ul).sinr
    b = ul_sinr(r, 1.5 * d, cfg.p_ul).sinr
    assert np.all(b < a)


def test_mc_single_trial_equals_direct(small):
    cfg, cs = small
    get = trial_streams(9)
    res = mc_ul_sum_rate(cfg, cs, "rzf", 1, get)
    r = sample_realization(cfg, cs, get(0))
    W = rzf_precoder(r.Ghat_dl, cfg.alpha, cfg.P, cfg.M, cfg.N_D)
    S = residual_covariance(cs, cfg.tau2_I, W, cfg)
    assert res.mean == ul_sinr(r, S, cfg.p_ul).sum_rate


def test_perfect_interference_csi_invariant_to_P(small):
    cfg, cs = small
    cfg = cfg.replace(tau2_I=0.0)
    a = mc_ul_sum_rate(cfg, cs, "rzf", 10, trial_streams(1))
    b = mc_ul_sum_rate(cfg.replace(P=100.0), cs, "rzf", 10, trial_streams(1))
    assert a.mean == b.mean


def test_uplink_monotone_in_interference_csi(small):
    cfg, cs = small
    vals = []
    for t in (0.0, 0.2, 0.5):
        tau = np.array(cfg.tau2_I)
        tau[2, 1] = t
        vals.append(mc_ul_sum_rate(cfg.replace(tau2_I=tau), cs, "rzf", 10,
                                   trial_streams(2)).mean)
    assert vals[0] >= vals[1] >= vals[2]
