import numpy as np
import pytest

from conftest import scalar_realization
from nafd.downlink import (dl_sinr, mc_dl_sum_rate, rzf_precoder, zf_precoder)
from nafd.errors import IllConditionedError
from nafd.model import SystemConfig, sample_realization, uniform_correlations
from nafd.streams import trial_streams


def _cgauss(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def test_rzf_scalar_closed_form():
    W = rzf_precoder(np.array([[2.0]]), 1.0, 1.0, 1, 1)
    assert W.xi2 == pytest.approx(6.25)
    assert W.W[0, 0] == pytest.approx(1.0)
    assert np.sum(np.abs(W.W) ** 2) == pytest.approx(1.0)


def test_zf_scalar_closed_form():
    W = zf_precoder(np.array([[2.0]]), 1.0, 1, 1)
    assert W.xi2 == pytest.approx(4.0)
    assert W.W[0, 0] == pytest.approx(1.0)


def test_dl_sinr_scalar():
    cfg = SystemConfig(M=1, N_U=1, N_D=1, K_U=0, K_D=1)
    r = scalar_realization(2.0)
    W = rzf_precoder(r.Ghat_dl, 1.0, 1.0, 1, 1)
    assert dl_sinr(r, W, cfg).sinr[0] == pytest.approx(4.0)


def test_rzf_large_alpha_is_matched_filter(rng):
    G = _cgauss(rng, 8, 3)
    W = rzf_precoder(G, 1e9, 1.0, 4, 2).W
    mf = G * np.sqrt(np.min(4 * 1.0 / np.sum(np.abs(G.reshape(2, 4, 3)) ** 2, axis=(1, 2))))
    np.testing.assert_allclose(W, mf, rtol=1e-6)


@pytest.mark.parametrize("kind", ["rzf", "zf"])
def test_per_rau_power_binding(rng, kind):
    M, N, P = 4, 3, 2.5
    G = _cgauss(rng, M * N, 5)
    W = rzf_precoder(G, 0.3, P, M, N) if kind == "rzf" else zf_precoder(G, P, M, N)
    t = np.sum(np.abs(W.W.reshape(N, M, -1)) ** 2, axis=(1, 2))
    assert np.max(t) == pytest.approx(M * P, rel=1e-9)
    assert np.all(t <= M * P * (1 + 1e-9))


def test_zf_identity(rng):
    G = _cgauss(rng, 12, 5)
    W = zf_precoder(G, 1.0, 4, 3)
    np.testing.assert_allclose(G.conj().T @ W.W, np.sqrt(W.xi2) * np.eye(5), atol=1e-9)


def test_zf_orthonormal_columns(rng):
    Q, _ = np.linalg.qr(_cgauss(rng, 6, 3))
    W = zf_precoder(Q, 1.0, 3, 2)
    np.testing.assert_allclose(W.W, np.sqrt(W.xi2) * Q, atol=1e-12)


def test_zf_rejects_too_many_users(rng):
    with pytest.raises(IllConditionedError, match="K_D=5"):
        zf_precoder(_cgauss(rng, 4, 5), 1.0, 2, 2)


def test_zf_rejects_rank_deficient(rng):
    G = _cgauss(rng, 6, 2)
    G = np.hstack([G, G[:, :1]])
    with pytest.raises(IllConditionedError):
        zf_precoder(G, 1.0, 3, 2)


def test_rzf_small_alpha_approaches_zf(rng):
    G = _cgauss(rng, 16, 6)
    a = rzf_precoder(G, 1e-8, 1.0, 4, 4).W
    b = zf_precoder(G, 1.0, 4, 4).W
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-4


def test_mirrored_raus_share_power(rng):
    M = 4
    G1 = _cgauss(rng, M, 2)
    G = np.vstack([G1, G1])
    W = rzf_precoder(G, 1.0, 1.0, M, 2)
    assert W.rau_power[0] == pytest.approx(W.rau_power[1])


def test_unreachable_user_has_zero_sinr(small, rng):
    cfg, cs = small
    T_dl = np.array(cs.T_dl)
    T_dl[1] = 0
    from nafd.model import CorrelationSet
    cs = CorrelationSet(cs.T_ul, T_dl, cs.T_I, cs.T_uu)
    r = sample_realization(cfg, cs, rng)
    W = rzf_precoder(r.Ghat_dl, 1.0, cfg.P, cfg.M, cfg.N_D)
    assert dl_sinr(r, W, cfg).sinr[1] == 0.0


def test_more_uplink_power_hurts_downlink(small, rng):
    cfg, cs = small
    r = sample_realization(cfg, cs, rng)
    W = rzf_precoder(r.Ghat_dl, 1.0, cfg.P, cfg.M, cfg.N_D)
    a = dl_sinr(r, W, cfg).sinr
    b = dl_sinr(r, W, cfg.replace(p_ul=2 * cfg.p_ul)).sinr
    assert np.all(b < a)


def test_mc_single_trial_equals_direct(small):
    cfg, cs = small
    get = trial_streams(5)
    res = mc_dl_sum_rate(cfg, cs, "rzf", 1, get)
    r = sample_realization(cfg, cs, get(0))
    W = rzf_precoder(r.Ghat_dl, cfg.alpha, cfg.P, cfg.M, cfg.N_D)
    assert res.mean == dl_sinr(r, W, cfg).sum_rate
    assert res.trials == 1


def test_mc_reproducible(small):
    cfg, cs = small
    a = mc_dl_sum_rate(cfg, cs, "zf", 20, trial_streams(3))
    b = mc_dl_sum_rate(cfg, cs, "zf", 20, trial_streams(3))
    assert a.mean == b.mean and a.stderr == b.stderr
    assert a.stderr == pytest.approx(np.std(a.samples, ddof=1) / np.sqrt(20))
