import numpy as np
import pytest

from nafd.errors import ConfigurationError
from nafd.model import (CorrelationSet, GeometryScenario, SystemConfig, build_geometry,
                        correlations_from_geometry, db2lin, exponential_correlation,
                        pathloss_correlation, rau_layout, sample_realization,
                        uniform_correlations)


def test_db2lin():
    assert db2lin(10.0) == pytest.approx(10.0)
    assert db2lin(0.0) == 1.0


def test_config_broadcasts_and_validates():
    c = SystemConfig(M=2, N_U=3, N_D=2, K_U=4, K_D=5, tau2_dl=0.1)
    assert c.p_ul.shape == (4,)
    assert c.tau2_ul.shape == (4, 3)
    assert c.tau2_dl.shape == (5, 2)
    assert c.tau2_I.shape == (4, 3)
    np.testing.assert_allclose(c.phi_dl, np.sqrt(0.9))


@pytest.mark.parametrize("kw, path", [({"M": 0}, "M"), ({"tau2_dl": 1.5}, "tau2_dl"),
                                      ({"P": -1.0}, "P"), ({"alpha": -1.0}, "alpha")])
def test_config_errors_name_field(kw, path):
    base = dict(M=2, N_U=1, N_D=1, K_U=1, K_D=1)
    with pytest.raises(ConfigurationError) as e:
        SystemConfig(**{**base, **kw})
    assert e.value.path == path


def test_from_snr():
    c = SystemConfig.from_snr(10.0, -10.0, M=1, N_U=1, N_D=1, K_U=1, K_D=1, sigma2_dl=2.0)
    assert c.P == pytest.approx(20.0)
    assert c.p_ul[0] == pytest.approx(0.1)


def test_resize_uniform_grids():
    c = SystemConfig(M=2, N_U=1, N_D=1, K_U=2, K_D=2, tau2_dl=0.2)
    r = c.resize(K_U=6, K_D=4)
    assert r.tau2_dl.shape == (4, 1) and np.all(r.tau2_dl == 0.2)


def test_pathloss_examples():
    np.testing.assert_allclose(pathloss_correlation(1.0, 3.7, 2.0, 3), 2.0 * np.eye(3))
    np.testing.assert_allclose(pathloss_correlation(0.5, 3.7, 1.0, 2), 0.5 ** -3.7 * np.eye(2))
    assert 0.5 ** -3.7 == pytest.approx(12.996, abs=1e-3)
    np.testing.assert_allclose(pathloss_correlation(0.2, 0.0, 1.5, 2), 1.5 * np.eye(2))


def test_pathloss_clamps_to_r0():
    np.testing.assert_allclose(pathloss_correlation(0.001, 3.7, 1.0, 1, r0_km=0.03),
                               pathloss_correlation(0.03, 3.7, 1.0, 1))


def test_exponential_correlation_psd():
    T = exponential_correlation(6, 0.5)
    assert np.all(np.linalg.eigvalsh(T) > 0)
    assert T[0, 3] == pytest.approx(0.125)


def test_layout_nafd_alternates():
    sc = GeometryScenario("NAFD")
    rx, tx = rau_layout(sc, 4, 4)
    ang = lambda p: np.degrees(np.arctan2(p[:, 1], p[:, 0])) % 360  # noqa: E731
    np.testing.assert_allclose(np.sort(ang(rx)), [0, 90, 180, 270], atol=1e-9)
    np.testing.assert_allclose(np.sort(ang(tx)), [45, 135, 225, 315], atol=1e-9)
    np.testing.assert_allclose(np.hypot(*rx.T), 500.0)


def test_layout_massive_and_cran():
    rx, tx = rau_layout(GeometryScenario("CCFD_MASSIVE"), 4, 4)
    assert not np.any(rx) and not np.any(tx)
    rx, tx = rau_layout(GeometryScenario("CCFD_CRAN"), 4, 4)
    np.testing.assert_allclose(rx, tx)
    with pytest.raises(ConfigurationError):
        rau_layout(GeometryScenario("CCFD_CRAN"), 4, 3)


def test_users_respect_min_distance():
    sc = GeometryScenario("NAFD")
    cfg = SystemConfig(M=1, N_U=4, N_D=4, K_U=5000, K_D=5000)
    g = build_geometry(sc, cfg, np.random.default_rng(0))
    raus = np.vstack([g.rau_positions_rx, g.rau_positions_tx])
    for users in (g.user_positions_ul, g.user_positions_dl):
        d = np.linalg.norm(users[:, None] - raus[None], axis=-1)
        assert d.min() >= 30.0
        assert np.hypot(*users.T).max() <= 1000.0


def test_geometry_deterministic():
    sc = GeometryScenario("NAFD")
    cfg = SystemConfig(M=2, N_U=2, N_D=2, K_U=3, K_D=3)
    a = build_geometry(sc, cfg, np.random.default_rng(7))
    b = build_geometry(sc, cfg, np.random.default_rng(7))
    assert np.array_equal(a.user_positions_ul, b.user_positions_ul)


def test_ccfd_self_interference_blocks():
    sc = GeometryScenario("CCFD_CRAN")
    cfg = SystemConfig(M=4, N_U=2, N_D=2, K_U=2, K_D=2)
    cs = correlations_from_geometry(build_geometry(sc, cfg, np.random.default_rng(0)), sc, cfg)
    # tx antennas of RAU 0 (rows 0..3) into the co-located rx RAU 0
    np.testing.assert_allclose(cs.T_I[:4, 0], np.broadcast_to(0.25 * np.eye(4), (4, 4, 4)))
    cs.check(cfg)


def test_perfect_csi_estimates_equal_truth(rng):
    cfg = SystemConfig(M=2, N_U=2, N_D=2, K_U=2, K_D=3)
    r = sample_realization(cfg, uniform_correlations(cfg), rng)
    assert np.array_equal(r.Ghat_dl, r.G_dl)
    assert np.array_equal(r.Ghat_ul, r.G_ul)
    assert np.array_equal(r.Ghat_I, r.G_I)


def test_useless_csi_is_uncorrelated(rng):
    cfg = SystemConfig(M=1, N_U=1, N_D=1, K_U=1, K_D=1, tau2_dl=1.0)
    cs = uniform_correlations(cfg)
    pairs = []
    for _ in range(10_000):
        r = sample_realization(cfg, cs, rng)
        pairs.append((r.G_dl[0, 0], r.Ghat_dl[0, 0]))
    a, b = np.array(pairs).T
    corr = abs(np.vdot(a, b)) / np.sqrt(np.vdot(a, a).real * np.vdot(b, b).real)
    assert corr < 0.05


def test_estimate_covariance_matches_T(rng):
    M = 3
    cfg = SystemConfig(M=M, N_U=1, N_D=1, K_U=1, K_D=1, tau2_dl=0.1)
    T = 2.0 * exponential_correlation(M, 0.6)
    cs = CorrelationSet(np.eye(M)[None, None], T[None, None],
                        np.broadcast_to(np.eye(M), (M, 1, M, M)), np.ones((1, 1)))
    draws = np.array([sample_realization(cfg, cs, rng).Ghat_dl[:, 0] for _ in range(100_000)])
    C = draws.T @ draws.conj() / len(draws) * M   # h has variance 1/M
    assert np.linalg.norm(C - T) / np.linalg.norm(T) < 0.02


def test_correlation_check_rejects_non_hermitian():
    cfg = SystemConfig(M=2, N_U=1, N_D=1, K_U=1, K_D=1)
    bad = np.array([[1.0, 0.5], [0.0, 1.0]])
    cs = CorrelationSet(np.eye(2)[None, None], bad[None, None],
                        np.broadcast_to(np.eye(2), (2, 1, 2, 2)), np.ones((1, 1)))
    with pytest.raises(ConfigurationError):
        cs.check(cfg)
