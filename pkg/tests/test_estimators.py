import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nafd.estimators import GaScheduler, SumRateEstimator
from nafd.model import SystemConfig, uniform_correlations
from nafd.scheduler import UserPool


def test_sum_rate_estimator_de_and_mc_agree(small):
    cfg, cs = small
    de = SumRateEstimator(method="de").fit(cfg, cs)
    mc = SumRateEstimator(method="mc", trials=400, seed=1).fit(cfg, cs)
    assert de.stderr_ == 0 and mc.sinr_ is None
    assert abs(de.sum_rate_ - mc.sum_rate_) < 0.1 * mc.sum_rate_
    ul = SumRateEstimator(direction="ul").fit(cfg, cs)
    assert ul.score() == ul.sum_rate_ > 0


def test_estimator_params_roundtrip():
    est = clone(SumRateEstimator(alpha="auto", trials=10))
    assert est.get_params()["alpha"] == "auto"
    with pytest.raises(NotFittedError):
        est.score()


def test_ga_scheduler_predict():
    cfg = SystemConfig.from_snr(5, 0, M=1, N_U=2, N_D=2, K_U=2, K_D=2, tau2_I=0.1)
    pool = UserPool(cfg, uniform_correlations(cfg.resize(K_U=4, K_D=4)),
                    np.random.default_rng(0))
    g = GaScheduler(population=8, iterations=5).fit(pool)
    ul, dl = g.predict(pool)
    assert np.bincount(ul).tolist() == [2, 2] and np.bincount(dl).tolist() == [2, 2]
    assert len(g.history_) == 6
