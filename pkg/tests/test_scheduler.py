import itertools

import numpy as np
import pytest

from nafd.errors import ConfigurationError, PartitionError, SearchSpaceError
from nafd.model import CorrelationSet, SystemConfig, uniform_correlations
from nafd.scheduler import (GaParams, SchedulingPartition, UserPool, exhaustive_schedule,
                            ga_schedule, group_iud, iud_objective, partition_count,
                            random_schedule)


def _pool(n_ul=4, n_dl=4, K=2, seed=0, gain_uu=1.0, M=1):
    cfg = SystemConfig.from_snr(5.0, 0.0, M=M, N_U=2, N_D=2, K_U=K, K_D=K, tau2_I=0.1,
                                alpha=1.0)
    full = cfg.resize(K_U=n_ul, K_D=n_dl)
    rng = np.random.default_rng(seed)
    rand = gain_uu == "random"
    cs = uniform_correlations(full, gain_uu=1.0 if rand else gain_uu)
    if rand:
        cs = CorrelationSet(cs.T_ul, cs.T_dl, cs.T_I, rng.exponential(size=(n_dl, n_ul)))
    return cfg, UserPool(cfg, cs, rng)


def test_partition_canonical_and_labels():
    p = SchedulingPartition((((3, 1), (2, 0)), ((0, 2), (3, 1))))
    assert p.groups == (((0, 2), (1, 3)), ((1, 3), (0, 2)))
    ul, dl = p.labels(4, 4)
    assert SchedulingPartition.from_labels(ul, dl) == p
    p.validate(range(4), range(4), 2, 2)


@pytest.mark.parametrize("groups", [
    (((0, 1), (0,)), ((2, 3), (1, 2))),          # wrong size
    (((0, 1), (0, 1)), ((1, 3), (2, 3))),        # overlap
    (((0, 1), (0, 1)), ((2, 4), (2, 3))),        # not covering
])
def test_partition_validation(groups):
    with pytest.raises(PartitionError):
        SchedulingPartition(groups).validate(range(4), range(4), 2, 2)


def test_zero_cross_channel_gives_zero_iud():
    cfg, pool = _pool(gain_uu=0.0)
    p = random_schedule(pool.waiting, cfg, np.random.default_rng(1))
    assert iud_objective(p, pool) == 0.0
    ex = exhaustive_schedule(pool.waiting, cfg, pool)
    assert ex.encoding() == min(q.encoding() for q in _all(pool.waiting, cfg))


def _all(waiting, cfg):
    ul, dl = waiting
    out = set()
    for pu in itertools.permutations(ul):
        for pd in itertools.permutations(dl):
            g = [(pu[i:i + cfg.K_U], pd[i:i + cfg.K_D]) for i in range(0, len(pu), cfg.K_U)]
            out.add(SchedulingPartition(tuple(g)))
    return out


def test_single_group_is_unique():
    cfg, pool = _pool(n_ul=2, n_dl=2)
    ex = exhaustive_schedule(pool.waiting, cfg, pool)
    rnd = random_schedule(pool.waiting, cfg, np.random.default_rng(0))
    assert ex == rnd
    assert partition_count(2, 2, 2, 2) == 1


def test_two_group_toy_by_hand():
    cfg, pool = _pool(n_ul=2, n_dl=2, K=1, gain_uu="random")
    r = pool.realization
    # enumerate both partitions; evaluate each group's IUD from the formulas
    from nafd.downlink import rzf_precoder
    from nafd.uplink import residual_covariance, ul_sinr

    def group(u, d):
        real, gc, gcs = pool.group([u], [d])
        W = rzf_precoder(real.Ghat_dl, gc.alpha, gc.P, gc.M, gc.N_D)
        S = residual_covariance(gcs, gc.tau2_I, W, gc)
        gul = ul_sinr(real, S, gc.p_ul).sinr[0]
        sig = np.abs(real.G_dl[:, 0].conj() @ W.W[:, 0]) ** 2
        pu = gc.p_ul[0] * np.abs(r.U[d, u]) ** 2
        rU = np.log2(1 + pu / (sig + gc.sigma2_dl))
        return rU if rU < np.log2(1 + gul) else 0.0

    want = {SchedulingPartition((((0,), (0,)), ((1,), (1,)))): group(0, 0) + group(1, 1),
            SchedulingPartition((((0,), (1,)), ((1,), (0,)))): group(0, 1) + group(1, 0)}
    for p, v in want.items():
        assert iud_objective(p, pool) == pytest.approx(v, rel=1e-12)
    best = exhaustive_schedule(pool.waiting, cfg, pool)
    assert iud_objective(best, pool) == pytest.approx(min(want.values()))


def test_iud_objective_triples_match_pool():
    cfg, pool = _pool()
    p = random_schedule(pool.waiting, cfg, np.random.default_rng(3))
    triples = [pool.group(ul, dl) for ul, dl in p.groups]
    assert iud_objective(p, triples, cfg) == pytest.approx(iud_objective(p, pool))
    assert group_iud(*triples[0])[0] >= 0


def test_exhaustive_is_global_minimum():
    cfg, pool = _pool(gain_uu="random", seed=4)
    ex = exhaustive_schedule(pool.waiting, cfg, pool)
    vals = [iud_objective(p, pool) for p in _all(pool.waiting, cfg)]
    assert iud_objective(ex, pool) == pytest.approx(min(vals))
    assert len(vals) == partition_count(4, 4, 2, 2)


def test_exhaustive_guard():
    cfg, pool = _pool(n_ul=8, n_dl=8)
    with pytest.raises(SearchSpaceError):
        exhaustive_schedule(pool.waiting, cfg, pool, limit=100)


def test_ga_finds_optimum_on_desk_instance():
    cfg, pool = _pool(gain_uu="random", seed=11)
    res = ga_schedule(pool.waiting, cfg, GaParams(population=20, iterations=50, seed=1), pool)
    ex = exhaustive_schedule(pool.waiting, cfg, pool)
    assert res.best_iud == pytest.approx(iud_objective(ex, pool))
    res.best.validate(*pool.waiting, cfg.K_U, cfg.K_D)


def test_ga_history_non_increasing_and_deterministic():
    cfg, pool = _pool(n_ul=8, n_dl=8, gain_uu="random", seed=2)
    prm = GaParams(population=10, iterations=15, seed=5)
    a = ga_schedule(pool.waiting, cfg, prm, pool)
    b = ga_schedule(pool.waiting, cfg, prm, pool)
    assert a.best == b.best and a.history == b.history
    assert all(x >= y for x, y in zip(a.history, a.history[1:]))


def test_ga_no_op_evolution():
    cfg, pool = _pool(n_ul=8, n_dl=8)
    init = random_schedule(pool.waiting, cfg, np.random.default_rng(0))
    prm = GaParams(population=1, iterations=5, crossover=0.0, mutation=0.0, seed=0)
    assert ga_schedule(pool.waiting, cfg, prm, pool, initial=init).best == init


def test_ga_beats_random_mean():
    cfg, pool = _pool(n_ul=8, n_dl=8, gain_uu="random", seed=6)
    res = ga_schedule(pool.waiting, cfg, GaParams(seed=0), pool)
    rng = np.random.default_rng(0)
    rnd = [iud_objective(random_schedule(pool.waiting, cfg, rng), pool) for _ in range(200)]
    assert res.best_iud <= np.mean(rnd)


def test_random_schedule_valid_and_seeded():
    cfg, pool = _pool(n_ul=8, n_dl=8)
    a = random_schedule(pool.waiting, cfg, np.random.default_rng(9))
    b = random_schedule(pool.waiting, cfg, np.random.default_rng(9))
    assert a == b
    a.validate(*pool.waiting, 2, 2)


def test_divisibility_error():
    cfg = SystemConfig(M=1, N_U=2, N_D=2, K_U=3, K_D=3)
    with pytest.raises(ConfigurationError):
        random_schedule((range(8), range(9)), cfg, np.random.default_rng(0))


@pytest.mark.parametrize("kw", [{"population": 0}, {"crossover": 1.5}, {"mutation": -0.1},
                                {"iterations": -1}])
def test_ga_params_validation(kw):
    with pytest.raises(ConfigurationError):
        GaParams(**kw)
