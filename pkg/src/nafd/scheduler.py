"""User scheduling that minimizes uncancellable UL-to-DL interference (IUD).

Waiting users are split into ``L`` groups of ``K_U`` uplink and ``K_D``
downlink users; each group is served in its own resource block.  Channels
are drawn once per user (and per uplink/downlink user pair) and frozen, so
the objective of a group depends only on its members and the whole search
is deterministic.
"""

import itertools
from dataclasses import dataclass
from math import factorial

import numpy as np

from .downlink import dl_sinr, rzf_precoder
from .errors import ConfigurationError, PartitionError, SearchSpaceError
from .model import ChannelRealization, sample_realization
from .uplink import residual_covariance, ul_sinr

FITNESS_EPS = 1e-9
SEARCH_LIMIT = 10 ** 6
STALL_MIN = 10


@dataclass(frozen=True)
class SchedulingPartition:
    """``groups[l] = (uplink ids, downlink ids)``, both sorted tuples.

    Groups are kept in canonical order (by smallest uplink id, then
    smallest downlink id).
    """

    groups: tuple

    def __post_init__(self):
        g = tuple((tuple(sorted(int(u) for u in ul)), tuple(sorted(int(d) for d in dl)))
                  for ul, dl in self.groups)
        object.__setattr__(self, "groups", tuple(sorted(g)))

    @property
    def L(self):
        return len(self.groups)

    def encoding(self):
        """Uplink ids of every group followed by downlink ids of every group."""
        return tuple(u for g in self.groups for u in g[0]) + \
            tuple(d for g in self.groups for d in g[1])

    def validate(self, ul_ids, dl_ids, K_U, K_D):
        """Check cardinalities, disjointness and coverage of the waiting sets."""
        uls = [u for g in self.groups for u in g[0]]
        dls = [d for g in self.groups for d in g[1]]
        if any(len(g[0]) != K_U or len(g[1]) != K_D for g in self.groups):
            raise PartitionError(f"every group needs {K_U} uplink and {K_D} downlink users")
        if len(set(uls)) != len(uls) or len(set(dls)) != len(dls):
            raise PartitionError("groups are not disjoint")
        if sorted(uls) != sorted(ul_ids) or sorted(dls) != sorted(dl_ids):
            raise PartitionError("groups do not cover the waiting users")
        return self

    @classmethod
    def from_labels(cls, ul_labels, dl_labels):
        L = int(max(np.max(ul_labels), np.max(dl_labels))) + 1
        return cls(tuple((np.flatnonzero(ul_labels == l), np.flatnonzero(dl_labels == l))
                         for l in range(L)))

    def labels(self, n_ul, n_dl):
        ul = np.empty(n_ul, dtype=int)
        dl = np.empty(n_dl, dtype=int)
        for l, (u, d) in enumerate(self.groups):
            ul[list(u)] = l
            dl[list(d)] = l
        return ul, dl


@dataclass(frozen=True)
class GaParams:
    """Genetic-algorithm settings.

    Parameters
    ----------
    population : int
        Population size, >= 1.
    iterations : int
        Number of generations.
    crossover, mutation : float
        Per-child probabilities in [0, 1].
    elitism : int
        Best individuals copied unchanged into the next generation.
    seed : int
    """

    population: int = 40
    iterations: int = 100
    crossover: float = 0.8
    mutation: float = 0.1
    elitism: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.population < 1:
            raise ConfigurationError("must be >= 1", "population")
        if self.iterations < 0:
            raise ConfigurationError("must be >= 0", "iterations")
        for name in ("crossover", "mutation"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError("must lie in [0, 1]", name)
        if not 0 <= self.elitism <= self.population:
            raise ConfigurationError("must lie in [0, population]", "elitism")


def group_count(n_all, k):
    """``L = n_all / k``, raising if not an integer."""
    if k < 1 or n_all % k:
        raise ConfigurationError(f"{n_all} waiting users not divisible by group size {k}")
    return n_all // k


def group_iud(realization, config, correlations):
    """IUD contribution and downlink sum rate of one served group.

    Parameters
    ----------
    realization : ChannelRealization
        Channels of the group's users.
    config : SystemConfig
        Group-sized configuration.
    correlations : CorrelationSet
        Needed for the cancellation-error covariance.

    Returns
    -------
    iud : float
    dl_rate : float
    """
    c = config
    W = rzf_precoder(realization.Ghat_dl, c.alpha, c.P, c.M, c.N_D)
    S = residual_covariance(correlations, c.tau2_I, W, c)
    g_ul = ul_sinr(realization, S, c.p_ul).sinr
    dl = dl_sinr(realization, W, c)
    sig = np.sum(np.abs(realization.G_dl.conj().T @ W.W) ** 2, axis=1)        # (K_D,)
    pu = np.abs(realization.U) ** 2 * c.p_ul                                   # (K_D, K_U)
    gU = pu / (sig[:, None] + pu.sum(axis=1, keepdims=True) - pu + c.sigma2_dl)
    rU = np.log2(1.0 + gU)
    keep = rU < np.log2(1.0 + g_ul)[None, :]
    return float(np.sum(rU[keep])), dl.sum_rate


class UserPool:
    """Frozen channels of every waiting user.

    Parameters
    ----------
    config : SystemConfig
        Group-sized configuration (``K_U``, ``K_D`` per group).
    correlations : CorrelationSet
        Correlations of all waiting users (``K_U_ALL`` uplink, ``K_D_ALL``
        downlink).
    rng : numpy.random.Generator
    """

    def __init__(self, config, correlations, rng):
        self.config = config
        self.correlations = correlations
        self.n_ul = correlations.T_ul.shape[0]
        self.n_dl = correlations.T_dl.shape[0]
        self.L = group_count(self.n_ul, config.K_U)
        if group_count(self.n_dl, config.K_D) != self.L:
            raise ConfigurationError("uplink and downlink give different group counts")
        full = config.resize(K_U=self.n_ul, K_D=self.n_dl)
        self.full_config = full
        self.realization = sample_realization(full, correlations, rng)
        self._cache = {}

    @property
    def waiting(self):
        return tuple(range(self.n_ul)), tuple(range(self.n_dl))

    def group(self, ul, dl):
        """Realization, config and correlations of one group."""
        ul = np.asarray(ul, dtype=int)
        dl = np.asarray(dl, dtype=int)
        c = self.full_config
        M = c.M

        def cols(G, ids, N):
            return G.reshape(N, M, -1)[:, :, ids].reshape(N * M, ids.size)

        r = self.realization
        real = ChannelRealization(
            cols(r.G_ul, ul, c.N_U), cols(r.G_dl, dl, c.N_D), r.G_I, r.U[np.ix_(dl, ul)],
            cols(r.Ghat_ul, ul, c.N_U), cols(r.Ghat_dl, dl, c.N_D), r.Ghat_I)
        cfg = c.replace(K_U=ul.size, K_D=dl.size, p_ul=c.p_ul[ul],
                        tau2_ul=c.tau2_ul[ul], tau2_dl=c.tau2_dl[dl])
        return real, cfg, self.correlations.subset(ul, dl)

    def evaluate(self, ul, dl):
        """Cached ``(iud, dl_rate)`` of a group."""
        key = (tuple(ul), tuple(dl))
        if key not in self._cache:
            key = (tuple(sorted(ul)), tuple(sorted(dl)))
        if key not in self._cache:
            self._cache[key] = group_iud(*self.group(*key))
        return self._cache[key]


def iud_objective(partition, source, config=None):
    """Total IUD of a partition.

    Parameters
    ----------
    partition : SchedulingPartition
    source : UserPool or sequence
        A pool, or one ``(realization, config, correlations)`` triple per
        group in ``partition.groups`` order.
    config : SystemConfig, optional
        Used to validate group sizes.

    Returns
    -------
    float
    """
    if config is not None:
        for ul, dl in partition.groups:
            if len(ul) != config.K_U or len(dl) != config.K_D:
                raise PartitionError("group cardinality does not match the config")
    if isinstance(source, UserPool):
        return float(sum(source.evaluate(ul, dl)[0] for ul, dl in partition.groups))
    return float(sum(group_iud(*g)[0] for g in source))


def dl_rate(partition, pool):
    """Downlink sum rate per resource block averaged over the groups."""
    return float(np.mean([pool.evaluate(ul, dl)[1] for ul, dl in partition.groups]))


def _split(ids, k, rng):
    p = rng.permutation(np.asarray(ids))
    return [p[i:i + k] for i in range(0, p.size, k)]


def random_schedule(waiting, config, rng):
    """Uniformly random valid partition of ``waiting = (ul_ids, dl_ids)``."""
    ul, dl = waiting
    L = group_count(len(ul), config.K_U)
    if group_count(len(dl), config.K_D) != L:
        raise ConfigurationError("uplink and downlink give different group counts")
    return SchedulingPartition(tuple(zip(_split(ul, config.K_U, rng), _split(dl, config.K_D, rng))))


def partition_count(n_ul, n_dl, K_U, K_D):
    """Number of distinct partitions into ``L`` unlabeled groups."""
    L = group_count(n_ul, K_U)
    a = factorial(n_ul) // (factorial(K_U) ** L * factorial(L))
    b = factorial(n_dl) // factorial(K_D) ** L
    return a * b


def _canonical_splits(ids, k):
    """Unordered splits into blocks of size ``k``, lexicographic."""
    if not ids:
        yield ()
        return
    first, rest = ids[0], ids[1:]
    for others in itertools.combinations(rest, k - 1):
        block = (first,) + others
        remaining = tuple(i for i in rest if i not in others)
        for tail in _canonical_splits(remaining, k):
            yield (block,) + tail


def _ordered_splits(ids, k):
    """Ordered splits into blocks of size ``k``, lexicographic."""
    if not ids:
        yield ()
        return
    for block in itertools.combinations(ids, k):
        remaining = tuple(i for i in ids if i not in block)
        for tail in _ordered_splits(remaining, k):
            yield (block,) + tail


def exhaustive_schedule(waiting, config, pool, limit=SEARCH_LIMIT):
    """Global IUD minimizer by enumeration; ties go to the smallest encoding.

    Raises
    ------
    SearchSpaceError
        If the number of partitions exceeds ``limit``.
    """
    ul, dl = (tuple(sorted(x)) for x in waiting)
    n = partition_count(len(ul), len(dl), config.K_U, config.K_D)
    if n > limit:
        raise SearchSpaceError(f"{n} partitions exceed the search guard {limit}")
    ul_combos = list(itertools.combinations(ul, config.K_U))
    dl_combos = list(itertools.combinations(dl, config.K_D))
    ui = {c: i for i, c in enumerate(ul_combos)}
    di = {c: i for i, c in enumerate(dl_combos)}
    ul_parts = np.array([[ui[b] for b in s] for s in _canonical_splits(ul, config.K_U)])
    dl_parts = np.array([[di[b] for b in s] for s in _ordered_splits(dl, config.K_D)])
    cost = np.full((len(ul_combos), len(dl_combos)), np.nan)
    for a, c_ul in enumerate(ul_combos):
        for b, c_dl in enumerate(dl_combos):
            cost[a, b] = pool.evaluate(c_ul, c_dl)[0]
    tot = cost[ul_parts[:, None, :], dl_parts[None, :, :]].sum(axis=-1)
    a, b = np.unravel_index(np.argmin(tot), tot.shape)
    groups = [(ul_combos[x], dl_combos[y]) for x, y in zip(ul_parts[a], dl_parts[b])]
    return SchedulingPartition(tuple(groups))


@dataclass(frozen=True)
class GaResult:
    best: SchedulingPartition
    best_iud: float
    history: tuple


def _crossover(c_ul, c_dl, p_ul, p_dl, rng, group_cost=None):
    """Inject a uniformly chosen subset of parent 2's groups into the child.

    Each injected group replaces the child group it overlaps most; users it
    displaces take the vacated places, which keeps every group's size.
    Groups injected earlier are protected from later displacement.
    """
    L = int(np.max(p_ul)) + 1
    picks = np.flatnonzero(rng.random(L) < 0.5)
    if picks.size == 0:
        picks = rng.integers(L, size=1)
    locked = []
    order = rng.permutation(picks)
    if group_cost is not None:
        cost = [group_cost(tuple(np.flatnonzero(p_ul == g)), tuple(np.flatnonzero(p_dl == g)))
                for g in order]
        order = order[np.argsort(cost, kind="stable")]
    for g in order:
        S_u = np.flatnonzero(p_ul == g)
        S_d = np.flatnonzero(p_dl == g)
        overlap = (np.bincount(c_ul[S_u], minlength=L)
                   + np.bincount(c_dl[S_d], minlength=L)).astype(float)
        overlap[locked] = -1
        t = int(np.argmax(overlap))
        for lab, S in ((c_ul, S_u), (c_dl, S_d)):
            inS = np.zeros(lab.size, dtype=bool)
            inS[S] = True
            out = [v for v in np.flatnonzero(lab == t) if not inS[v]]
            for u in S:
                if lab[u] != t:
                    v = out.pop()
                    lab[u], lab[v] = t, lab[u]
        locked.append(t)


def _mutate(c_ul, c_dl, rng):
    lab = c_ul if rng.random() < 0.5 else c_dl
    if np.max(lab) == 0:
        return
    while True:
        a, b = rng.choice(lab.size, 2, replace=False)
        if lab[a] != lab[b]:
            lab[a], lab[b] = lab[b], lab[a]
            return


_RETRIES = 20


class _NoSet:
    # duplicate rejection is disabled when mutation is off (pure selection runs)
    def __contains__(self, x):
        return False

    def add(self, x):
        pass


def _key(c_ul, c_dl):
    # canonical group tuple without the partition constructor overhead
    L = int(c_ul.max()) + 1
    ou = np.argsort(c_ul, kind="stable").reshape(L, -1)
    od = np.argsort(c_dl, kind="stable").reshape(L, -1)
    return tuple(sorted(zip(map(tuple, ou.tolist()), map(tuple, od.tolist()))))


def ga_schedule(waiting, config, params, pool, initial=None):
    """Genetic-algorithm scheduling minimizing the IUD.

    Parameters
    ----------
    waiting : (ul_ids, dl_ids)
        Must be ``range(n_ul)``, ``range(n_dl)`` of ``pool``.
    config : SystemConfig
        Group sizes ``K_U``, ``K_D``.
    params : GaParams
    pool : UserPool
    initial : SchedulingPartition, optional
        If given, the initial population consists of clones of it.

    Returns
    -------
    GaResult
        Best-ever partition, its IUD and the best IUD per generation.
    """
    ul, dl = waiting
    n_ul, n_dl = len(ul), len(dl)
    if tuple(ul) != tuple(range(pool.n_ul)) or tuple(dl) != tuple(range(pool.n_dl)):
        raise ConfigurationError("waiting users must match the pool")
    L = group_count(n_ul, config.K_U)
    if group_count(n_dl, config.K_D) != L:
        raise ConfigurationError("uplink and downlink give different group counts")
    rng = np.random.default_rng(params.seed)
    if initial is not None:
        initial.validate(ul, dl, config.K_U, config.K_D)
        pop = [initial.labels(n_ul, n_dl) for _ in range(params.population)]
    else:
        pop = [random_schedule(waiting, config, rng).labels(n_ul, n_dl)
               for _ in range(params.population)]

    memo = {}

    def cost(key):
        if key not in memo:
            memo[key] = float(sum(pool.evaluate(*g)[0] for g in key))
        return memo[key]

    fit = np.array([cost(_key(*i)) for i in pop])
    best = int(np.argmin(fit))
    best_lab, best_iud = (pop[best][0].copy(), pop[best][1].copy()), float(fit[best])
    history = [best_iud]
    stall = 0
    patience = max(STALL_MIN, params.iterations // 10)
    for _ in range(params.iterations):
        order = np.argsort(fit, kind="stable")
        new = [(pop[i][0].copy(), pop[i][1].copy()) for i in order[:params.elitism]]
        keys = [_key(*x) for x in new]
        seen = set(keys) if params.mutation > 0 else _NoSet()
        w = 1.0 / (fit + FITNESS_EPS)
        w /= w.sum()
        while len(new) < params.population:
            a, b = rng.choice(len(pop), 2, p=w)
            c_ul, c_dl = pop[a][0].copy(), pop[a][1].copy()
            if rng.random() < params.crossover:
                _crossover(c_ul, c_dl, pop[b][0], pop[b][1], rng,
                           lambda u, d: pool.evaluate(u, d)[0])
            if rng.random() < params.mutation:
                _mutate(c_ul, c_dl, rng)
            key = _key(c_ul, c_dl)
            for _ in range(_RETRIES):
                if key not in seen:
                    break
                # duplicate of an individual already in the next generation
                _mutate(c_ul, c_dl, rng)
                key = _key(c_ul, c_dl)
            seen.add(key)
            new.append((c_ul, c_dl))
            keys.append(key)
        pop = new
        fit = np.array([cost(k) for k in keys])
        i = int(np.argmin(fit))
        if fit[i] < best_iud:
            best_lab, best_iud = (pop[i][0].copy(), pop[i][1].copy()), float(fit[i])
            stall = 0
        else:
            stall += 1
        if stall >= patience and params.mutation > 0:
            # stagnation: keep the elite, replace everyone else by random immigrants
            order = np.argsort(fit, kind="stable")[:params.elitism]
            pop = [pop[j] for j in order] + [
                random_schedule(waiting, config, rng).labels(n_ul, n_dl)
                for _ in range(params.population - order.size)]
            fit = np.array([cost(_key(*x)) for x in pop])
            stall = 0
        history.append(float(np.min(fit)))
    return GaResult(SchedulingPartition.from_labels(*best_lab), best_iud, tuple(history))
