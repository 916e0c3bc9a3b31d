"""Downlink RZF/ZF precoding with per-RAU power normalization and SINRs."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import DegenerateInputError, IllConditionedError, SolverError
from .model import sample_realization

ZF_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class Precoder:
    """Normalized precoder ``W = sqrt(xi2) * D``.

    Attributes
    ----------
    W : ndarray, shape (M * N_D, K_D)
    xi2 : float
        Shared power normalization.
    kind : {"rzf", "zf"}
    alpha : float or None
        Regularizer for RZF.
    direction : ndarray
        Unnormalized direction ``D``.
    rau_power : ndarray, shape (N_D,)
        Per-RAU traces ``tr(E_i D D^H E_i)``.
    """

    W: np.ndarray
    xi2: float
    kind: str
    alpha: float
    direction: np.ndarray
    rau_power: np.ndarray


@dataclass(frozen=True, eq=False)
class Rates:
    """Per-user SINRs and the resulting sum rate in bits/s/Hz."""

    sinr: np.ndarray

    @property
    def sum_rate(self):
        return float(np.sum(np.log2(1.0 + self.sinr)))


DlRates = Rates


@dataclass(frozen=True)
class McResult:
    """Monte-Carlo estimate of an ergodic sum rate."""

    mean: float
    stderr: float
    trials: int
    skipped: int = 0
    samples: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(cls, v, skipped=0):
        v = np.asarray(v, dtype=float)
        se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
        return cls(float(np.mean(v)), se, int(v.size), skipped, v)


def _normalize(D, P, M, N_D, kind, alpha):
    t = np.sum(np.abs(D.reshape(N_D, M, -1)) ** 2, axis=(1, 2))
    if not np.max(t) > 0:
        raise DegenerateInputError("precoder direction is zero; xi is undefined")
    # RAUs with no signal never bind the power constraint
    xi2_i = np.where(t > 0, M * P / np.where(t > 0, t, 1.0), np.inf)
    xi2 = float(np.min(xi2_i))  # argmin picks the lowest RAU index on ties
    return Precoder(np.sqrt(xi2) * D, xi2, kind, alpha, D, t)


def rzf_precoder(Ghat_dl, alpha, P, M, N_D):
    """Regularized zero-forcing precoder ``xi * (Ghat Ghat^H + alpha I)^{-1} Ghat``.

    Parameters
    ----------
    Ghat_dl : ndarray, shape (M * N_D, K_D)
    alpha : float
        Regularizer, > 0.
    P : float
        Per-RAU power parameter.
    M, N_D : int

    Returns
    -------
    Precoder
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive for RZF")
    G = np.asarray(Ghat_dl)
    C = G @ G.conj().T
    C[np.diag_indices_from(C)] += alpha
    D = cho_solve(cho_factor(C, lower=True), G)
    return _normalize(D, P, M, N_D, "rzf", float(alpha))


def zf_precoder(Ghat_dl, P, M, N_D):
    """Zero-forcing precoder ``xi * Ghat (Ghat^H Ghat)^{-1}``.

    Raises
    ------
    IllConditionedError
        If ``K_D > M * N_D`` or ``cond(Ghat^H Ghat) > 1e12``.
    """
    G = np.asarray(Ghat_dl)
    K = G.shape[1]
    if K > M * N_D:
        raise IllConditionedError(
            f"K_D={K} exceeds M*N_D={M * N_D}; Ghat^H Ghat is singular")
    A = G.conj().T @ G
    cond = np.linalg.cond(A)
    if not cond <= ZF_COND_LIMIT:
        raise IllConditionedError(
            f"cond(Ghat^H Ghat)={cond:.3g} > {ZF_COND_LIMIT:g} (K_D={K}, M*N_D={M * N_D})")
    try:
        D = G @ cho_solve(cho_factor(A, lower=True), np.eye(K))
    except LinAlgError as exc:
        raise IllConditionedError(str(exc)) from None
    return _normalize(D, P, M, N_D, "zf", None)


def make_precoder(kind, Ghat_dl, config, alpha=None):
    """Dispatch on ``kind`` ("rzf" or "zf")."""
    if kind == "rzf":
        a = config.alpha if alpha is None else alpha
        return rzf_precoder(Ghat_dl, a, config.P, config.M, config.N_D)
    if kind == "zf":
        return zf_precoder(Ghat_dl, config.P, config.M, config.N_D)
    raise ValueError(f"unknown precoder kind {kind!r}")


def dl_sinr(realization, precoder, config):
    """Instantaneous downlink SINRs with true channels and UL-to-DL interference.

    ``sinr_k = |g_k^H w_k|^2 / (sum_{j!=k} |g_k^H w_j|^2 + sum_i p_i |u_ki|^2 + sigma2_dl)``
    """
    F = realization.G_dl.conj().T @ precoder.W          # F[k, j] = g_k^H w_j
    P2 = np.abs(F) ** 2
    sig = np.diag(P2).copy()
    interf = P2.sum(axis=1) - sig
    cross = (np.abs(realization.U) ** 2) @ config.p_ul if realization.U.size else 0.0
    return Rates(sig / (interf + cross + config.sigma2_dl))


def _streams(rng):
    if callable(rng):
        return rng
    return lambda t: rng


def monte_carlo(trial_fn, trials, rng, skip=(IllConditionedError,), max_skip=0.01):
    """Average ``trial_fn(generator)`` over trials, skipping listed errors.

    Parameters
    ----------
    trial_fn : callable
        Returns the sum rate of one trial.
    trials : int
    rng : numpy.random.Generator or callable
        A generator used sequentially, or ``rng(t)`` returning the
        generator for trial ``t``.

    Returns
    -------
    McResult
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    get = _streams(rng)
    vals = []
    skipped = 0
    for t in range(trials):
        try:
            vals.append(trial_fn(get(t)))
        except skip:
            skipped += 1
    if skipped > max_skip * trials:
        raise SolverError(f"{skipped} of {trials} trials skipped (limit {max_skip:.0%})")
    return McResult.from_samples(vals, skipped)


def mc_dl_sum_rate(config, correlations, precoder_kind, trials, rng, alpha=None):
    """Monte-Carlo ergodic downlink sum rate.

    Parameters
    ----------
    config : SystemConfig
    correlations : CorrelationSet
    precoder_kind : {"rzf", "zf"}
    trials : int
    rng : numpy.random.Generator or callable
    alpha : float, optional
        Overrides ``config.alpha`` for RZF.

    Returns
    -------
    McResult
    """
    def one(g):
        r = sample_realization(config, correlations, g)
        W = make_precoder(precoder_kind, r.Ghat_dl, config, alpha)
        return dl_sinr(r, W, config).sum_rate

    return monte_carlo(one, trials, rng)
