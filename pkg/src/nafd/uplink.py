"""DL-to-UL residual interference, MMSE combining and uplink SINRs."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .downlink import McResult, Rates, dl_sinr, make_precoder, monte_carlo
from .model import sample_realization

UlRates = Rates


@dataclass(frozen=True, eq=False)
class ResidualCovariance:
    """Diagonal covariance of residual DL-to-UL interference plus noise.

    Attributes
    ----------
    delta : ndarray, shape (M * N_U,)
        Diagonal of Sigma.
    A_diag : ndarray, shape (M * N_D, M * N_U) or None
        ``A_diag[j, n]`` is the n-th diagonal entry of ``A_j``.
    """

    delta: np.ndarray
    A_diag: np.ndarray = None

    @property
    def matrix(self):
        return np.diag(self.delta)


def interference_error_diag(correlations, tau2_I, M, N_U):
    """Diagonals of the cancellation-error covariances ``A_j``.

    ``a_{j,n} = 2 / (M N_U) * sum_c (1 - phi_{j,m(n)}) |q_{n,c}|^2`` where ``q`` is
    row ``n`` of the block-diagonal square root of ``T_I,j``.

    Returns
    -------
    ndarray, shape (M * N_D, M * N_U)
    """
    S, diag = correlations.sqrt_I
    rows = S ** 2 if diag else np.sum(np.abs(S) ** 2, axis=-1)   # (MN_D, N_U, M)
    phi = np.sqrt(1.0 - np.asarray(tau2_I, dtype=float))
    A = 2.0 / (M * N_U) * (1.0 - phi)[..., None] * rows
    return A.reshape(A.shape[0], -1)


def residual_covariance(correlations, tau2_I, precoder, config):
    """Residual covariance ``delta_n = sum_k w_k^H A_n w_k + sigma2_ul``.

    Parameters
    ----------
    correlations : CorrelationSet
    tau2_I : array_like, shape (M * N_D, N_U)
    precoder : Precoder
    config : SystemConfig

    Returns
    -------
    ResidualCovariance
    """
    A = interference_error_diag(correlations, tau2_I, config.M, config.N_U)
    row_power = np.sum(np.abs(precoder.W) ** 2, axis=1)
    return ResidualCovariance(config.sigma2_ul + row_power @ A, A)


def _delta(Sigma):
    return np.asarray(getattr(Sigma, "delta", Sigma), dtype=float)


def mmse_combiner(Ghat_ul, Sigma, p_ul):
    """MMSE combining matrix ``(sum_i p_i ghat_i ghat_i^H + Sigma)^{-1} Ghat_ul``."""
    G = np.asarray(Ghat_ul)
    C = (G * p_ul) @ G.conj().T
    C[np.diag_indices_from(C)] += _delta(Sigma)
    return cho_solve(cho_factor(C, lower=True), G)


def ul_sinr(realization, Sigma, p_ul):
    """Uplink SINRs after cancellation with MMSE combining.

    ``sinr_k = p_k |r_k^H g_k|^2 / (sum_{i!=k} p_i |r_k^H g_i|^2 + r_k^H Sigma r_k)``
    """
    p = np.asarray(p_ul, dtype=float)
    R = mmse_combiner(realization.Ghat_ul, Sigma, p)
    F = np.abs(R.conj().T @ realization.G_ul) ** 2 * p      # F[k, i] = p_i |r_k^H g_i|^2
    sig = np.diag(F).copy()
    noise = np.real(np.einsum("nk,n,nk->k", R.conj(), _delta(Sigma), R))
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(sig > 0, sig / (F.sum(axis=1) - sig + noise), 0.0)
    return Rates(s)


def mc_ul_sum_rate(config, correlations, precoder_kind, trials, rng, alpha=None):
    """Monte-Carlo ergodic uplink sum rate; each trial builds the DL precoder first."""
    def one(g):
        r = sample_realization(config, correlations, g)
        W = make_precoder(precoder_kind, r.Ghat_dl, config, alpha)
        S = residual_covariance(correlations, config.tau2_I, W, config)
        return ul_sinr(r, S, config.p_ul).sum_rate

    return monte_carlo(one, trials, rng)


def mc_sum_rates(config, correlations, precoder_kind, trials, rng, alpha=None):
    """Joint Monte-Carlo of downlink and uplink rates on shared draws.

    Returns
    -------
    dict
        ``{"dl": McResult, "ul": McResult, "total": McResult}``.
    """
    acc = []

    def one(g):
        r = sample_realization(config, correlations, g)
        W = make_precoder(precoder_kind, r.Ghat_dl, config, alpha)
        S = residual_covariance(correlations, config.tau2_I, W, config)
        d = dl_sinr(r, W, config).sum_rate
        u = ul_sinr(r, S, config.p_ul).sum_rate if config.K_U else 0.0
        acc.append((d, u))
        return d + u

    tot = monte_carlo(one, trials, rng)
    v = np.asarray(acc).reshape(-1, 2)
    return {"dl": McResult.from_samples(v[:, 0], tot.skipped),
            "ul": McResult.from_samples(v[:, 1], tot.skipped), "total": tot}
