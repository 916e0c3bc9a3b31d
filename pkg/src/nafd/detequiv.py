"""Deterministic equivalents of the downlink and uplink ergodic sum rates.

Everything is built on one generic resolvent system.  For per-(user k,
block n) correlation blocks ``T[k, n]`` (M x M), user weights ``w`` and an
offset ``c`` the fixed point is::

    Psi_n   = ( (1/M) sum_j w_j T[j, n] / (c + w_j e_j) + alpha I )^{-1}
    e[k, n] = (1/M) tr(T[k, n] Psi_n),      e_k = sum_n e[k, n]

``c = 1`` is the usual RZF / MMSE system, ``c = 0`` with ``w = 1`` is the
rescaled system that describes the zero-forcing limit.

Perturbing ``alpha I -> alpha I + t Q`` gives the derivative coefficients
``Cdot`` through a linear system ``Theta vec(Cdot) = vec(Gamma)``; with them
the equivalent of ``(1/M) tr(A C^{-1} Q C^{-1})`` is
``(1/M) sum_n [tr(A_n Psi_n Q_n Psi_n) - sum_j Cdot_j tr(A_n Psi_n T[j, n] Psi_n)]``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import minimize_scalar

from .errors import RegimeError, SolverError
from .uplink import ResidualCovariance, interference_error_diag

TOL = 1e-10
MAX_ITER = 2000
ZF_REGIME_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class FixedPoint:
    """Converged solution of the resolvent system.

    Attributes
    ----------
    e : ndarray, shape (K, N)
    Psi : ndarray, shape (N, M, M)
    alpha, offset : float
    weights : ndarray, shape (K,)
    residual : float
        Final scaled update ``max|e_new - e| / max(1, max|e|)``.
    iterations : int
    T : ndarray
        The blocks the system was solved for.
    """

    e: np.ndarray
    Psi: np.ndarray
    alpha: float
    offset: float
    weights: np.ndarray
    residual: float
    iterations: int
    T: np.ndarray = field(repr=False)

    @property
    def M(self):
        return self.Psi.shape[-1]

    @property
    def gain(self):
        """Feedback weights ``w_k^2 / (c + w_k e_k)^2``."""
        w = self.weights
        return w ** 2 / (self.offset + w * self.e.sum(axis=1)) ** 2

    def equation_residual(self):
        """Max deviation of ``e`` from one application of the fixed-point map."""
        e2, _ = _fp_map(self.T, self.e, self.weights, self.offset, self.alpha)
        return float(np.max(np.abs(e2 - self.e)))


DlFixedPoint = FixedPoint


@dataclass(frozen=True, eq=False)
class DerivativeSolution:
    """Solution ``Cdot`` of one (or a batch of) derivative systems.

    Attributes
    ----------
    Cdot : ndarray, shape (K, N) or (B, K, N)
        Constant along ``N`` by construction.
    rhs_kind : str
    residual : float
        ``max ||Theta x - Gamma|| / ||Gamma||`` over the batch.
    """

    Cdot: np.ndarray
    rhs_kind: str
    residual: float

    @property
    def per_user(self):
        return self.Cdot[..., 0]


@dataclass(frozen=True, eq=False)
class DEResult:
    """Deterministic-equivalent SINRs with solver diagnostics."""

    gamma_bar: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def sum_rate_bar(self):
        return float(np.sum(np.log2(1.0 + self.gamma_bar)))


def _hinv(X):
    Y = np.linalg.inv(X)
    return 0.5 * (Y + np.conj(np.swapaxes(Y, -1, -2)))


def _tr_kn(T, Psi):
    # (1/M) tr(T[k, n] Psi[n])
    M = Psi.shape[-1]
    return np.real(np.einsum("knab,nba->kn", T, Psi)) / M


def _fp_map(T, e, w, c, alpha):
    M = T.shape[-1]
    coef = np.zeros_like(w)
    den = c + w * e.sum(axis=1)
    np.divide(w, den, out=coef, where=w > 0)
    X = np.einsum("k,knab->nab", coef, T) / M + alpha * np.eye(M)
    Psi = _hinv(X)
    return _tr_kn(T, Psi), Psi


def solve_fixed_point(T, alpha, weights=None, offset=1.0, tol=TOL, max_iter=MAX_ITER):
    """Picard iteration for the resolvent system.

    Starts from ``e = 1``; a damping factor 0.5 is switched on once the
    residual has increased twice in a row.  After reaching ``tol`` the
    iteration continues while it still improves, so the returned point is
    accurate to round-off.

    Parameters
    ----------
    T : ndarray, shape (K, N, M, M)
    alpha : float
        Regularizer, > 0.
    weights : array_like, shape (K,), optional
        User weights, default ones.
    offset : float
        1 for the regularized systems, 0 for the zero-forcing system.

    Returns
    -------
    FixedPoint

    Raises
    ------
    SolverError
        If the residual is still above ``tol`` after ``max_iter`` iterations.
    """
    T = np.asarray(T)
    K, N, M, _ = T.shape
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    w = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    e = np.ones((K, N))
    trace = []
    lam = 1.0
    rises = 0
    done_at = None
    for it in range(1, max_iter + 1):
        e_new, _ = _fp_map(T, e, w, offset, alpha)
        res = float(np.max(np.abs(e_new - e), initial=0.0) / max(1.0, np.max(np.abs(e), initial=0.0)))
        if trace and res > trace[-1]:
            rises += 1
            if rises >= 2:
                lam = 0.5
        else:
            rises = 0
        trace.append(res)
        e_prev = e
        e = e + lam * (e_new - e)
        if done_at is None and res < tol:
            done_at = it
        if done_at is not None and (res == 0.0 or it - done_at >= 50
                                    or (len(trace) > 1 and res >= trace[-2])):
            if res >= tol:
                e = e_prev
            break
    else:
        if done_at is None:
            raise SolverError(
                f"fixed point did not converge in {max_iter} iterations "
                f"(residual {trace[-1]:.3e})", trace)
    _, Psi = _fp_map(T, e, w, offset, alpha)
    return FixedPoint(e, Psi, float(alpha), float(offset), w, min(trace), len(trace), T)


def solve_dl_fixed_point(T_dl, alpha, M=None, K_D=None, N_D=None):
    """Downlink RZF fixed point ``e_dl`` / ``Psi_dl``."""
    T_dl = np.asarray(T_dl)
    if K_D is not None and T_dl.shape[:2] != (K_D, N_D):
        raise ValueError("T_dl shape does not match (K_D, N_D)")
    return solve_fixed_point(T_dl, alpha)


def _pair_traces(fp, A=None):
    """``tr(A[a, n] Psi_n T[j, n] Psi_n)``, shape (Ka, K, N)."""
    PTP = np.einsum("nab,jnbc,ncd->jnad", fp.Psi, fp.T, fp.Psi)
    A = fp.T if A is None else A
    return np.real(np.einsum("xnab,jnba->xjn", A, PTP))


def _q_traces(fp, A, Q):
    """``tr(A[a, n] Psi_n Q[..., n] Psi_n)``, shape (..., Ka, N)."""
    PQP = np.einsum("nab,...nbc,ncd->...nad", fp.Psi, Q, fp.Psi)
    return np.real(np.einsum("xnab,...nba->...xn", A, PQP))


def theta_matrix(fp, pair=None):
    """Assemble the (K N) x (K N) derivative-system matrix.

    Row ``(k, i)`` and column ``(l, j)`` hold
    ``delta - g_k / M^2 * tr(T[k, j] Psi_j T[l, j] Psi_j)`` with ``g`` the
    feedback weights of the fixed point.
    """
    K, N = fp.e.shape
    M = fp.M
    B = _pair_traces(fp) if pair is None else pair            # (k, l, j)
    blk = (fp.gain[:, None, None] / M ** 2) * B               # (k, l, j)
    Th = -np.broadcast_to(blk[:, None, :, :], (K, N, K, N)).reshape(K * N, K * N)
    return np.eye(K * N) + Th


def gamma_rhs(fp, Q):
    """Right-hand side ``-g_k / M^2 * sum_j tr(T[k, j] Psi_j Q_j Psi_j)`` for every ``i``."""
    K, N = fp.e.shape
    t = _q_traces(fp, fp.T, Q).sum(axis=-1)                  # (..., K)
    g = -fp.gain / fp.M ** 2 * t
    return np.repeat(g[..., :, None], N, axis=-1)


def rhs_blocks(kind, fp, index=None, A_diag=None):
    """Perturbation blocks ``Q`` (N, M, M) for the named right-hand sides.

    Parameters
    ----------
    kind : {"GammaDl", "GammaUlSigma", "GammaA", "GammaUlK"}
        ``GammaDl`` / ``GammaUlSigma`` use ``Q = I``; ``GammaA`` uses the
        diagonal cancellation-error matrix of receive antenna ``index``
        (needs ``A_diag``); ``GammaUlK`` uses the blocks of user ``index``.
    """
    K, N = fp.e.shape
    M = fp.M
    if kind in ("GammaDl", "GammaUlSigma"):
        return np.broadcast_to(np.eye(M), (N, M, M))
    if kind == "GammaA":
        d = np.asarray(A_diag)[:, index].reshape(N, M)
        return d[:, :, None] * np.eye(M)
    if kind == "GammaUlK":
        return fp.T[index]
    raise ValueError(f"unknown rhs kind {kind!r}")


class DerivativeSolver:
    """LU-factored derivative system of one fixed point, reused across right-hand sides."""

    def __init__(self, fp):
        self.fp = fp
        self.pair = _pair_traces(fp)
        self.theta = theta_matrix(fp, self.pair)
        try:
            self.lu = lu_factor(self.theta)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"singular derivative system: {exc}") from None
        if not np.all(np.isfinite(self.lu[0])) or np.min(np.abs(np.diag(self.lu[0]))) == 0:
            raise SolverError("singular derivative system")

    def solve(self, Q, rhs_kind="custom"):
        """Solve for one ``Q`` (N, M, M) or a batch (B, N, M, M)."""
        K, N = self.fp.e.shape
        G = gamma_rhs(self.fp, Q)
        batch = G.ndim == 3
        b = G.reshape(-1, K * N).T
        x = lu_solve(self.lu, b)
        r = np.linalg.norm(self.theta @ x - b, axis=0)
        nb = np.linalg.norm(b, axis=0)
        res = float(np.max(np.where(nb > 0, r / np.where(nb > 0, nb, 1), r), initial=0.0))
        C = x.T.reshape((-1, K, N) if batch else (K, N))
        return DerivativeSolution(C, rhs_kind, res)

    def dtrace(self, A, Q, sol):
        """Equivalent of ``(1/M) tr(A_n C^{-1} Q C^{-1})`` per (a, n).

        Parameters
        ----------
        A : ndarray, shape (Ka, N, M, M)
        Q : ndarray, shape (N, M, M) or (B, N, M, M)
        sol : DerivativeSolution
            Solved with the same ``Q``.

        Returns
        -------
        ndarray, shape (Ka, N) or (B, Ka, N)
        """
        fp = self.fp
        pair = self.pair if A is fp.T else _pair_traces(fp, A)
        c = sol.per_user                                          # (..., K)
        corr = np.einsum("xjn,...j->...xn", pair, c)
        return (_q_traces(fp, A, Q) - corr) / fp.M


def solve_derivative_system(fixed_point, T=None, rhs_kind="GammaDl", index=None,
                            A_diag=None, Q=None):
    """Solve the derivative system of ``fixed_point`` for one right-hand side.

    ``T`` is accepted for interface symmetry and must be the blocks the
    fixed point was solved for (default).
    """
    if T is not None and np.asarray(T).shape != fixed_point.T.shape:
        raise ValueError("T does not match the fixed point")
    if Q is None:
        Q = rhs_blocks(rhs_kind, fixed_point, index, A_diag)
    return DerivativeSolver(fixed_point).solve(Q, rhs_kind)


# ---------------------------------------------------------------- downlink


def _dl_terms(config, correlations, alpha):
    """Shared downlink RZF quantities."""
    c = config
    T = np.asarray(correlations.T_dl)
    fp = solve_fixed_point(T, alpha)
    ds = DerivativeSolver(fp)
    I = rhs_blocks("GammaDl", fp)
    sol = ds.solve(I, "GammaDl")
    phi = c.phi_dl
    u1 = fp.e.sum(axis=1)
    u2 = (phi * fp.e).sum(axis=1)
    d = ds.dtrace(T, I, sol)                                  # (K, N)
    du1 = d.sum(axis=1)
    du2 = (phi * d).sum(axis=1)
    Psi = fp.Psi
    cd = sol.per_user
    PTP = np.einsum("nab,jnbc,ncd->jnad", Psi, T, Psi)
    X = (np.real(np.trace(Psi, axis1=1, axis2=2))
         - alpha * np.real(np.einsum("nab,nba->n", Psi, Psi))
         + alpha * np.real(np.einsum("j,jnaa->n", cd, PTP)))
    return dict(fp=fp, ds=ds, sol=sol, u1=u1, u2=u2, du1=du1, du2=du2, X=X)


def _cross_power(config, correlations):
    if config.K_U == 0:
        return np.zeros(config.K_D)
    return correlations.T_uu @ config.p_ul


def de_dl_rzf(config, correlations, alpha=None):
    """Deterministic equivalent of the downlink RZF SINRs.

    Parameters
    ----------
    config : SystemConfig
    correlations : CorrelationSet
    alpha : float, optional
        Overrides ``config.alpha``.

    Returns
    -------
    DEResult
    """
    a = config.alpha if alpha is None else float(alpha)
    q = _dl_terms(config, correlations, a)
    u1, u2, du1, du2 = q["u1"], q["u2"], q["du1"], q["du2"]
    m1 = u1 - a * du1
    m2 = u2 - a * du2
    ubar = m1 - 2 * u2 * m2 / (1 + u1) + u2 ** 2 * m1 / (1 + u1) ** 2
    v = (_cross_power(config, correlations) + config.sigma2_dl) / (config.M * config.P) \
        * np.max(q["X"])
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(u2 > 0, u2 ** 2 / ((1 + u1) ** 2 * (ubar + v)), 0.0)
    diag = {"iterations": q["fp"].iterations, "residual": q["fp"].residual,
            "theta_residual": q["sol"].residual, "alpha_used": a,
            "xi2_bar": config.M * config.P / float(np.max(q["X"]))}
    return DEResult(g, diag)


def optimal_alpha(config, correlations, bounds=(-6.0, 2.0), xatol=1e-3):
    """Regularizer maximizing the RZF deterministic-equivalent sum rate.

    Bounded scalar search over ``log10(alpha)``.
    """
    def neg(la):
        return -de_dl_rzf(config, correlations, alpha=10.0 ** la).sum_rate_bar

    res = minimize_scalar(neg, bounds=bounds, method="bounded", options={"xatol": xatol})
    return float(10.0 ** res.x)


def de_dl_zf(config, correlations):
    """Deterministic equivalent of the downlink ZF SINRs (alpha -> 0 limit).

    With ``eps = alpha * e`` the RZF system has a regular limit
    ``Phi_n = ((1/M) sum_j T_j / eps_j + I)^{-1}``, ``eps_kn = (1/M) tr(T_kn Phi_n)``.
    The first-order slopes ``epsdot`` come from one derivative solve of that
    system with ``Q_n = (1/M) sum_j T_jn / eps_j^2``; the interference,
    normalization and SINR follow as the limits of the RZF expressions.

    Raises
    ------
    RegimeError
        If the limit system degenerates (``min eps < 1e-8``), which happens
        when ``K_D >= M N_D`` for spatially white channels.
    """
    c = config
    T = np.asarray(correlations.T_dl)
    M = c.M
    active = np.any(T.reshape(T.shape[0], -1) != 0, axis=1)
    dims = sum(np.linalg.matrix_rank(T[active, n].sum(axis=0), hermitian=True)
               for n in range(T.shape[1])) if active.any() else 0
    if np.count_nonzero(active) >= dims:
        raise RegimeError(
            f"zero-forcing limit needs fewer active users ({np.count_nonzero(active)}) "
            f"than channel dimensions ({dims}); K_D={c.K_D}, M*N_D={M * c.N_D}; "
            "use RZF with alpha > 0")
    try:
        fp = solve_fixed_point(T[active], 1.0, offset=0.0)
    except SolverError as exc:
        raise RegimeError(f"zero-forcing limit system did not converge: {exc}") from None
    eps = fp.e
    if eps.size == 0 or np.min(eps.sum(axis=1)) < ZF_REGIME_EPS:
        raise RegimeError(
            f"zero-forcing limit degenerate (min eps={np.min(eps.sum(axis=1), initial=0):.3g}); "
            f"K_D={c.K_D}, M*N_D={M * c.N_D}; use RZF with alpha > 0")
    Ta = fp.T
    e1 = eps.sum(axis=1)
    Q = np.einsum("j,jnab->nab", 1.0 / e1 ** 2, Ta) / M
    ds = DerivativeSolver(fp)
    sol = ds.solve(Q, "GammaZf")
    edot = ds.dtrace(Ta, Q, sol)                               # (K, N)
    phi = c.phi_dl[active]
    e2 = (phi * eps).sum(axis=1)
    d1 = edot.sum(axis=1)
    d2 = (phi * edot).sum(axis=1)
    r = e2 / e1
    ubar = d1 - 2 * r * d2 + r ** 2 * d1
    E = np.einsum("j,jnab->nab", (1 + d1) / e1 ** 2, Ta) / M
    X = np.real(np.einsum("nab,nbc,nca->n", fp.Psi, E, fp.Psi))
    v = (_cross_power(c, correlations)[active] + c.sigma2_dl) / (M * c.P) * np.max(X)
    g = np.zeros(c.K_D)
    g[active] = r ** 2 / (ubar + v)
    diag = {"iterations": fp.iterations, "residual": fp.residual,
            "theta_residual": sol.residual, "alpha_used": 0.0,
            "min_eps": float(np.min(e1)), "xi2_bar": M * c.P / float(np.max(X))}
    return DEResult(g, diag)


# ------------------------------------------------------------------ uplink


def de_residual_covariance(config, correlations, precoder_kind="rzf", alpha=None):
    """Deterministic equivalent of the residual covariance Sigma.

    ``delta_n = xi2 * sum_k udot_A[k, n] / (1 + u1_k)^2 + sigma2_ul``, one
    derivative solve per receive antenna, all sharing one LU factorization.
    """
    if precoder_kind != "rzf":
        raise ValueError("only the RZF residual covariance has a deterministic equivalent")
    c = config
    a = c.alpha if alpha is None else float(alpha)
    q = _dl_terms(c, correlations, a)
    xi2 = c.M * c.P / float(np.max(q["X"]))
    A = interference_error_diag(correlations, c.tau2_I, c.M, c.N_U)   # (MN_D, MN_U)
    if not np.any(A):
        return ResidualCovariance(np.full(c.M * c.N_U, c.sigma2_ul), A)
    fp, ds = q["fp"], q["ds"]
    N_D, M = c.N_D, c.M
    Q = np.einsum("rma,ab->rmab", A.T.reshape(-1, N_D, M), np.eye(M))  # (MN_U, N_D, M, M)
    sol = ds.solve(Q, "GammaA")
    dA = ds.dtrace(fp.T, Q, sol).sum(axis=-1)                           # (MN_U, K)
    delta = xi2 * dA @ (1.0 / (1.0 + q["u1"]) ** 2) + c.sigma2_ul
    return ResidualCovariance(np.maximum(delta, c.sigma2_ul), A)


def de_ul(config, correlations, sigma=None, alpha=None):
    """Deterministic equivalent of the uplink MMSE SINRs.

    Parameters
    ----------
    config : SystemConfig
    correlations : CorrelationSet
    sigma : ResidualCovariance, optional
        Residual covariance; computed with :func:`de_residual_covariance`
        when omitted.
    alpha : float, optional
        RZF regularizer used for ``sigma``.

    Returns
    -------
    DEResult
    """
    c = config
    K = c.K_U
    if K == 0:
        return DEResult(np.zeros(0), {})
    if sigma is None:
        sigma = de_residual_covariance(c, correlations, alpha=alpha)
    M = c.M
    s = 1.0 / np.sqrt(np.asarray(sigma.delta).reshape(c.N_U, M))
    Tw = s[None, :, :, None] * np.asarray(correlations.T_ul) * s[None, :, None, :]
    p = c.p_ul
    fp = solve_fixed_point(Tw, 1.0, weights=p, offset=1.0)
    ds = DerivativeSolver(fp)
    I = rhs_blocks("GammaUlSigma", fp)
    sol_s = ds.solve(I, "GammaUlSigma")
    du_sig = ds.dtrace(Tw, I, sol_s).sum(axis=1)                        # (K,)
    sol_k = ds.solve(Tw, "GammaUlK")                                    # batch over k
    d = ds.dtrace(Tw, Tw, sol_k)                                        # (k, i, n)
    phi = c.phi_ul
    du1 = d.sum(axis=-1)
    du2 = (phi[None] * d).sum(axis=-1)
    u1 = fp.e.sum(axis=1)
    u2 = (phi * fp.e).sum(axis=1)
    den = 1 + p * u1
    br = du1 - 2 * p * u2 * du2 / den + p ** 2 * u2 ** 2 * du1 / den ** 2   # (k, i)
    pb = br * p[None, :]
    interf = (pb.sum(axis=1) - np.diag(pb)) / M
    g = np.where(p > 0, p * u2 ** 2 / (interf + du_sig), 0.0)
    diag = {"iterations": fp.iterations, "residual": fp.residual,
            "theta_residual": max(sol_s.residual, sol_k.residual),
            "alpha_used": c.alpha if alpha is None else alpha}
    return DEResult(g, diag)
