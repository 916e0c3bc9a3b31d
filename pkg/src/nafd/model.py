"""System configuration, geometry, correlation matrices and channel sampling.

Conventions
-----------
Stacked vectors are RAU-major: row ``n * M + a`` of ``G_ul`` is antenna ``a`` of
receiving RAU ``n``.  Correlation blocks are stored as dense arrays

* ``T_ul``  : (K_U, N_U, M, M)
* ``T_dl``  : (K_D, N_D, M, M)
* ``T_I``   : (M * N_D, N_U, M, M), one stack of blocks per transmit antenna
* ``T_uu``  : (K_D, K_U) scalar gains from uplink user i to downlink user k
"""

from dataclasses import dataclass, field, fields, replace
from functools import cached_property

import numpy as np

from .errors import ConfigurationError

MODES = ("NAFD", "CCFD_MASSIVE", "CCFD_CRAN")


def db2lin(x):
    """Convert decibels to linear scale."""
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _grid(value, shape, name):
    a = np.asarray(value, dtype=float)
    try:
        a = np.broadcast_to(a, shape)
    except ValueError:
        raise ConfigurationError(
            f"shape {a.shape} cannot broadcast to {shape}", name) from None
    return _frozen(a)


@dataclass(frozen=True)
class CsiQuality:
    """Estimation quality of one link: ``phi**2 + tau**2 == 1``."""

    tau: float

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError("tau must lie in [0, 1]", "tau")

    @property
    def phi(self):
        return float(np.sqrt(1.0 - self.tau ** 2))


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """Dimensions, powers, noise levels and CSI-quality grids.

    Scalars given for ``p_ul`` and the ``tau2_*`` grids are broadcast to
    their full shapes; ``tau2_*`` hold squared error energies tau**2.

    Parameters
    ----------
    M : int
        Antennas per RAU.
    N_U, N_D : int
        Number of receiving and transmitting RAUs.
    K_U, K_D : int
        Active uplink and downlink users.
    P : float
        Per-RAU power budget parameter; each RAU radiates at most ``M * P``.
    p_ul : float or array_like, shape (K_U,)
        Uplink transmit powers.
    sigma2_ul, sigma2_dl : float
        Noise variances.
    alpha : float
        RZF regularization.
    tau2_ul, tau2_dl, tau2_I : float or array_like
        Squared CSI error energies with shapes (K_U, N_U), (K_D, N_D) and
        (M * N_D, N_U).
    """

    M: int
    N_U: int
    N_D: int
    K_U: int
    K_D: int
    P: float = 1.0
    p_ul: np.ndarray = 1.0
    sigma2_ul: float = 1.0
    sigma2_dl: float = 1.0
    alpha: float = 1.0
    tau2_ul: np.ndarray = 0.0
    tau2_dl: np.ndarray = 0.0
    tau2_I: np.ndarray = 0.0

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        for name in ("M", "N_U", "N_D", "K_U", "K_D"):
            v = getattr(self, name)
            if int(v) != v:
                raise ConfigurationError("must be an integer", name)
            set_(name, int(v))
        for name in ("M", "N_U", "N_D", "K_D"):
            if getattr(self, name) < 1:
                raise ConfigurationError("must be >= 1", name)
        if self.K_U < 0:
            raise ConfigurationError("must be >= 0", "K_U")
        for name in ("P", "sigma2_ul", "sigma2_dl"):
            v = float(getattr(self, name))
            if not v > 0:
                raise ConfigurationError("must be > 0", name)
            set_(name, v)
        if not float(self.alpha) >= 0:
            raise ConfigurationError("must be >= 0", "alpha")
        set_("alpha", float(self.alpha))
        p = _grid(self.p_ul, (self.K_U,), "p_ul")
        if np.any(p < 0):
            raise ConfigurationError("must be >= 0", "p_ul")
        set_("p_ul", p)
        shapes = {"tau2_ul": (self.K_U, self.N_U),
                  "tau2_dl": (self.K_D, self.N_D),
                  "tau2_I": (self.M * self.N_D, self.N_U)}
        for name, shape in shapes.items():
            t = _grid(getattr(self, name), shape, name)
            if np.any(t < 0) or np.any(t > 1):
                raise ConfigurationError("entries must lie in [0, 1]", name)
            set_(name, t)

    @classmethod
    def from_snr(cls, snr_dl_db, snr_ul_db, sigma2_dl=1.0, sigma2_ul=1.0, **kw):
        """Build a config with ``P = rho_dl * sigma2_dl`` and ``p_ul = rho_ul * sigma2_ul``."""
        return cls(P=float(db2lin(snr_dl_db)) * sigma2_dl,
                   p_ul=float(db2lin(snr_ul_db)) * sigma2_ul,
                   sigma2_dl=sigma2_dl, sigma2_ul=sigma2_ul, **kw)

    @property
    def phi_ul(self):
        return np.sqrt(1.0 - self.tau2_ul)

    @property
    def phi_dl(self):
        return np.sqrt(1.0 - self.tau2_dl)

    @property
    def phi_I(self):
        return np.sqrt(1.0 - self.tau2_I)

    def replace(self, **changes):
        """Return a copy with some fields changed."""
        return replace(self, **changes)

    def resize(self, K_U=None, K_D=None):
        """Copy with new user counts; per-user grids must be uniform.

        Raises
        ------
        ConfigurationError
            If a per-user grid that would change shape is not uniform.
        """
        ch = {}
        for name, k, new in (("p_ul", "K_U", K_U), ("tau2_ul", "K_U", K_U),
                             ("tau2_dl", "K_D", K_D)):
            if new is None or new == getattr(self, k):
                continue
            a = getattr(self, name)
            if a.size and not np.all(a == a[:1]):
                raise ConfigurationError("per-user grid is not uniform; cannot resize", name)
            ch[name] = a[0] if a.size else (1.0 if name == "p_ul" else 0.0)
        if K_U is not None:
            ch["K_U"] = K_U
        if K_D is not None:
            ch["K_D"] = K_D
        return replace(self, **ch)

    def to_dict(self):
        """Plain key/value view; uniform grids collapse to one scalar."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                flat = v.ravel()
                if flat.size and np.all(flat == flat[0]):
                    v = float(flat[0])
                else:
                    v = v.tolist()
            out[f.name] = v
        return out


@dataclass(frozen=True)
class GeometryScenario:
    """Deployment geometry of section-VI style layouts (lengths in meters).

    Parameters
    ----------
    mode : {"NAFD", "CCFD_MASSIVE", "CCFD_CRAN"}
    R : float
        Radius of the user area.
    r : float
        Radius of the RAU circle.
    r0 : float
        Minimum user-RAU distance; also the path-loss clamp distance.
    eta : float
        Path-loss exponent.
    c_r : float
        Linear gain at the 1 km reference distance.
    sigma2_SI : float, optional
        Residual self-interference variance at co-located sites.  ``None``
        means ``1 / M``.
    correlation_rho : float, optional
        Exponential correlation coefficient applied to every user block;
        ``None`` keeps the scalar path-loss model.
    """

    mode: str = "NAFD"
    R: float = 1000.0
    r: float = 500.0
    r0: float = 30.0
    eta: float = 3.7
    c_r: float = 1.0
    sigma2_SI: float = None
    correlation_rho: float = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}", "mode")
        if not 0 < self.r0 < self.R:
            raise ConfigurationError("require 0 < r0 < R", "r0")
        if self.mode != "CCFD_MASSIVE" and not self.r0 < self.r < self.R:
            raise ConfigurationError("require r0 < r < R", "r")
        if self.sigma2_SI is not None and self.sigma2_SI < 0:
            raise ConfigurationError("must be >= 0", "sigma2_SI")
        if self.correlation_rho is not None and not 0 <= self.correlation_rho < 1:
            raise ConfigurationError("must lie in [0, 1)", "correlation_rho")


@dataclass(frozen=True, eq=False)
class Geometry:
    """RAU and user positions in meters, each of shape (count, 2)."""

    rau_positions_rx: np.ndarray
    rau_positions_tx: np.ndarray
    user_positions_ul: np.ndarray
    user_positions_dl: np.ndarray


def _block_sqrt(T):
    """Hermitian square roots of a stack of blocks.

    Returns ``(S, diagonal)``; when every block is diagonal ``S`` holds only
    the square-rooted diagonals, shape (..., M).
    """
    T = np.asarray(T)
    M = T.shape[-1]
    off = T - np.eye(M) * T
    if not np.any(off):
        d = np.real(np.diagonal(T, axis1=-2, axis2=-1))
        return np.sqrt(np.clip(d, 0, None)), True
    w, V = np.linalg.eigh(T)
    S = (V * np.sqrt(np.clip(w, 0, None))[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))
    return S, False


@dataclass(frozen=True, eq=False)
class CorrelationSet:
    """Deterministic correlation blocks of every link family.

    See the module docstring for the array layout.
    """

    T_ul: np.ndarray
    T_dl: np.ndarray
    T_I: np.ndarray
    T_uu: np.ndarray

    def __post_init__(self):
        for name in ("T_ul", "T_dl", "T_I"):
            a = np.array(getattr(self, name))
            if a.ndim != 4 or a.shape[-1] != a.shape[-2]:
                raise ConfigurationError("expected shape (count, N, M, M)", name)
            if not np.iscomplexobj(a) or not np.any(np.imag(a)):
                a = np.real(a).astype(float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        uu = _frozen(self.T_uu)
        if uu.ndim != 2 or np.any(uu < 0):
            raise ConfigurationError("expected non-negative (K_D, K_U) array", "T_uu")
        object.__setattr__(self, "T_uu", uu)

    @property
    def M(self):
        return self.T_dl.shape[-1]

    def check(self, config=None, tol=1e-12, psd_tol=1e-10):
        """Validate Hermitian/PSD blocks and, optionally, shapes against ``config``.

        Raises
        ------
        ConfigurationError
        """
        for name in ("T_ul", "T_dl", "T_I"):
            a = getattr(self, name)
            if a.size == 0:
                continue
            if np.max(np.abs(a - np.conj(np.swapaxes(a, -1, -2)))) > tol:
                raise ConfigurationError("blocks not Hermitian", name)
            if np.min(np.linalg.eigvalsh(a)) < -psd_tol:
                raise ConfigurationError("blocks not positive semidefinite", name)
        if config is not None:
            c = config
            want = {"T_ul": (c.K_U, c.N_U, c.M, c.M), "T_dl": (c.K_D, c.N_D, c.M, c.M),
                    "T_I": (c.M * c.N_D, c.N_U, c.M, c.M), "T_uu": (c.K_D, c.K_U)}
            for name, shape in want.items():
                if getattr(self, name).shape != shape:
                    raise ConfigurationError(
                        f"shape {getattr(self, name).shape} does not match config {shape}", name)
        return self

    @cached_property
    def sqrt_ul(self):
        return _block_sqrt(self.T_ul)

    @cached_property
    def sqrt_dl(self):
        return _block_sqrt(self.T_dl)

    @cached_property
    def sqrt_I(self):
        return _block_sqrt(self.T_I)

    def subset(self, ul=None, dl=None):
        """Correlations restricted to the given uplink / downlink user ids."""
        ul = slice(None) if ul is None else np.asarray(ul, dtype=int)
        dl = slice(None) if dl is None else np.asarray(dl, dtype=int)
        uu = self.T_uu[dl][:, ul]
        return CorrelationSet(self.T_ul[ul], self.T_dl[dl], self.T_I, uu)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One block-fading draw of true and estimated channels."""

    G_ul: np.ndarray
    G_dl: np.ndarray
    G_I: np.ndarray
    U: np.ndarray
    Ghat_ul: np.ndarray
    Ghat_dl: np.ndarray
    Ghat_I: np.ndarray


def exponential_correlation(M, rho):
    """Exponential profile ``[T]_{ab} = rho**|a - b|``."""
    idx = np.arange(M)
    return float(rho) ** np.abs(idx[:, None] - idx[None, :])


def pathloss_correlation(distance_km, eta, c_r, M, r0_km=None, rho=None):
    """Large-scale correlation block ``c_r * d**(-eta) * I_M``.

    Parameters
    ----------
    distance_km : float
        Link distance in kilometers, > 0.
    eta, c_r : float
        Path-loss exponent and reference gain at 1 km.
    M : int
        Block size.
    r0_km : float, optional
        Distances below this are clamped to it.
    rho : float, optional
        If given, the identity is replaced by an exponential profile.
    """
    d = float(distance_km)
    if not d > 0:
        raise ConfigurationError("distance must be positive", "distance_km")
    if r0_km is not None:
        d = max(d, r0_km)
    base = np.eye(M) if rho is None else exponential_correlation(M, rho)
    return c_r * d ** (-eta) * base


def uniform_correlations(config, gain=1.0, gain_I=None, gain_uu=None, rho=None):
    """Correlation set with identical blocks for every link.

    Parameters
    ----------
    config : SystemConfig
    gain : float
        Scale of every user block.
    gain_I, gain_uu : float, optional
        Scale of the RAU-to-RAU blocks and user-to-user gains, default ``gain``.
    rho : float, optional
        Exponential correlation for the user blocks; ``None`` gives ``T = gain * I``.
    """
    c = config
    base = np.eye(c.M) if rho is None else exponential_correlation(c.M, rho)
    gI = gain if gain_I is None else gain_I
    guu = gain if gain_uu is None else gain_uu
    return CorrelationSet(
        T_ul=np.broadcast_to(gain * base, (c.K_U, c.N_U, c.M, c.M)),
        T_dl=np.broadcast_to(gain * base, (c.K_D, c.N_D, c.M, c.M)),
        T_I=np.broadcast_to(gI * np.eye(c.M), (c.M * c.N_D, c.N_U, c.M, c.M)),
        T_uu=np.full((c.K_D, c.K_U), float(guu)),
    )


def _circle(n, radius, offset=0.0):
    ang = offset + 2 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def rau_layout(scenario, N_U, N_D):
    """RAU positions (rx, tx) for a scenario; deterministic."""
    if scenario.mode == "CCFD_MASSIVE":
        return np.zeros((N_U, 2)), np.zeros((N_D, 2))
    if scenario.mode == "CCFD_CRAN":
        if N_U != N_D:
            raise ConfigurationError("CCFD_CRAN requires N_U == N_D", "N_U")
        pts = _circle(N_U, scenario.r)
        return pts.copy(), pts.copy()
    # alternate rx/tx around the circle starting with rx at angle 0
    pts = _circle(N_U + N_D, scenario.r)
    roles = []
    nu, nd = N_U, N_D
    while nu or nd:
        if nu:
            roles.append(0)
            nu -= 1
        if nd:
            roles.append(1)
            nd -= 1
    roles = np.array(roles)
    return pts[roles == 0], pts[roles == 1]


def sample_users(n, scenario, raus, rng, max_attempts=10_000):
    """Uniform points on the user disc at least ``r0`` from every RAU."""
    out = np.empty((n, 2))
    for u in range(n):
        for _ in range(max_attempts):
            rad = scenario.R * np.sqrt(rng.random())
            ang = 2 * np.pi * rng.random()
            p = np.array([rad * np.cos(ang), rad * np.sin(ang)])
            if np.min(np.hypot(*(raus - p).T)) >= scenario.r0:
                out[u] = p
                break
        else:
            raise ConfigurationError(
                f"no admissible user position after {max_attempts} attempts", "r0")
    return out


def build_geometry(scenario, config, rng):
    """Place RAUs per ``scenario.mode`` and draw user positions.

    Parameters
    ----------
    scenario : GeometryScenario
    config : SystemConfig
    rng : numpy.random.Generator

    Returns
    -------
    Geometry
    """
    rx, tx = rau_layout(scenario, config.N_U, config.N_D)
    raus = np.vstack([rx, tx])
    ul = sample_users(config.K_U, scenario, raus, rng)
    dl = sample_users(config.K_D, scenario, raus, rng)
    return Geometry(rx, tx, ul, dl)


def _dist_km(a, b):
    return np.hypot(*(a[:, None, :] - b[None, :, :]).transpose(2, 0, 1)) / 1000.0


def correlations_from_geometry(geometry, scenario, config):
    """Path-loss correlation set for a layout.

    Co-located transmit/receive sites (distance below 1 mm) get the
    self-interference block ``sigma2_SI * I``; other distances are clamped
    to ``r0`` before the power law.
    """
    M = config.M
    r0 = scenario.r0 / 1000.0
    sig_si = 1.0 / M if scenario.sigma2_SI is None else scenario.sigma2_SI
    base = np.eye(M) if scenario.correlation_rho is None else \
        exponential_correlation(M, scenario.correlation_rho)

    def gain(d):
        return scenario.c_r * np.maximum(d, r0) ** (-scenario.eta)

    g_ul = gain(_dist_km(geometry.user_positions_ul, geometry.rau_positions_rx))
    g_dl = gain(_dist_km(geometry.user_positions_dl, geometry.rau_positions_tx))
    d_I = _dist_km(geometry.rau_positions_tx, geometry.rau_positions_rx)   # (N_D, N_U)
    g_I = np.where(d_I < 1e-6, sig_si, gain(d_I))
    g_I = np.repeat(g_I, M, axis=0)                                        # per tx antenna
    g_uu = gain(_dist_km(geometry.user_positions_dl, geometry.user_positions_ul))
    return CorrelationSet(
        T_ul=g_ul[..., None, None] * base,
        T_dl=g_dl[..., None, None] * base,
        T_I=g_I[..., None, None] * np.eye(M),
        T_uu=g_uu,
    )


def _cn(rng, shape, var):
    return np.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _apply(sq, h):
    S, diag = sq
    return S * h if diag else np.einsum("...ab,...b->...a", S, h)


def _draw(sq, phi, rng, count, N, M):
    """True and estimated stacked channels, each (N * M, count)."""
    h = _cn(rng, (count, N, M), 1.0 / M)
    z = _cn(rng, (count, N, M), 1.0 / M)
    tau = np.sqrt(1.0 - phi ** 2)
    g = _apply(sq, h)
    gh = _apply(sq, phi[..., None] * h + tau[..., None] * z)

    def stack(x):
        return x.transpose(1, 2, 0).reshape(N * M, count)

    return stack(g), stack(gh)


def sample_realization(config, correlations, rng):
    """Draw one block-fading realization with its CSI estimates.

    Parameters
    ----------
    config : SystemConfig
    correlations : CorrelationSet
        Must match ``config`` dimensionally.
    rng : numpy.random.Generator

    Returns
    -------
    ChannelRealization
    """
    c = config
    cs = correlations
    if cs.T_dl.shape[:2] != (c.K_D, c.N_D) or cs.T_ul.shape[:2] != (c.K_U, c.N_U) \
            or cs.T_I.shape[:2] != (c.M * c.N_D, c.N_U) or cs.M != c.M \
            or cs.T_uu.shape != (c.K_D, c.K_U):
        raise ConfigurationError("correlation set does not match config dimensions")
    M = c.M
    G_ul, Gh_ul = _draw(cs.sqrt_ul, c.phi_ul, rng, c.K_U, c.N_U, M)
    G_dl, Gh_dl = _draw(cs.sqrt_dl, c.phi_dl, rng, c.K_D, c.N_D, M)
    G_I, Gh_I = _draw(cs.sqrt_I, c.phi_I, rng, M * c.N_D, c.N_U, M)
    U = np.sqrt(cs.T_uu) * _cn(rng, (c.K_D, c.K_U), 1.0)
    return ChannelRealization(G_ul, G_dl, G_I, U, Gh_ul, Gh_dl, Gh_I)
