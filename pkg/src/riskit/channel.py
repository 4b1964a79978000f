"""Channel generation for RIS-aided links.

Covers correlated Rician/Rayleigh fading, geometric (Saleh-Valenzuela)
channels, near-field spherical-wavefront steering, and path-loss models.
All randomness flows through explicit seeds so every draw is reproducible.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SystemDims:
    """Array dimensions: BS antennas, RIS elements, user count.

    ``m_x``/``m_z`` declare a planar RIS layout; they must multiply to
    ``m_ris``. RIS elements are indexed column-major over (m_x, m_z),
    i.e. index = ix * m_z + iz, matching the Kronecker order a_x (x) a_z.
    """

    n_bs: int
    m_ris: int
    k_users: int = 1
    m_x: int | None = None
    m_z: int | None = None

    def __post_init__(self):
        if min(self.n_bs, self.m_ris, self.k_users) < 1:
            raise ValueError("all dimension counts must be >= 1")
        if (self.m_x is None) != (self.m_z is None):
            raise ValueError("declare both m_x and m_z, or neither")
        if self.m_x is not None and self.m_x * self.m_z != self.m_ris:
            raise ValueError(
                f"planar layout {self.m_x}x{self.m_z} != m_ris={self.m_ris}"
            )

    @property
    def ris_shape(self):
        if self.m_x is None:
            raise ValueError("no planar layout declared")
        return (self.m_x, self.m_z)


@dataclass
class ChannelSet:
    """One realization: RIS->BS matrix plus per-user link vectors.

    h is N x M, h_r is K x M (user->RIS), h_d is K x N (user->BS).
    """

    h: np.ndarray
    h_r: np.ndarray
    h_d: np.ndarray

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=complex))
        self.h_r = np.atleast_2d(np.asarray(self.h_r, dtype=complex))
        self.h_d = np.atleast_2d(np.asarray(self.h_d, dtype=complex))
        n, m = self.h.shape
        if self.h_r.shape[1] != m or self.h_d.shape[1] != n:
            raise ValueError("channel dimensions are inconsistent")
        if self.h_r.shape[0] != self.h_d.shape[0]:
            raise ValueError("per-user channel counts differ")
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.h_r))
                and np.all(np.isfinite(self.h_d))):
            raise ValueError("non-finite channel entries")

    @property
    def k_users(self):
        return self.h_r.shape[0]

    def cascaded(self, k=0):
        return cascaded_channel(self.h, self.h_r[k])


@dataclass
class RicianConfig:
    """Correlated Rician fading parameters for all three links.

    ``beta``, ``alpha``, ``gamma`` are linear path-loss powers for the
    RIS-BS, user-RIS and user-BS links; ``delta``, ``epsilon``, ``varpi``
    the matching Rician factors. Covariances are Hermitian PSD with unit
    diagonal. Per-user arrays have length K; scalars are broadcast.
    """

    n_bs: int
    m_ris: int
    k_users: int = 1
    beta: float = 1.0
    alpha: np.ndarray | float = 1.0
    gamma: np.ndarray | float = 1.0
    delta: float = 0.0
    epsilon: np.ndarray | float = 0.0
    varpi: np.ndarray | float = 0.0
    los_h: np.ndarray | None = None        # N x M
    los_h_r: np.ndarray | None = None      # K x M
    los_h_d: np.ndarray | None = None      # K x N
    cov_h_ris: np.ndarray | None = None    # M x M, RIS side of H
    cov_h_bs: np.ndarray | None = None     # N x N, BS side of H
    cov_hr_ris: np.ndarray | None = None   # M x M, user->RIS link
    cov_hd_bs: np.ndarray | None = None    # N x N, user->BS link
    los_only: bool = False

    def __post_init__(self):
        k, n, m = self.k_users, self.n_bs, self.m_ris
        self.alpha = np.broadcast_to(np.asarray(self.alpha, float), (k,)).copy()
        self.gamma = np.broadcast_to(np.asarray(self.gamma, float), (k,)).copy()
        self.epsilon = np.broadcast_to(np.asarray(self.epsilon, float), (k,)).copy()
        self.varpi = np.broadcast_to(np.asarray(self.varpi, float), (k,)).copy()
        for name in ("delta",):
            if getattr(self, name) < 0:
                raise ValueError("Rician factors must be >= 0")
        if np.any(self.epsilon < 0) or np.any(self.varpi < 0):
            raise ValueError("Rician factors must be >= 0")
        if self.los_h is None:
            self.los_h = np.ones((n, m), dtype=complex)
        if self.los_h_r is None:
            self.los_h_r = np.ones((k, m), dtype=complex)
        if self.los_h_d is None:
            self.los_h_d = np.ones((k, n), dtype=complex)
        self.los_h = np.asarray(self.los_h, dtype=complex).reshape(n, m)
        self.los_h_r = np.atleast_2d(np.asarray(self.los_h_r, dtype=complex)).reshape(k, m)
        self.los_h_d = np.atleast_2d(np.asarray(self.los_h_d, dtype=complex)).reshape(k, n)
        if self.cov_h_ris is None:
            self.cov_h_ris = np.eye(m)
        if self.cov_h_bs is None:
            self.cov_h_bs = np.eye(n)
        if self.cov_hr_ris is None:
            self.cov_hr_ris = np.eye(m)
        if self.cov_hd_bs is None:
            self.cov_hd_bs = np.eye(n)
        for cov in (self.cov_h_ris, self.cov_h_bs, self.cov_hr_ris, self.cov_hd_bs):
            _check_correlation(cov)


def _check_correlation(r, tol=1e-8):
    r = np.asarray(r)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("correlation matrix must be square")
    if np.max(np.abs(r - r.conj().T)) > tol:
        raise ValueError("correlation matrix must be Hermitian")
    if np.max(np.abs(np.diag(r) - 1.0)) > tol:
        raise ValueError("correlation matrix must have unit diagonal")


def exp_correlation_matrix(n, rho):
    """Exponential spatial correlation: entry (i, j) = rho^|i-j|."""
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"correlation coefficient must be in [0, 1), got {rho}")
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def matrix_sqrt_psd(a, tol=1e-10):
    """Square root of a Hermitian PSD matrix.

    Cholesky when positive definite, otherwise eigendecomposition with
    negative eigenvalues clipped at zero (near-singular correlation
    matrices at rho -> 1 fall in the second branch).
    """
    a = np.asarray(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(a)
        if np.min(w) < -tol * max(1.0, np.max(np.abs(w))):
            raise np.linalg.LinAlgError(
                f"matrix is not PSD (min eigenvalue {np.min(w):.3e})"
            )
        return v * np.sqrt(np.clip(w, 0.0, None))


def crandn(rng, *shape):
    """i.i.d. standard circularly-symmetric complex Gaussians."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def gen_unstructured(dims, cfg, seed):
    """Draw one correlated-Rician ChannelSet, deterministic in the seed.

    NLoS parts are colored by matrix square roots of the configured
    covariances; LoS/NLoS parts mix with weights sqrt(kappa/(1+kappa))
    and sqrt(1/(1+kappa)) per link. ``cfg.los_only`` short-circuits to
    the LoS components scaled by the path-loss powers.
    """
    n, m, k = dims.n_bs, dims.m_ris, dims.k_users
    if (cfg.n_bs, cfg.m_ris, cfg.k_users) != (n, m, k):
        raise ValueError("RicianConfig dimensions do not match SystemDims")
    if cfg.los_only:
        h = np.sqrt(cfg.beta) * cfg.los_h
        h_r = np.sqrt(cfg.alpha)[:, None] * cfg.los_h_r
        h_d = np.sqrt(cfg.gamma)[:, None] * cfg.los_h_d
        return ChannelSet(h, h_r, h_d)

    rng = np.random.default_rng(seed)
    sq_bs = matrix_sqrt_psd(cfg.cov_h_bs)
    sq_ris = matrix_sqrt_psd(cfg.cov_h_ris)
    sq_hr = matrix_sqrt_psd(cfg.cov_hr_ris)
    sq_hd = matrix_sqrt_psd(cfg.cov_hd_bs)

    h_nlos = sq_bs @ crandn(rng, n, m) @ sq_ris.conj().T
    w_los = np.sqrt(cfg.delta / (1.0 + cfg.delta))
    w_nlos = np.sqrt(1.0 / (1.0 + cfg.delta))
    h = np.sqrt(cfg.beta) * (w_los * cfg.los_h + w_nlos * h_nlos)

    h_r = np.empty((k, m), dtype=complex)
    h_d = np.empty((k, n), dtype=complex)
    for i in range(k):
        eps, varpi = cfg.epsilon[i], cfg.varpi[i]
        nlos_r = sq_hr @ crandn(rng, m)
        h_r[i] = np.sqrt(cfg.alpha[i]) * (
            np.sqrt(eps / (1.0 + eps)) * cfg.los_h_r[i]
            + np.sqrt(1.0 / (1.0 + eps)) * nlos_r
        )
        nlos_d = sq_hd @ crandn(rng, n)
        h_d[i] = np.sqrt(cfg.gamma[i]) * (
            np.sqrt(varpi / (1.0 + varpi)) * cfg.los_h_d[i]
            + np.sqrt(1.0 / (1.0 + varpi)) * nlos_d
        )
    return ChannelSet(h, h_r, h_d)


def ula_steering(omega, n):
    """Uniform linear array response: entry k = exp(j*k*omega), k = 0..n-1."""
    if n < 1:
        raise ValueError("array size must be >= 1")
    return np.exp(1j * omega * np.arange(n))


def upa_steering(omega_x, omega_z, m_x, m_z):
    """Planar array response a_x(omega_x) kron a_z(omega_z)."""
    return np.kron(ula_steering(omega_x, m_x), ula_steering(omega_z, m_z))


@dataclass
class SvParams:
    """Geometric multipath parameters for the RIS-BS and user-RIS links.

    ``omega_bh`` holds BS-side spatial frequencies (one per RIS-BS path),
    ``omega_rh`` / ``omega_rh_r`` the (omega_x, omega_z) pairs at the RIS
    for the RIS-BS and user-RIS paths.
    """

    gains_br: np.ndarray          # complex, length L_BR
    gains_ru: np.ndarray          # complex, length L_RU
    omega_bh: np.ndarray          # length L_BR
    omega_rh: np.ndarray          # L_BR x 2
    omega_rh_r: np.ndarray        # L_RU x 2

    def __post_init__(self):
        self.gains_br = np.atleast_1d(np.asarray(self.gains_br, dtype=complex))
        self.gains_ru = np.atleast_1d(np.asarray(self.gains_ru, dtype=complex))
        self.omega_bh = np.atleast_1d(np.asarray(self.omega_bh, dtype=float))
        self.omega_rh = np.atleast_2d(np.asarray(self.omega_rh, dtype=float))
        self.omega_rh_r = np.atleast_2d(np.asarray(self.omega_rh_r, dtype=float))
        if len(self.omega_bh) != len(self.gains_br) or self.omega_rh.shape != (len(self.gains_br), 2):
            raise ValueError("RIS-BS path counts do not match gain vector")
        if self.omega_rh_r.shape != (len(self.gains_ru), 2):
            raise ValueError("user-RIS path counts do not match gain vector")
        for w in (self.omega_bh, self.omega_rh, self.omega_rh_r):
            if np.any(w < -2 * np.pi) or np.any(w >= 2 * np.pi):
                raise ValueError("spatial frequencies must lie in [-2pi, 2pi)")

    @property
    def l_br(self):
        return len(self.gains_br)

    @property
    def l_ru(self):
        return len(self.gains_ru)


def sv_channels(dims, params):
    """Single-user geometric channels: H from L_BR paths, h_r from L_RU.

    The direct user-BS channel is set to zero (blocked at high bands).
    """
    m_x, m_z = dims.ris_shape
    a_b = np.stack([ula_steering(w, dims.n_bs) for w in params.omega_bh], axis=1)
    a_r = np.stack(
        [upa_steering(wx, wz, m_x, m_z) for wx, wz in params.omega_rh], axis=1
    )
    h = a_b @ np.diag(params.gains_br) @ a_r.conj().T
    a_rr = np.stack(
        [upa_steering(wx, wz, m_x, m_z) for wx, wz in params.omega_rh_r], axis=1
    )
    h_r = a_rr @ params.gains_ru
    return ChannelSet(h, h_r[None, :], np.zeros((1, dims.n_bs), dtype=complex))


def cascaded_channel(h, h_r):
    """Cascaded matrix G = H diag(h_r): column m = h_r[m] * H[:, m].

    H theta-diag h_r == G theta for every phase vector theta; G absorbs
    the scaling ambiguity between the two individual links.
    """
    h = np.asarray(h)
    h_r = np.asarray(h_r).reshape(-1)
    if h.shape[1] != h_r.shape[0]:
        raise ValueError("column count of H must equal length of h_r")
    return h * h_r[None, :]


@dataclass
class NearFieldScene:
    """Geometry for spherical-wavefront modelling around a planar RIS.

    The RIS lies in the XOZ plane centered at ``ris_origin`` with element
    pitch ``spacing`` (defaults to half-wavelength when None).
    """

    ris_origin: np.ndarray
    m_x: int
    m_z: int
    wavelength: float
    spacing: float | None = None
    bs_positions: np.ndarray | None = None   # N x 3
    mu_position: np.ndarray | None = None
    scatterer_positions: np.ndarray | None = None
    gains: np.ndarray | None = None
    bs_gain: complex = 1.0

    def __post_init__(self):
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.spacing is None:
            self.spacing = self.wavelength / 2.0
        if self.spacing <= 0:
            raise ValueError("element spacing must be positive")
        self.ris_origin = np.asarray(self.ris_origin, dtype=float).reshape(3)
        if not np.all(np.isfinite(self.ris_origin)):
            raise ValueError("positions must be finite")

    @property
    def m_ris(self):
        return self.m_x * self.m_z

    def element_positions(self):
        """3-D element coordinates, index = ix * m_z + iz (z fastest)."""
        ix = np.arange(self.m_x) - (self.m_x - 1) / 2.0
        iz = np.arange(self.m_z) - (self.m_z - 1) / 2.0
        xs = np.repeat(ix, self.m_z) * self.spacing
        zs = np.tile(iz, self.m_x) * self.spacing
        pos = np.zeros((self.m_ris, 3))
        pos[:, 0] = xs
        pos[:, 2] = zs
        return pos + self.ris_origin[None, :]

    @property
    def aperture(self):
        """Maximum aperture (panel diagonal) in meters."""
        lx = (self.m_x - 1) * self.spacing
        lz = (self.m_z - 1) * self.spacing
        return float(np.hypot(lx, lz))


def nearfield_steering(scene, source):
    """Spherical-wavefront RIS response for a source at a 3-D point.

    Entry for element (m, n) carries phase -2*pi/lambda times the exact
    Euclidean distance from the source to that element.
    """
    source = np.asarray(source, dtype=float).reshape(3)
    d = np.linalg.norm(scene.element_positions() - source[None, :], axis=1)
    return np.exp(-2j * np.pi * d / scene.wavelength)


def nearfield_steering_points(scene, points):
    """Vectorized nearfield_steering for an (n, 3) array of sources."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    epos = scene.element_positions()
    out = np.empty((points.shape[0], epos.shape[0]), dtype=complex)
    chunk = max(1, int(2e6 // max(1, epos.shape[0])))
    for i in range(0, points.shape[0], chunk):
        blk = points[i:i + chunk]
        d = np.linalg.norm(blk[:, None, :] - epos[None, :, :], axis=2)
        out[i:i + chunk] = np.exp(-2j * np.pi * d / scene.wavelength)
    return out


def nearfield_bs_ris_channel(scene):
    """LoS BS-RIS matrix: common gain, per-pair spherical phase (+j sign)."""
    if scene.bs_positions is None:
        raise ValueError("scene has no BS antenna positions")
    bs = np.asarray(scene.bs_positions, dtype=float).reshape(-1, 3)
    epos = scene.element_positions()
    r = np.linalg.norm(bs[:, None, :] - epos[None, :, :], axis=2)
    return scene.bs_gain * np.exp(2j * np.pi * r / scene.wavelength)


def fraunhofer_distance(aperture, wavelength):
    """Far-field boundary 2 L^2 / lambda."""
    if aperture <= 0 or wavelength <= 0:
        raise ValueError("aperture and wavelength must be positive")
    return 2.0 * aperture ** 2 / wavelength


def pathloss_db(kind, distances, f_c, exponent, shadow_db=0.0):
    """Path loss in dB for the direct or the RIS-reflected link.

    direct:    10log10(64 pi^3) + 10a log10(d) + 20log10(f_c) + shadow
    reflected: 10log10(64 pi^3) + 10a log10(d_br * d_rm) + 40log10(f_c) + shadow
    """
    if f_c <= 0:
        raise ValueError("carrier frequency must be positive")
    const = 10.0 * np.log10(64.0 * np.pi ** 3)
    if kind == "direct":
        d = float(np.asarray(distances).reshape(()))
        if d <= 0:
            raise ValueError("distance must be positive")
        return const + 10.0 * exponent * np.log10(d) + 20.0 * np.log10(f_c) + shadow_db
    if kind == "reflected":
        d_br, d_rm = np.asarray(distances, dtype=float).reshape(2)
        if d_br <= 0 or d_rm <= 0:
            raise ValueError("distances must be positive")
        return (const + 10.0 * exponent * np.log10(d_br * d_rm)
                + 40.0 * np.log10(f_c) + shadow_db)
    raise ValueError(f"unknown path-loss kind {kind!r}")
