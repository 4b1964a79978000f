"""Unstructured cascaded-channel estimation.

Training-matrix construction (on-off / DFT / Hadamard), LS and LMMSE
estimators with their exact error covariances, element grouping, and the
multi-user orthogonal-pilot and three-stage schemes.

The stacked single-user model over T training slots is
    y = sqrt(P) Z c + n,   Z = X (Phi kron I_N),
with c = [h_d; g_1; ...; g_M] of length N(M+1) and Phi the T x (M+1)
training phase matrix whose first column belongs to the pilot slot.
"""

from dataclasses import dataclass

import numpy as np

from .channel import cascaded_channel, crandn


class Stage3Error(np.linalg.LinAlgError):
    """Singular activation block while recovering a user's relative gains."""

    def __init__(self, block_index, message=None):
        self.block_index = block_index
        super().__init__(message or f"singular sub-block in stage 3 (window {block_index})")


@dataclass
class TrainingMatrix:
    """T x (M+1) training phase configuration of a given kind."""

    phi: np.ndarray
    kind: str

    @property
    def t_slots(self):
        return self.phi.shape[0]

    @property
    def m_ris(self):
        return self.phi.shape[1] - 1


@dataclass
class StackedObservation:
    """Received training signal stacked over slots: y = [y_1; ...; y_T]."""

    y: np.ndarray
    x: np.ndarray
    p: float
    sigma2: float
    n_bs: int

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=complex).reshape(-1)
        self.x = np.asarray(self.x, dtype=complex).reshape(-1)
        if self.p <= 0 or self.sigma2 < 0:
            raise ValueError("transmit power must be > 0 and noise power >= 0")
        if np.max(np.abs(np.abs(self.x) - 1.0)) > 1e-9:
            raise ValueError("pilot symbols must be unit modulus")
        if self.y.size != self.n_bs * self.x.size:
            raise ValueError("observation length does not match N*T")

    def as_matrix(self):
        """Return the N x T slot matrix view of y."""
        return self.y.reshape(self.x.size, self.n_bs).T


@dataclass
class ChannelEstimate:
    """Estimated overall channel c_hat with optional error covariance."""

    c_hat: np.ndarray
    err_cov: np.ndarray | None = None


def _hadamard(t):
    if t < 2 or t & (t - 1):
        raise ValueError(f"Hadamard training needs T = 2^n, got {t}")
    d = np.array([[1.0, 1.0], [1.0, -1.0]])
    while d.shape[0] < t:
        d = np.block([[d, d], [d, -d]])
    return d


def next_pow2(x):
    n = 1
    while n < x:
        n *= 2
    return n


def build_training(kind, m, t=None):
    """Build the training phase matrix for ``m`` RIS elements.

    on-off: T = M+1, one element active per slot after the pilot slot.
    dft: first M+1 columns of the T-point DFT matrix, T >= M+1.
    hadamard: first M+1 columns of the Sylvester matrix D_T, T = 2^n >= M+1
    (defaults to the smallest such power of two).
    """
    if kind == "onoff":
        if t is not None and t != m + 1:
            raise ValueError(f"on-off training requires T = M+1, got T={t}")
        phi = np.zeros((m + 1, m + 1))
        phi[:, 0] = 1.0
        phi[1:, 1:] = np.eye(m)
        return TrainingMatrix(phi.astype(complex), "onoff")
    if kind == "dft":
        t = m + 1 if t is None else t
        if t < m + 1:
            raise ValueError(f"DFT training requires T >= M+1, got T={t}")
        tt, mm = np.meshgrid(np.arange(t), np.arange(m + 1), indexing="ij")
        phi = np.exp(-2j * np.pi * tt * mm / t)
        return TrainingMatrix(phi, "dft")
    if kind == "hadamard":
        t = next_pow2(m + 1) if t is None else t
        if t < m + 1:
            raise ValueError(f"Hadamard training requires T >= M+1, got T={t}")
        phi = _hadamard(t)[:, : m + 1].astype(complex)
        return TrainingMatrix(phi, "hadamard")
    raise ValueError(f"unknown training kind {kind!r}")


def overall_channel(h_d, g):
    """Stack [h_d; g_1; ...; g_M] into the length-N(M+1) vector c."""
    cols = np.column_stack([np.asarray(h_d).reshape(-1), np.asarray(g)])
    return cols.flatten(order="F")


def split_channel(c, n_bs):
    """Inverse of overall_channel: return (h_d, G)."""
    cols = np.asarray(c).reshape(-1, n_bs).T
    return cols[:, 0], cols[:, 1:]


def simulate_observation(c, training, p, sigma2, rng, x=None):
    """Forward model: y_t = sqrt(P) x_t C phi_t + n_t over all slots."""
    phi = training.phi if isinstance(training, TrainingMatrix) else np.asarray(training)
    t = phi.shape[0]
    n_bs = np.asarray(c).size // phi.shape[1]
    cols = np.asarray(c).reshape(-1, n_bs).T       # N x (M+1)
    if x is None:
        x = np.ones(t, dtype=complex)
    ymat = np.sqrt(p) * (cols @ phi.T) * np.asarray(x)[None, :]
    if sigma2 > 0:
        ymat = ymat + np.sqrt(sigma2) * crandn(rng, n_bs, t)
    return StackedObservation(ymat.T.reshape(-1), x, p, sigma2, n_bs)


def _phi_of(training):
    return training.phi if isinstance(training, TrainingMatrix) else np.asarray(training)


def ls_estimate(obs, training):
    """Least-squares channel estimate (1/sqrt(P)) (Z^H Z)^-1 Z^H y.

    Computed in the equivalent N x T matrix form; exact for any full
    column-rank training matrix.
    """
    phi = _phi_of(training)
    if np.linalg.matrix_rank(phi) < phi.shape[1]:
        raise np.linalg.LinAlgError("training matrix is rank deficient")
    ymat = obs.as_matrix() / obs.x[None, :]
    gram = phi.conj().T @ phi
    cols = np.linalg.solve(gram, phi.conj().T @ ymat.T).T / np.sqrt(obs.p)
    return ChannelEstimate(
        cols.flatten(order="F"),
        err_cov=ls_error_cov(phi, obs.p, obs.sigma2, obs.n_bs),
    )


def ls_error_cov(training, p, sigma2, n_bs):
    """Exact LS error covariance (sigma^2/P) (Phi^H Phi)^-1 kron I_N."""
    phi = _phi_of(training)
    gram = phi.conj().T @ phi
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("Phi^H Phi is singular") from None
    return (sigma2 / p) * np.kron(inv, np.eye(n_bs))


def build_ccc(cov_hd_bs, cov_hr_ris, cov_h_ris, cov_h_bs):
    """Second-moment matrix of c: blkdiag(R_hdB, (R_hrR o R_HR) kron R_HB)."""
    r_d = np.asarray(cov_hd_bs)
    had = np.asarray(cov_hr_ris) * np.asarray(cov_h_ris)
    if had.shape[0] != had.shape[1]:
        raise ValueError("RIS-side correlation matrices must be square")
    casc = np.kron(had, np.asarray(cov_h_bs))
    n = r_d.shape[0]
    out = np.zeros((n + casc.shape[0], n + casc.shape[0]), dtype=complex)
    out[:n, :n] = r_d
    out[n:, n:] = casc
    return out


def lmmse_filter(training, c_cc, p, sigma2, n_bs):
    """Precompute the LMMSE gain W and error covariance R_e.

    W left-multiplies the pilot-equalised stacked observation;
    R_e = (C_cc^-1 + (P/sigma^2) Phi^H Phi kron I_N)^-1.
    """
    phi = _phi_of(training)
    xi = np.kron(phi, np.eye(n_bs))
    inner = p * xi @ c_cc @ xi.conj().T + sigma2 * np.eye(xi.shape[0])
    # inner is Hermitian, so Xi^H inner^-1 = (inner^-1 Xi)^H
    gain = np.sqrt(p) * c_cc @ np.linalg.solve(inner, xi).conj().T
    gram = np.kron(phi.conj().T @ phi, np.eye(n_bs))
    err_cov = np.linalg.inv(np.linalg.inv(c_cc) + (p / sigma2) * gram)
    return gain, err_cov


def lmmse_estimate(obs, training, c_cc):
    """LMMSE estimate sqrt(P) C_cc Z^H (P Z C_cc Z^H + sigma^2 I)^-1 y.

    Pilot symbols are equalised first (|x_t| = 1), which leaves the noise
    statistics unchanged and reduces Z to Phi kron I_N.
    """
    gain, err_cov = lmmse_filter(training, c_cc, obs.p, obs.sigma2, obs.n_bs)
    ymat = obs.as_matrix() / obs.x[None, :]
    y_eq = ymat.T.reshape(-1)
    return ChannelEstimate(gain @ y_eq, err_cov=err_cov)


def element_group(g, j):
    """Group J adjacent RIS columns: G' = G (I_{M/J} kron 1_J)."""
    g = np.asarray(g)
    n, m = g.shape
    if m % j:
        raise ValueError(f"group size {j} does not divide M={m}")
    return g.reshape(n, m // j, j).sum(axis=2)


def eg_recover(g_prime, j):
    """Distribute each group column back equally: G ~= (G' kron 1^T)/J."""
    return np.repeat(np.asarray(g_prime), j, axis=1) / j


def mu_decorrelate(y_t, pilots):
    """Per-user separation y_{t,k} = Y_t x_k^* for orthogonal pilots.

    Pilot columns must satisfy x_k^H x_l = K delta_{kl}. The output keeps
    the raw pilot-norm scaling: user k's column equals
    K sqrt(P_k) (h_dk + G_k theta_t) plus noise of covariance K sigma^2 I.
    """
    y_t = np.asarray(y_t)
    x = np.asarray(pilots)
    k = x.shape[1]
    gram = x.conj().T @ x
    if np.max(np.abs(gram - k * np.eye(k))) > 1e-8 * k:
        raise ValueError("pilot sequences are not orthogonal with norm sqrt(K)")
    return y_t @ x.conj()


def dft_pilots(k):
    """K orthogonal length-K pilot sequences (DFT columns)."""
    tt, kk = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    return np.exp(-2j * np.pi * tt * kk / k)


def three_stage_estimate(channels, powers, sigma2, seed):
    """Multi-user estimation exploiting the shared RIS-BS channel.

    Stage 1 estimates the direct channels with the RIS off (K slots,
    orthogonal pilots). Stage 2 estimates user 1's cascaded matrix from M
    slots of DFT phase patterns. Stage 3 recovers every other user's
    relative gains h~_k: one all-on slot solved by LS when M <= N, else
    ceil(M/N) slots activating N elements at a time, the last (possibly
    partial) window solved on the matching columns.

    Returns (h_d_hat (K x N), g_hat (K x N x M)).
    """
    rng = np.random.default_rng(seed)
    h, h_r, h_d = channels.h, channels.h_r, channels.h_d
    n, m = h.shape
    k = channels.k_users
    powers = np.broadcast_to(np.asarray(powers, float), (k,))
    g_true = np.stack([cascaded_channel(h, h_r[i]) for i in range(k)])

    def noise(*shape):
        return np.sqrt(sigma2) * crandn(rng, *shape) if sigma2 > 0 else 0.0

    # stage 1: RIS off, K slots of orthogonal pilots
    x = dft_pilots(k)
    y1 = (np.sqrt(powers)[None, :] * h_d.T) @ x.T + noise(n, k)
    h_d_hat = (mu_decorrelate(y1, x) / k) / np.sqrt(powers)[None, :]
    h_d_hat = h_d_hat.T

    # stage 2: user 1 alone, M slots of DFT phase patterns
    tt, mm = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    theta_mat = np.exp(-2j * np.pi * tt * mm / m)       # row t = theta_t
    y2 = np.sqrt(powers[0]) * (h_d[0][:, None] + g_true[0] @ theta_mat.T) + noise(n, m)
    rhs = y2 / np.sqrt(powers[0]) - h_d_hat[0][:, None]
    g1_hat = np.linalg.solve(theta_mat.T, rhs.T).T

    g_hat = np.empty((k, n, m), dtype=complex)
    g_hat[0] = g1_hat
    for i in range(1, k):
        h_rel = np.empty(m, dtype=complex)
        if m <= n:
            y = np.sqrt(powers[i]) * (h_d[i] + g_true[i] @ np.ones(m)) + noise(n)
            rhs_i = y / np.sqrt(powers[i]) - h_d_hat[i]
            h_rel, *_ = np.linalg.lstsq(g1_hat, rhs_i, rcond=None)
        else:
            for w, start in enumerate(range(0, m, n)):
                stop = min(start + n, m)
                theta = np.zeros(m)
                theta[start:stop] = 1.0
                y = np.sqrt(powers[i]) * (h_d[i] + g_true[i] @ theta) + noise(n)
                rhs_i = y / np.sqrt(powers[i]) - h_d_hat[i]
                block = g1_hat[:, start:stop]
                if stop - start == n:
                    try:
                        h_rel[start:stop] = np.linalg.solve(block, rhs_i)
                    except np.linalg.LinAlgError:
                        raise Stage3Error(w) from None
                else:
                    h_rel[start:stop], *_ = np.linalg.lstsq(block, rhs_i, rcond=None)
        g_hat[i] = g1_hat * h_rel[None, :]
    return h_d_hat, g_hat


def pilot_count(method, k=1, m=1, n=1, j=1):
    """Minimum training slots for the named scheme."""
    if method == "direct":
        return k * (m + 1)
    if method == "grouping":
        return j + 1
    if method == "three_stage":
        extra = 0 if k == 1 else max(k - 1, (k - 1) * int(np.ceil(m / n)))
        return k + m + extra
    raise ValueError(f"unknown pilot scheme {method!r}")


def mse(estimate, truth):
    """Mean squared absolute error over entries."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise ValueError("shape mismatch")
    return float(np.mean(np.abs(estimate - truth) ** 2))
